#pragma once

#include <string>
#include <utility>

#include "saro/projection.hpp"

namespace saro {

// --- Image files ---------------------------------------------------------

// 8-bit RGB PNG. Values are clamped to [0,1] and rounded on write.
void write_png8(const std::string& path, const Image& img);
Image read_png8(const std::string& path);

// Little-endian float32 PFM ("PF", bottom-up rows, scale -1.0). Lossless for
// float32 payloads, used where tests need exact pixels.
void write_pfm(const std::string& path, const Image& img);
Image read_pfm(const std::string& path);

// Single-channel PFM ("Pf") for depth maps.
void write_pfm_gray(const std::string& path, const std::vector<double>& data, int width,
                    int height);

// Dispatch on extension (.png / .pfm).
Image read_image(const std::string& path);

// ASCII PLY vertex positions; colors read from uchar red/green/blue when
// present, otherwise mid-gray.
void read_ply_points(const std::string& path, std::vector<Vec3>& points,
                     std::vector<Vec3>& colors);

// --- Dataset -------------------------------------------------------------

struct FrameRef {
    int camera = 0;
    double time = 0.0;
    std::string image;        // path relative to the dataset directory
    std::string split = "train";
};

// A posed multi-camera image sequence plus the scene bounds that seed the
// model. All cameras share one intrinsics block; frames reference cameras by
// index and carry a time in [0,1].
struct Dataset {
    std::vector<Camera> cameras;
    std::vector<Mat4> cam_to_world; // as authored; kept so manifests round-trip bitwise
    std::vector<FrameRef> frames;
    std::vector<Image> images; // aligned with frames; empty when not loaded
    Bbox bbox;
    std::vector<Vec3> points, point_colors; // optional init point cloud

    std::vector<size_t> split_indices(const std::string& split) const;
};

// Reads dir/manifest.json and decodes every referenced image (parallel).
Dataset load_dataset(const std::string& dir);

// Manifest only: cameras, frames, bbox. For render frame lists.
Dataset load_frame_list(const std::string& path);

void save_manifest(const std::string& dir, const Dataset& data);

// --- Teacher scenes ------------------------------------------------------

// Ground-truth primitive with an analytic trajectory: linear drift plus one
// sinusoid, and an explicit temporal window (tau, sigma).
struct TeacherPrim {
    Vec3 base = Vec3::Zero();
    Vec3 lin_vel = Vec3::Zero();
    Vec3 sin_amp = Vec3::Zero();
    double sin_freq = 0.0, sin_phase = 0.0;
    double tau = 0.5, sigma = 1.0;
    Vec3 scale = Vec3::Ones();
    Vec4 rotation = Vec4(1, 0, 0, 0);
    double opacity = 1.0;
    Vec3 color = Vec3::Ones();
    bool dynamic = false;

    Vec3 position_at(double t) const;
};

struct TeacherScene {
    std::vector<TeacherPrim> prims;
    double state_sharpness = kDefaultSharpness;
};

// Deterministic in (seed, counts). About 30% of primitives get short
// lifespans (survival window under 30% of the timeline) and motion; the rest
// are static with near-constant state value. Cameras sit on a ring around
// the origin; the last camera is tagged "test".
struct TeacherBundle {
    Dataset dataset; // images rendered, frames populated
    TeacherScene teacher;
};
TeacherBundle generate_teacher_scene(uint64_t seed, int n_primitives, int n_frames,
                                     int n_cameras, int resolution);

Image render_teacher(const TeacherScene& scene, const Camera& cam, double t,
                     const Vec3& background = Vec3::Zero());

// Writes manifest + PNG frames + teacher.json into dir.
void save_teacher_bundle(const std::string& dir, const TeacherBundle& bundle);
TeacherScene load_teacher_json(const std::string& path);

// --- Checkpoints ---------------------------------------------------------

// In-memory image of the on-disk format: magic "SARO", u32 version, then
// tagged sections ([u32 tag length][tag][u64 payload size][payload]),
// little-endian, numeric arrays as float32. Unknown sections are skipped on
// load. Cloud/field/decoder arrays hold doubles here; the writer truncates.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    uint64_t iteration = 0;
    double state_sharpness = kDefaultSharpness;
    int feat_dim = 0, spatial_res = 0, time_res = 0, level_count = 0;
    GaussianCloud cloud;
    std::vector<std::vector<double>> spatial0;  // 3 level-0 planes, row-major
    std::vector<std::vector<double>> spacetime; // 3 planes
    std::vector<double> decoder_params;
    std::string rng_state;
    std::vector<std::pair<std::string, std::string>> config; // sorted key=value

    bool has_bake = false;
    std::vector<double> bake_features;
    std::vector<double> bake_sigma;
    uint64_t bake_hash = 0;
};

// Mutable because it rebuilds stale thumbnail levels before reading planes.
Checkpoint make_checkpoint(Model& model, uint64_t iteration, const std::string& rng_state,
                           std::vector<std::pair<std::string, std::string>> config);
Model restore_model(const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

} // namespace saro
