#pragma once

#include "saro/scene_io.hpp"

namespace saro {

// Lifespan of every primitive from the current field + lifespan head.
std::vector<double> model_lifespans(Model& model);

// Otsu's threshold over the log-lifespan histogram. degenerate is set when
// the values span less than ~1e-6 relative range; the threshold then falls
// back to just above the maximum (single static class).
struct LifespanThreshold {
    double sigma_star = 0.0;
    bool degenerate = false;
};
LifespanThreshold otsu_lifespan_threshold(const std::vector<double>& sigmas);

struct Segmentation {
    std::vector<uint8_t> dynamic; // 1 = dynamic (sigma < sigma_star)
    double sigma_star = 0.0;
    bool degenerate = false;
    size_t n_dynamic = 0, n_static = 0;
};

// threshold <= 0 selects the Otsu default.
Segmentation segment_by_lifespan(Model& model, double threshold = 0.0);

// Label accuracy against a teacher scene: each student primitive takes the
// label of the nearest teacher primitive (positions compared at the student's
// tau) as ground truth.
double segmentation_accuracy(const Model& model, const Segmentation& seg,
                             const TeacherScene& teacher);

struct EvalReport {
    double psnr = 0.0;
    double ssim = 0.0;        // per-channel mean
    double dssim = 0.0;       // (1 - ssim) / 2
    double ssim_global = 0.0; // grayscale variant
    double dssim_global = 0.0;
    double render_ms_per_frame = 0.0;
    size_t prim_count = 0;
    size_t n_frames = 0;
};

// Averages over the frames tagged `split`. Throws on an empty split or a
// dataset without loaded images.
EvalReport evaluate(Model& model, const Dataset& data, const std::string& split,
                    const Vec3& background = Vec3::Zero());

std::string eval_report_json(const EvalReport& report);

} // namespace saro
