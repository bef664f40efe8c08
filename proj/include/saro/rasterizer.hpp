#pragma once

#include <optional>
#include <vector>

#include "saro/common.hpp"
#include "saro/gaussian4d.hpp"

namespace saro {

// Renderable snapshot of one primitive at a fixed sampling time. Covariance
// stays factored (unit quaternion + positive scale); SH is packed densely as
// [channel * coeff_count + coeff].
struct Gaussian3D {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);
    Vec3 scale = Vec3::Ones();
    double opacity = 0.0;
    std::array<double, 3 * kMaxShCoeffs> sh{};
};

// Pinhole camera, OpenCV axes: x right, y down, z forward. Pixel (px, py)
// samples at center (px + 0.5, py + 0.5).
struct Camera {
    Mat4 world_to_cam = Mat4::Identity();
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    double near_plane = 0.01;

    void validate() const; // throws on non-rigid rotation or bad intrinsics
    Mat3 rotation() const { return world_to_cam.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_cam.topRightCorner<3, 1>(); }
    Vec3 position() const { return -rotation().transpose() * translation(); }
};

Camera make_lookat_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg,
                          int width, int height, double near_plane = 0.01);

struct Splat2D {
    Vec2 mean = Vec2::Zero();            // pixel coordinates
    double cov_a = 1, cov_b = 0, cov_c = 1; // [[a, b], [b, c]] after dilation
    double depth = 0;
    double opacity = 0;
    Vec3 color = Vec3::Zero();
    int prim_index = 0;
};

// View-dependent color: real SH basis up to the degree implied by coeff
// count, plus the 0.5 offset, clamped to be non-negative. preclamp (optional)
// receives the pre-clamp value needed by the backward pass.
Vec3 sh_to_color(const double* sh, int coeff_count, const Vec3& dir, Vec3* preclamp = nullptr);
void sh_to_color_backward(const double* sh, int coeff_count, const Vec3& dir,
                          const Vec3& preclamp, const Vec3& d_color, double* d_sh, Vec3* d_dir);

constexpr double kCovDilation = 0.3;        // screen-space low-pass, pixels^2
constexpr double kShBasis0 = 0.28209479177387814; // Y00; color = 0.5 + Y00 * dc
constexpr double kAlphaClampMax = 0.99;
constexpr double kContributionMin = 1.0 / 255.0;
constexpr double kTransmittanceMin = 1e-4;
constexpr double kQuadFormCutoff = 9.0;     // 3-sigma footprint
constexpr int kTileSize = 16;

struct ProjectCache {
    Vec3 color_preclamp = Vec3::Zero();
};

// EWA projection of one 3D Gaussian. nullopt when the primitive is behind
// the near plane or its 3-sigma footprint misses the screen.
std::optional<Splat2D> project_splat(const Gaussian3D& g, const Camera& cam, int sh_coeffs,
                                     int prim_index, ProjectCache* cache = nullptr);

struct SplatGrad {
    Vec2 d_mean = Vec2::Zero();
    double d_cov_a = 0, d_cov_b = 0, d_cov_c = 0;
    double d_opacity = 0;
    Vec3 d_color = Vec3::Zero();
};

struct Gaussian3DGrad {
    Vec3 d_position = Vec3::Zero();
    Vec3 d_scale = Vec3::Zero();
    Vec4 d_rotation = Vec4::Zero(); // w.r.t. the unit quaternion
    double d_opacity = 0.0;
    std::array<double, 3 * kMaxShCoeffs> d_sh{};
};

// Pulls a splat-space gradient back onto the 3D Gaussian. d_depth covers
// uses of Splat2D::depth beyond compositing weights (none by default).
Gaussian3DGrad project_splat_backward(const Gaussian3D& g, const Camera& cam, int sh_coeffs,
                                      const ProjectCache& cache, const SplatGrad& up,
                                      double d_depth = 0.0);

struct RasterizeOptions {
    Vec3 background = Vec3::Zero();
    bool want_depth = false;
    bool count_blends = false; // fill RasterizeResult::blend_counts
};

struct RasterizeResult {
    Image color;
    std::vector<double> depth; // alpha-weighted mean depth; 0 where nothing blended
    std::vector<uint32_t> blend_counts; // per input splat: pixels it contributed to
};

// Tile-parallel front-to-back compositor. Splats are globally sorted by
// (depth, prim_index, input position); per-pixel contribution w = min(0.99,
// opacity * exp(-q/2)) with q the conic quadratic form, skipped when q > 9 or
// w < 1/255; blending stops once transmittance drops below 1e-4 and the
// leftover transmittance multiplies the background.
RasterizeResult rasterize(const std::vector<Splat2D>& splats, int width, int height,
                          const RasterizeOptions& opts);

// Reference renderer: every pixel walks the full sorted splat list under the
// same contribution rule. Matches rasterize bitwise.
RasterizeResult rasterize_oracle(const std::vector<Splat2D>& splats, int width, int height,
                                 const RasterizeOptions& opts);

// d(loss)/d(splat) for upstream image gradient d_image. Deterministic: tiles
// accumulate locally and merge in tile order.
std::vector<SplatGrad> rasterize_backward(const std::vector<Splat2D>& splats, int width,
                                          int height, const RasterizeOptions& opts,
                                          const Image& d_image);

} // namespace saro
