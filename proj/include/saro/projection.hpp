#pragma once

#include "saro/decoder.hpp"
#include "saro/gaussian4d.hpp"
#include "saro/rasterizer.hpp"
#include "saro/residual_field.hpp"
#include "saro/temporal.hpp"

namespace saro {

// The trainable scene: primitive cloud, residual feature field, and decoder
// heads, plus the temporal sharpness shared by every state evaluation.
struct Model {
    GaussianCloud cloud;
    HexplaneField field;
    Decoder decoder;
    double state_sharpness = kDefaultSharpness;

    Model(GaussianCloud c, int feat_dim, int spatial_res, int time_res, int level_count)
        : cloud(std::move(c)),
          field(feat_dim, spatial_res, time_res, level_count, cloud.bbox),
          decoder(feat_dim, cloud.sh_coeffs()) {}

    // Hash over every trainable value; detects stale bakes.
    uint64_t param_hash() const;
};

// Composes the raw 4D attributes with decoded residuals and the temporal
// state value into a renderable 3D snapshot. Scale adds in the log domain,
// rotation before renormalization, opacity multiplies by gamma.
Gaussian3D compose_gaussian3d(const Gaussian4D& g, int sh_coeffs, const ResidualBundle& res,
                              double gamma);

struct ComposeGrad {
    Vec4 d_position = Vec4::Zero(); // [3] is tau; only the state chain fills it here
    Vec3 d_log_scale = Vec3::Zero();
    Vec4 d_rotation = Vec4::Zero(); // raw (unnormalized) quaternion
    double d_opacity_logit = 0.0;
    std::array<double, 3 * kMaxShCoeffs> d_sh{};
    double d_gamma = 0.0;
    ResidualBundle d_res;
};

ComposeGrad compose_backward(const Gaussian4D& g, int sh_coeffs, const ResidualBundle& res,
                             double gamma, const Gaussian3DGrad& up);

struct RenderStats {
    size_t submitted = 0; // splats surviving camera culling
    size_t blended = 0;   // primitives contributing to >= 1 pixel; needs opts.count_blends
};

// Inference render at time t0. Every primitive is decoded and submitted;
// warmup forces gamma to 1 and decodes at dt = 0.
RasterizeResult render_model(const Model& model, const Camera& cam, double t0,
                             const RasterizeOptions& opts, bool warmup = false,
                             RenderStats* stats = nullptr);

// Per-primitive precomputed residual features and lifespans. Valid only
// while the model parameters stay untouched (checked by hash).
struct BakedCloud {
    std::vector<double> features; // [prim * feat_dim + c]
    std::vector<double> sigma;    // [prim]
    int feat_dim = 0;
    uint64_t param_hash = 0;
};

BakedCloud bake(const Model& model);

constexpr double kBakeThresholdDefault = 0.001;

// Same output as render_model except primitives whose state value at t0
// falls below threshold are dropped before decoding.
RasterizeResult render_from_baked(const Model& model, const BakedCloud& baked, const Camera& cam,
                                  double t0, const RasterizeOptions& opts,
                                  double threshold = kBakeThresholdDefault,
                                  RenderStats* stats = nullptr);

} // namespace saro
