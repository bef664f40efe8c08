#pragma once

#include "saro/losses.hpp"
#include "saro/projection.hpp"

namespace saro {

struct ViewSpec {
    Camera cam;
    double t0 = 0.0;
    const Image* target = nullptr;
};

// Gradient buffers for every trainable tensor in a Model. Cloud entries are
// indexed per primitive; SH rows use the kMaxShCoeffs stride of Gaussian4D.
struct ParamGrads {
    std::vector<Vec4> position;
    std::vector<Vec3> log_scale;
    std::vector<Vec4> rotation;
    std::vector<double> opacity_logit;
    std::vector<std::array<double, 3 * kMaxShCoeffs>> sh;
    FieldGradients field;
    std::vector<double> decoder;

    void init(const Model& model);
    void zero();
};

struct LossTerms {
    double l1 = 0.0;
    double dssim = 0.0;
    double l_sr = 0.0;
    double total = 0.0;
};

// One differentiable evaluation of the model over a batch of views: forward
// renders, image losses averaged across the batch, the scale-residual
// regularizer, and (optionally) the full analytic backward pass.
//
// The heavy per-primitive decode (feature query, lifespan, trunk projection)
// runs once per batch and is shared by all views. During warm-up the state
// value is pinned to 1 and residuals decode at dt = 0. Primitives whose
// composed opacity cannot reach the rasterizer's contribution floor are
// dropped before decoding; the floor makes that exact for values and
// gradients alike.
class Pipeline {
  public:
    Pipeline(Model& model, const LossWeights& weights, const Vec3& background);

    // views must be nonempty and carry targets. Pass grads to accumulate the
    // backward pass (buffers must be init()-ed for this model).
    LossTerms run(const std::vector<ViewSpec>& views, bool warmup, ParamGrads* grads);

    // Rendered image of view v from the last run (debug/metrics).
    const Image& last_image(size_t v) const { return views_[v].image; }

  private:
    struct PrimShared {
        FieldQueryCache fq;
        LifespanCache lc;
        ResidualCache rc0; // dt = 0 decode for the regularizer
        ResidualBundle res0;
        double sigma = 0.0;
        double lsr_norm = 0.0;
    };
    struct PrimView {
        ResidualBundle res;
        ResidualCache rc;
        ProjectCache pc;
        double gamma = 1.0;
        int splat = -1; // index into the view's splat list, -1 when absent
    };
    struct ViewWork {
        std::vector<PrimView> prims;
        std::vector<Splat2D> splats;
        Image image;
        double l1 = 0.0, ssim_val = 0.0;
    };

    Model& model_;
    LossWeights weights_;
    Vec3 background_;
    std::vector<double> feat_;    // [prim * M + c]
    std::vector<double> zf_;      // [prim * kTrunkWidth + c]
    std::vector<PrimShared> shared_;
    std::vector<ViewWork> views_;

    void prepare(bool warmup);
    void forward_view(const ViewSpec& spec, ViewWork& work, bool warmup);
    void backward(const std::vector<ViewSpec>& views, bool warmup, ParamGrads& grads);
};

} // namespace saro
