#pragma once

#include <array>
#include <vector>

#include "saro/common.hpp"
#include "saro/gaussian4d.hpp"

namespace saro {

// Per-primitive attribute deltas decoded from the residual feature. Scale is
// additive in the log domain, rotation additive before renormalization, SH
// packed as [channel * coeff_count + coeff]. Doubles as the upstream-gradient
// container in the backward pass.
struct ResidualBundle {
    Vec3 d_position = Vec3::Zero();
    Vec3 d_scale = Vec3::Zero();
    Vec4 d_rotation = Vec4::Zero();
    std::array<double, 3 * kMaxShCoeffs> d_sh{};

    void set_zero() {
        d_position.setZero();
        d_scale.setZero();
        d_rotation.setZero();
        d_sh.fill(0.0);
    }
};

struct LifespanCache {
    std::array<double, 32> h{};
    double raw = 0.0;
};

struct ResidualCache {
    std::array<double, 64> h1{};
    std::array<double, 64> h2{};
    std::array<double, 8> emb{};
};

// The two decoding heads. A lifespan head maps the residual feature to a
// positive temporal extent; a residual trunk maps (feature, t - tau) to
// attribute deltas. The feature-to-trunk projection is factored out so one
// primitive's projection can be reused across several sampling times.
//
// Parameters live in one flat vector (layout fixed by the block table in the
// implementation); gradient buffers share that layout.
class Decoder {
  public:
    static constexpr int kTrunkWidth = 64;
    static constexpr int kLifespanHidden = 32;
    static constexpr int kEmbedFreqs = 4;
    static constexpr int kEmbedDim = 2 * kEmbedFreqs;
    static constexpr double kSigmaMin = 1e-3;

    Decoder(int feat_dim, int sh_coeffs);

    int feat_dim() const { return feat_dim_; }
    int sh_coeffs() const { return sh_coeffs_; }

    // Hidden layers get fan-in-scaled uniform weights; final layers start at
    // zero so decoding is the identity residual until training moves them.
    void init_weights(uint64_t seed);

    double lifespan(const double* f, LifespanCache* cache = nullptr) const;
    void backward_lifespan(const double* f, const LifespanCache& cache, double d_sigma,
                           double* grad_params, double* df) const;

    // zf = trunk projection of f; shared across residual decodes of one primitive.
    void trunk_zf(const double* f, double* zf) const;
    void backward_trunk_zf(const double* f, const double* d_zf, double* grad_params,
                           double* df) const;

    void residuals(const double* zf, double dt, ResidualBundle& out,
                   ResidualCache* cache = nullptr) const;
    // Accumulates into grad_params / d_zf / d_dt; any of them may be null.
    void backward_residuals(const double* zf, double dt, const ResidualCache& cache,
                            const ResidualBundle& d_out, double* grad_params, double* d_zf,
                            double* d_dt) const;

    // Convenience for single-shot use (tests, one-off decodes).
    void residuals_full(const double* f, double dt, ResidualBundle& out,
                        ResidualCache* cache = nullptr) const;

    size_t trainable_count() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

  private:
    struct Block {
        size_t off = 0;
        int rows = 0, cols = 0; // cols == 0 marks a bias vector
    };

    int feat_dim_;
    int sh_coeffs_;
    std::vector<double> params_;
    Block fw1_w_, fw1_b_, fw2_w_, fw2_b_;
    Block t1f_w_, t1e_w_, t1e_b_, t2_w_, t2_b_;
    Block hp_w_, hp_b_, hc_w_, hc_b_, hs_w_, hs_b_;

    Block alloc(int rows, int cols, size_t& cursor);
};

// Sinusoidal embedding of the time offset and its derivative.
void embed_dt(double dt, double* emb);
double embed_dt_dot(const double* d_emb, double dt);

} // namespace saro
