#include "saro/decoder.hpp"

#include <cstring>

namespace saro {

namespace {

// y[o] (+)= W x + b over a flat parameter block.
void matvec(const double* w, const double* b, const double* x, int rows, int cols, double* y) {
    for (int o = 0; o < rows; ++o) {
        const double* row = w + size_t(o) * cols;
        double acc = b ? b[o] : 0.0;
        for (int i = 0; i < cols; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

void matvec_add(const double* w, const double* x, int rows, int cols, double* y) {
    for (int o = 0; o < rows; ++o) {
        const double* row = w + size_t(o) * cols;
        double acc = 0.0;
        for (int i = 0; i < cols; ++i) acc += row[i] * x[i];
        y[o] += acc;
    }
}

// dx += W^T dy, dW += dy x^T, db += dy. Any output may be null.
void matvec_backward(const double* w, const double* x, const double* dy, int rows, int cols,
                     double* dw, double* db, double* dx) {
    for (int o = 0; o < rows; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        const double* row = w + size_t(o) * cols;
        if (dw) {
            double* drow = dw + size_t(o) * cols;
            for (int i = 0; i < cols; ++i) drow[i] += g * x[i];
        }
        if (dx)
            for (int i = 0; i < cols; ++i) dx[i] += g * row[i];
        if (db) db[o] += g;
    }
}

void relu_inplace(double* x, int n) {
    for (int i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

// Masks dy by the forward activation pattern (post-ReLU values).
void relu_mask(const double* h, double* dy, int n) {
    for (int i = 0; i < n; ++i)
        if (h[i] <= 0.0) dy[i] = 0.0;
}

} // namespace

void embed_dt(double dt, double* emb) {
    for (int j = 0; j < Decoder::kEmbedFreqs; ++j) {
        double w = std::ldexp(M_PI, j); // 2^j * pi
        emb[2 * j] = std::sin(w * dt);
        emb[2 * j + 1] = std::cos(w * dt);
    }
}

double embed_dt_dot(const double* d_emb, double dt) {
    double acc = 0.0;
    for (int j = 0; j < Decoder::kEmbedFreqs; ++j) {
        double w = std::ldexp(M_PI, j);
        acc += d_emb[2 * j] * w * std::cos(w * dt);
        acc -= d_emb[2 * j + 1] * w * std::sin(w * dt);
    }
    return acc;
}

Decoder::Block Decoder::alloc(int rows, int cols, size_t& cursor) {
    Block b;
    b.off = cursor;
    b.rows = rows;
    b.cols = cols;
    cursor += size_t(rows) * (cols > 0 ? cols : 1);
    return b;
}

Decoder::Decoder(int feat_dim, int sh_coeffs) : feat_dim_(feat_dim), sh_coeffs_(sh_coeffs) {
    if (feat_dim < 1) throw SaroError("Decoder: feature dim must be >= 1");
    if (sh_coeffs < 1 || sh_coeffs > kMaxShCoeffs)
        throw SaroError("Decoder: SH coefficient count out of range");
    size_t cur = 0;
    fw1_w_ = alloc(kLifespanHidden, feat_dim, cur);
    fw1_b_ = alloc(kLifespanHidden, 0, cur);
    fw2_w_ = alloc(1, kLifespanHidden, cur);
    fw2_b_ = alloc(1, 0, cur);
    t1f_w_ = alloc(kTrunkWidth, feat_dim, cur);
    t1e_w_ = alloc(kTrunkWidth, kEmbedDim, cur);
    t1e_b_ = alloc(kTrunkWidth, 0, cur);
    t2_w_ = alloc(kTrunkWidth, kTrunkWidth, cur);
    t2_b_ = alloc(kTrunkWidth, 0, cur);
    hp_w_ = alloc(3, kTrunkWidth, cur);
    hp_b_ = alloc(3, 0, cur);
    hc_w_ = alloc(7, kTrunkWidth, cur);
    hc_b_ = alloc(7, 0, cur);
    hs_w_ = alloc(3 * sh_coeffs, kTrunkWidth, cur);
    hs_b_ = alloc(3 * sh_coeffs, 0, cur);
    params_.assign(cur, 0.0);
}

void Decoder::init_weights(uint64_t seed) {
    std::fill(params_.begin(), params_.end(), 0.0);
    Rng rng(seed);
    auto kaiming = [&](const Block& b) {
        double bound = std::sqrt(6.0 / b.cols);
        std::uniform_real_distribution<double> uni(-bound, bound);
        double* p = params_.data() + b.off;
        for (size_t i = 0; i < size_t(b.rows) * b.cols; ++i) p[i] = uni(rng);
    };
    // Hidden layers only; all final layers stay zero.
    kaiming(fw1_w_);
    kaiming(t1f_w_);
    kaiming(t1e_w_);
    kaiming(t2_w_);
}

double Decoder::lifespan(const double* f, LifespanCache* cache) const {
    double h[kLifespanHidden];
    const double* p = params_.data();
    matvec(p + fw1_w_.off, p + fw1_b_.off, f, kLifespanHidden, feat_dim_, h);
    relu_inplace(h, kLifespanHidden);
    double raw;
    matvec(p + fw2_w_.off, p + fw2_b_.off, h, 1, kLifespanHidden, &raw);
    if (cache) {
        std::memcpy(cache->h.data(), h, sizeof(h));
        cache->raw = raw;
    }
    return softplus(raw) + kSigmaMin;
}

void Decoder::backward_lifespan(const double* f, const LifespanCache& cache, double d_sigma,
                                double* gp, double* df) const {
    const double* p = params_.data();
    double d_raw = d_sigma * softplus_grad(cache.raw);
    double dh[kLifespanHidden];
    std::fill(dh, dh + kLifespanHidden, 0.0);
    matvec_backward(p + fw2_w_.off, cache.h.data(), &d_raw, 1, kLifespanHidden,
                    gp ? gp + fw2_w_.off : nullptr, gp ? gp + fw2_b_.off : nullptr, dh);
    relu_mask(cache.h.data(), dh, kLifespanHidden);
    matvec_backward(p + fw1_w_.off, f, dh, kLifespanHidden, feat_dim_,
                    gp ? gp + fw1_w_.off : nullptr, gp ? gp + fw1_b_.off : nullptr, df);
}

void Decoder::trunk_zf(const double* f, double* zf) const {
    matvec(params_.data() + t1f_w_.off, nullptr, f, kTrunkWidth, feat_dim_, zf);
}

void Decoder::backward_trunk_zf(const double* f, const double* d_zf, double* gp,
                                double* df) const {
    matvec_backward(params_.data() + t1f_w_.off, f, d_zf, kTrunkWidth, feat_dim_,
                    gp ? gp + t1f_w_.off : nullptr, nullptr, df);
}

void Decoder::residuals(const double* zf, double dt, ResidualBundle& out,
                        ResidualCache* cache) const {
    const double* p = params_.data();
    double emb[kEmbedDim];
    embed_dt(dt, emb);
    double h1[kTrunkWidth];
    std::memcpy(h1, zf, sizeof(h1));
    for (int o = 0; o < kTrunkWidth; ++o) h1[o] += p[t1e_b_.off + o];
    matvec_add(p + t1e_w_.off, emb, kTrunkWidth, kEmbedDim, h1);
    relu_inplace(h1, kTrunkWidth);
    double h2[kTrunkWidth];
    matvec(p + t2_w_.off, p + t2_b_.off, h1, kTrunkWidth, kTrunkWidth, h2);
    relu_inplace(h2, kTrunkWidth);

    double pos[3], cov[7];
    matvec(p + hp_w_.off, p + hp_b_.off, h2, 3, kTrunkWidth, pos);
    matvec(p + hc_w_.off, p + hc_b_.off, h2, 7, kTrunkWidth, cov);
    out.d_sh.fill(0.0);
    matvec(p + hs_w_.off, p + hs_b_.off, h2, 3 * sh_coeffs_, kTrunkWidth, out.d_sh.data());
    out.d_position = Vec3(pos[0], pos[1], pos[2]);
    out.d_scale = Vec3(cov[0], cov[1], cov[2]);
    out.d_rotation = Vec4(cov[3], cov[4], cov[5], cov[6]);
    if (cache) {
        std::memcpy(cache->h1.data(), h1, sizeof(h1));
        std::memcpy(cache->h2.data(), h2, sizeof(h2));
        std::memcpy(cache->emb.data(), emb, sizeof(emb));
    }
}

void Decoder::backward_residuals(const double* zf, double dt, const ResidualCache& cache,
                                 const ResidualBundle& d_out, double* gp, double* d_zf,
                                 double* d_dt) const {
    (void)zf;
    const double* p = params_.data();
    double d_pos[3] = {d_out.d_position[0], d_out.d_position[1], d_out.d_position[2]};
    double d_cov[7] = {d_out.d_scale[0],    d_out.d_scale[1],    d_out.d_scale[2],
                       d_out.d_rotation[0], d_out.d_rotation[1], d_out.d_rotation[2],
                       d_out.d_rotation[3]};
    double dh2[kTrunkWidth];
    std::fill(dh2, dh2 + kTrunkWidth, 0.0);
    matvec_backward(p + hp_w_.off, cache.h2.data(), d_pos, 3, kTrunkWidth,
                    gp ? gp + hp_w_.off : nullptr, gp ? gp + hp_b_.off : nullptr, dh2);
    matvec_backward(p + hc_w_.off, cache.h2.data(), d_cov, 7, kTrunkWidth,
                    gp ? gp + hc_w_.off : nullptr, gp ? gp + hc_b_.off : nullptr, dh2);
    matvec_backward(p + hs_w_.off, cache.h2.data(), d_out.d_sh.data(), 3 * sh_coeffs_,
                    kTrunkWidth, gp ? gp + hs_w_.off : nullptr, gp ? gp + hs_b_.off : nullptr,
                    dh2);
    relu_mask(cache.h2.data(), dh2, kTrunkWidth);
    double dh1[kTrunkWidth];
    std::fill(dh1, dh1 + kTrunkWidth, 0.0);
    matvec_backward(p + t2_w_.off, cache.h1.data(), dh2, kTrunkWidth, kTrunkWidth,
                    gp ? gp + t2_w_.off : nullptr, gp ? gp + t2_b_.off : nullptr, dh1);
    relu_mask(cache.h1.data(), dh1, kTrunkWidth);
    double d_emb[kEmbedDim];
    std::fill(d_emb, d_emb + kEmbedDim, 0.0);
    matvec_backward(p + t1e_w_.off, cache.emb.data(), dh1, kTrunkWidth, kEmbedDim,
                    gp ? gp + t1e_w_.off : nullptr, gp ? gp + t1e_b_.off : nullptr, d_emb);
    if (d_zf)
        for (int o = 0; o < kTrunkWidth; ++o) d_zf[o] += dh1[o];
    if (d_dt) *d_dt += embed_dt_dot(d_emb, dt);
}

void Decoder::residuals_full(const double* f, double dt, ResidualBundle& out,
                             ResidualCache* cache) const {
    double zf[kTrunkWidth];
    trunk_zf(f, zf);
    residuals(zf, dt, out, cache);
}

} // namespace saro
