#include "saro/projection.hpp"

#include <cstring>

namespace saro {

uint64_t Model::param_hash() const {
    uint64_t h = kFnvBasis;
    auto mix_doubles = [&h](const double* p, size_t n) {
        h = fnv1a64(p, n * sizeof(double), h);
    };
    for (const Gaussian4D& g : cloud.prims) {
        mix_doubles(g.position.data(), 4);
        mix_doubles(g.log_scale.data(), 3);
        mix_doubles(g.rotation.data(), 4);
        mix_doubles(&g.opacity_logit, 1);
        mix_doubles(g.sh.data(), g.sh.size());
    }
    std::vector<double> flat(field.trainable_count());
    field.gather_trainable(flat.data());
    mix_doubles(flat.data(), flat.size());
    mix_doubles(decoder.params().data(), decoder.params().size());
    mix_doubles(&state_sharpness, 1);
    return h;
}

Gaussian3D compose_gaussian3d(const Gaussian4D& g, int sh_coeffs, const ResidualBundle& res,
                              double gamma) {
    Gaussian3D out;
    out.position = g.position.head<3>() + res.d_position;
    out.scale = (g.log_scale + res.d_scale).array().exp();
    Vec4 q = g.rotation + res.d_rotation;
    double qn = q.norm();
    if (qn < 1e-12) throw SaroError("compose_gaussian3d: rotation collapsed to zero");
    out.rotation = q / qn;
    out.opacity = logistic(g.opacity_logit) * gamma;
    for (int c = 0; c < 3; ++c)
        for (int k = 0; k < sh_coeffs; ++k)
            out.sh[size_t(c) * sh_coeffs + k] = g.sh_at(c, k) + res.d_sh[size_t(c) * sh_coeffs + k];
    return out;
}

ComposeGrad compose_backward(const Gaussian4D& g, int sh_coeffs, const ResidualBundle& res,
                             double gamma, const Gaussian3DGrad& up) {
    ComposeGrad out;
    out.d_res.set_zero();

    out.d_position.head<3>() = up.d_position;
    out.d_res.d_position = up.d_position;

    Vec3 s3 = (g.log_scale + res.d_scale).array().exp();
    Vec3 d_u = up.d_scale.cwiseProduct(s3);
    out.d_log_scale = d_u;
    out.d_res.d_scale = d_u;

    Vec4 q = g.rotation + res.d_rotation;
    double qn = q.norm();
    Vec4 qhat = q / qn;
    Vec4 d_q = (up.d_rotation - qhat * qhat.dot(up.d_rotation)) / qn;
    out.d_rotation = d_q;
    out.d_res.d_rotation = d_q;

    double a4 = logistic(g.opacity_logit);
    out.d_opacity_logit = up.d_opacity * gamma * a4 * (1.0 - a4);
    out.d_gamma = up.d_opacity * a4;

    for (int c = 0; c < 3; ++c) {
        for (int k = 0; k < sh_coeffs; ++k) {
            double v = up.d_sh[size_t(c) * sh_coeffs + k];
            out.d_sh[size_t(c) * kMaxShCoeffs + k] = v;
            out.d_res.d_sh[size_t(c) * sh_coeffs + k] = v;
        }
    }
    return out;
}

namespace {

std::vector<Splat2D> compose_and_project(const Model& model, const BakedCloud* baked,
                                         const Camera& cam, double t0,
                                         const RasterizeOptions& opts, bool warmup,
                                         double threshold, RenderStats* stats,
                                         RasterizeResult* out) {
    cam.validate();
    const int ncoef = model.cloud.sh_coeffs();
    const int m = model.field.feat_dim();
    const size_t n = model.cloud.size();
    std::vector<Splat2D> splats;
    splats.reserve(n);
    std::vector<double> f(m);
    ResidualBundle res;
    for (size_t i = 0; i < n; ++i) {
        const Gaussian4D& g = model.cloud.prims[i];
        double sigma;
        const double* feat;
        if (baked) {
            feat = baked->features.data() + i * m;
            sigma = baked->sigma[i];
        } else {
            Vec3 scale = g.log_scale.array().exp();
            model.field.query(g.position, scale, f.data());
            feat = f.data();
            sigma = model.decoder.lifespan(feat);
        }
        double gamma = 1.0;
        if (!warmup) {
            TemporalState state{g.position[3], sigma, model.state_sharpness};
            gamma = state_function(state, t0);
        }
        if (baked && gamma < threshold) continue;
        double dt = warmup ? 0.0 : t0 - g.position[3];
        model.decoder.residuals_full(feat, dt, res);
        Gaussian3D g3 = compose_gaussian3d(g, ncoef, res, gamma);
        if (auto s = project_splat(g3, cam, ncoef, int(i))) splats.push_back(*s);
    }
    if (stats) stats->submitted = splats.size();
    *out = rasterize(splats, cam.width, cam.height, opts);
    if (stats && opts.count_blends) {
        stats->blended = 0;
        for (uint32_t c : out->blend_counts)
            if (c > 0) ++stats->blended;
    }
    return splats;
}

} // namespace

RasterizeResult render_model(const Model& model, const Camera& cam, double t0,
                             const RasterizeOptions& opts, bool warmup, RenderStats* stats) {
    RasterizeResult out;
    compose_and_project(model, nullptr, cam, t0, opts, warmup, 0.0, stats, &out);
    return out;
}

BakedCloud bake(const Model& model) {
    const int m = model.field.feat_dim();
    const size_t n = model.cloud.size();
    BakedCloud baked;
    baked.feat_dim = m;
    baked.features.resize(n * m);
    baked.sigma.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const Gaussian4D& g = model.cloud.prims[i];
        Vec3 scale = g.log_scale.array().exp();
        model.field.query(g.position, scale, baked.features.data() + i * m);
        baked.sigma[i] = model.decoder.lifespan(baked.features.data() + i * m);
    }
    baked.param_hash = model.param_hash();
    return baked;
}

RasterizeResult render_from_baked(const Model& model, const BakedCloud& baked, const Camera& cam,
                                  double t0, const RasterizeOptions& opts, double threshold,
                                  RenderStats* stats) {
    if (baked.feat_dim != model.field.feat_dim() ||
        baked.sigma.size() != model.cloud.size())
        throw SaroError("render_from_baked: baked cloud shape does not match the model");
    if (baked.param_hash != model.param_hash())
        throw SaroError("render_from_baked: baked cloud is stale (parameters changed)");
    RasterizeResult out;
    compose_and_project(model, &baked, cam, t0, opts, false, threshold, stats, &out);
    return out;
}

} // namespace saro
