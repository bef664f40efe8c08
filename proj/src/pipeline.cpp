#include "saro/pipeline.hpp"

namespace saro {

void ParamGrads::init(const Model& model) {
    const size_t n = model.cloud.size();
    position.assign(n, Vec4::Zero());
    log_scale.assign(n, Vec3::Zero());
    rotation.assign(n, Vec4::Zero());
    opacity_logit.assign(n, 0.0);
    sh.assign(n, {});
    field.init(model.field);
    decoder.assign(model.decoder.trainable_count(), 0.0);
}

void ParamGrads::zero() {
    std::fill(position.begin(), position.end(), Vec4::Zero());
    std::fill(log_scale.begin(), log_scale.end(), Vec3::Zero());
    std::fill(rotation.begin(), rotation.end(), Vec4::Zero());
    std::fill(opacity_logit.begin(), opacity_logit.end(), 0.0);
    for (auto& row : sh) row.fill(0.0);
    field.zero();
    std::fill(decoder.begin(), decoder.end(), 0.0);
}

Pipeline::Pipeline(Model& model, const LossWeights& weights, const Vec3& background)
    : model_(model), weights_(weights), background_(background) {}

void Pipeline::prepare(bool warmup) {
    (void)warmup;
    const size_t n = model_.cloud.size();
    const int m = model_.field.feat_dim();
    model_.field.ensure_thumbnails();
    feat_.resize(n * m);
    zf_.resize(n * Decoder::kTrunkWidth);
    shared_.resize(n);
    parallel_chunks(n, 128, [&](size_t, size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            const Gaussian4D& g = model_.cloud.prims[i];
            PrimShared& ps = shared_[i];
            double* f = feat_.data() + i * m;
            Vec3 scale = g.log_scale.array().exp();
            model_.field.query(g.position, scale, f, &ps.fq);
            ps.sigma = model_.decoder.lifespan(f, &ps.lc);
            double* zf = zf_.data() + i * Decoder::kTrunkWidth;
            model_.decoder.trunk_zf(f, zf);
            model_.decoder.residuals(zf, 0.0, ps.res0, &ps.rc0);
            ps.lsr_norm = ps.res0.d_scale.norm();
        }
    });
}

void Pipeline::forward_view(const ViewSpec& spec, ViewWork& work, bool warmup) {
    spec.cam.validate();
    const size_t n = model_.cloud.size();
    const int ncoef = model_.cloud.sh_coeffs();
    work.prims.assign(n, PrimView{});
    std::vector<Splat2D> tmp(n);
    std::vector<char> has_splat(n, 0);
    parallel_chunks(n, 128, [&](size_t, size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            const Gaussian4D& g = model_.cloud.prims[i];
            PrimView& pv = work.prims[i];
            if (!warmup) {
                TemporalState state{g.position[3], shared_[i].sigma, model_.state_sharpness};
                pv.gamma = state_function(state, spec.t0);
            }
            // A composed opacity below the contribution floor cannot touch
            // any pixel; skipping here is exact.
            if (logistic(g.opacity_logit) * pv.gamma < kContributionMin) continue;
            double dt = warmup ? 0.0 : spec.t0 - g.position[3];
            model_.decoder.residuals(zf_.data() + i * Decoder::kTrunkWidth, dt, pv.res, &pv.rc);
            Gaussian3D g3 = compose_gaussian3d(g, ncoef, pv.res, pv.gamma);
            if (auto s = project_splat(g3, spec.cam, ncoef, int(i), &pv.pc)) {
                tmp[i] = *s;
                has_splat[i] = 1;
            }
        }
    });
    work.splats.clear();
    work.splats.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        if (!has_splat[i]) continue;
        work.prims[i].splat = int(work.splats.size());
        work.splats.push_back(tmp[i]);
    }
    RasterizeOptions opts;
    opts.background = background_;
    work.image = rasterize(work.splats, spec.cam.width, spec.cam.height, opts).color;
    work.l1 = l1_loss(work.image, *spec.target);
    work.ssim_val = ssim(work.image, *spec.target);
}

LossTerms Pipeline::run(const std::vector<ViewSpec>& views, bool warmup, ParamGrads* grads) {
    if (views.empty()) throw SaroError("Pipeline::run: empty view batch");
    for (const ViewSpec& v : views)
        if (!v.target) throw SaroError("Pipeline::run: view without target image");

    prepare(warmup);
    views_.resize(views.size());
    LossTerms terms;
    for (size_t v = 0; v < views.size(); ++v) {
        forward_view(views[v], views_[v], warmup);
        terms.l1 += views_[v].l1;
        terms.dssim += dssim_from_ssim(views_[v].ssim_val);
    }
    terms.l1 /= double(views.size());
    terms.dssim /= double(views.size());
    double lsr_acc = 0.0;
    for (const PrimShared& ps : shared_) lsr_acc += ps.lsr_norm;
    terms.l_sr = shared_.empty() ? 0.0 : lsr_acc / double(shared_.size());
    terms.total = total_loss(terms.l1, terms.dssim, terms.l_sr, weights_);

    if (grads) backward(views, warmup, *grads);
    return terms;
}

void Pipeline::backward(const std::vector<ViewSpec>& views, bool warmup, ParamGrads& grads) {
    const size_t n = model_.cloud.size();
    const int ncoef = model_.cloud.sh_coeffs();
    const int m = model_.field.feat_dim();
    const double inv_b = 1.0 / double(views.size());
    std::vector<double> d_zf(n * Decoder::kTrunkWidth, 0.0);
    std::vector<double> d_sigma(n, 0.0);
    double* gdec = grads.decoder.data();

    RasterizeOptions opts;
    opts.background = background_;
    for (size_t v = 0; v < views.size(); ++v) {
        const ViewSpec& spec = views[v];
        ViewWork& work = views_[v];
        Image d_image(work.image.width, work.image.height);
        l1_loss_backward(work.image, *spec.target, (1.0 - weights_.lambda1) * inv_b, d_image);
        // d(dssim)/d(ssim) = -1/2.
        ssim_backward(work.image, *spec.target, -0.5 * weights_.lambda1 * inv_b, d_image);
        std::vector<SplatGrad> sgrads =
            rasterize_backward(work.splats, work.image.width, work.image.height, opts, d_image);
        for (size_t j = 0; j < sgrads.size(); ++j) {
            const int i = work.splats[j].prim_index;
            const Gaussian4D& g = model_.cloud.prims[i];
            PrimView& pv = work.prims[i];
            Gaussian3D g3 = compose_gaussian3d(g, ncoef, pv.res, pv.gamma);
            Gaussian3DGrad g3g =
                project_splat_backward(g3, spec.cam, ncoef, pv.pc, sgrads[j]);
            ComposeGrad cg = compose_backward(g, ncoef, pv.res, pv.gamma, g3g);
            grads.position[i] += cg.d_position;
            grads.log_scale[i] += cg.d_log_scale;
            grads.rotation[i] += cg.d_rotation;
            grads.opacity_logit[i] += cg.d_opacity_logit;
            for (size_t c = 0; c < cg.d_sh.size(); ++c) grads.sh[i][c] += cg.d_sh[c];
            double dt = 0.0;
            if (!warmup) {
                TemporalState state{g.position[3], shared_[i].sigma, model_.state_sharpness};
                StateGrad sg = state_function_grad(state, spec.t0);
                grads.position[i][3] += cg.d_gamma * sg.d_tau;
                d_sigma[i] += cg.d_gamma * sg.d_sigma;
                dt = spec.t0 - g.position[3];
            }
            double d_dt = 0.0;
            model_.decoder.backward_residuals(zf_.data() + i * Decoder::kTrunkWidth, dt, pv.rc,
                                              cg.d_res, gdec,
                                              d_zf.data() + i * Decoder::kTrunkWidth,
                                              warmup ? nullptr : &d_dt);
            if (!warmup) grads.position[i][3] -= d_dt;
        }
    }

    std::vector<double> d_feat(m);
    ResidualBundle d_res0;
    for (size_t i = 0; i < n; ++i) {
        const PrimShared& ps = shared_[i];
        const double* f = feat_.data() + i * m;
        double* zf_i = zf_.data() + i * Decoder::kTrunkWidth;
        double* d_zf_i = d_zf.data() + i * Decoder::kTrunkWidth;
        if (weights_.lambda2 > 0.0 && ps.lsr_norm > 0.0) {
            d_res0.set_zero();
            d_res0.d_scale = (weights_.lambda2 / (double(n) * ps.lsr_norm)) * ps.res0.d_scale;
            model_.decoder.backward_residuals(zf_i, 0.0, ps.rc0, d_res0, gdec, d_zf_i, nullptr);
        }
        std::fill(d_feat.begin(), d_feat.end(), 0.0);
        model_.decoder.backward_trunk_zf(f, d_zf_i, gdec, d_feat.data());
        if (d_sigma[i] != 0.0)
            model_.decoder.backward_lifespan(f, ps.lc, d_sigma[i], gdec, d_feat.data());
        Vec4 d_pos = Vec4::Zero();
        Vec3 d_scale = Vec3::Zero();
        model_.field.backward_query(ps.fq, d_feat.data(), &grads.field, &d_pos, &d_scale);
        // Static warm-up freezes tau: the spacetime-plane chain is the only
        // remaining inflow once gamma is pinned and dt is zero.
        if (warmup) d_pos[3] = 0.0;
        grads.position[i] += d_pos;
        const Gaussian4D& g = model_.cloud.prims[i];
        grads.log_scale[i] += d_scale.cwiseProduct(g.log_scale.array().exp().matrix());
    }
}

} // namespace saro
