#include "saro/gradients.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "saro/pipeline.hpp"

namespace saro {

double fd_rel_err(double analytic, double numeric) {
    double denom = std::abs(analytic) + std::abs(numeric);
    return std::abs(analytic - numeric) / std::max(1e-8, denom);
}

namespace {

constexpr double kSingleOpTol = 1e-6;
constexpr double kPipelineTol = 1e-4;
constexpr double kSingleOpH = 1e-6;
// Wider step for ops that sum over whole images: the larger secant swamps
// the correlated rounding noise of the two evaluations.
constexpr double kImageOpH = 1e-5;
constexpr double kPipelineH = 1e-5;
// Differences below the floor are agreement. Central differences on a loss
// of magnitude ~1 carry absolute noise around 1e-9 per coordinate; a wrong
// backward on any coordinate that matters moves the gradient by far more.
constexpr double kSingleOpFloor = 1e-8;
constexpr double kPipelineFloor = 1e-7;

double u01(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }
double usym(Rng& rng) { return 2.0 * u01(rng) - 1.0; }

// Collects per-coordinate comparisons for one named check. Coordinates are
// numbered in sweep order; worst_index reports the offender.
class Check {
  public:
    Check(std::string name, double h, double tol, double floor) : floor_(floor) {
        res_.name = std::move(name);
        res_.h = h;
        res_.tolerance = tol;
    }

    void record(double analytic, double numeric) {
        size_t idx = res_.n_checked++;
        if (std::abs(analytic - numeric) <= floor_) return;
        double e = fd_rel_err(analytic, numeric);
        if (e > res_.max_rel_err) {
            res_.max_rel_err = e;
            res_.worst_index = idx;
        }
    }

    GradCheckResult finish() {
        res_.pass = res_.max_rel_err < res_.tolerance;
        return res_;
    }

    double h() const { return res_.h; }

  private:
    GradCheckResult res_;
    double floor_;
};

// Central difference through a parameter living at *x; eval must observe the
// write (same memory the op reads).
template <class F>
double central_diff(double* x, double h, const F& eval) {
    double x0 = *x;
    *x = x0 + h;
    double fp = eval();
    *x = x0 - h;
    double fm = eval();
    *x = x0;
    return (fp - fm) / (2.0 * h);
}

GradCheckResult check_temporal_state() {
    Check chk("temporal_state", kSingleOpH, kSingleOpTol, kSingleOpFloor);
    const double taus[] = {0.3, 0.72};
    const double sigmas[] = {0.05, 0.6, 5.0};
    const double times[] = {0.1, 0.45, 0.9};
    for (double tau : taus)
        for (double sigma : sigmas)
            for (double t : times) {
                TemporalState ts{tau, sigma, kDefaultSharpness};
                StateGrad g = state_function_grad(ts, t);
                double h = chk.h();
                double v[3] = {tau, sigma, t};
                double ga[3] = {g.d_tau, g.d_sigma, g.d_t};
                for (int a = 0; a < 3; ++a) {
                    double fd = central_diff(&v[a], h, [&] {
                        TemporalState s{v[0], v[1], kDefaultSharpness};
                        return state_function(s, v[2]);
                    });
                    chk.record(ga[a], fd);
                }
            }
    return chk.finish();
}

// Flat trainable index -> storage slot, matching gather_trainable order.
double* field_trainable_ptr(HexplaneField& field, size_t flat) {
    for (int i = 0; i < 3; ++i) {
        PlaneGrid& p = field.spatial_base(i);
        if (flat < p.data.size()) return &p.data[flat];
        flat -= p.data.size();
    }
    for (int i = 0; i < 3; ++i) {
        PlaneGrid& p = field.spacetime_plane_mut(i);
        if (flat < p.data.size()) return &p.data[flat];
        flat -= p.data.size();
    }
    throw SaroError("field trainable index out of range");
}

GradCheckResult check_field_query() {
    Check chk("field_query", kSingleOpH, kSingleOpTol, kSingleOpFloor);
    Bbox bbox;
    HexplaneField field(4, 8, 8, 3, bbox);
    Rng rng(0xf1e1d);
    field.init_uniform(rng, 0.6);
    field.ensure_thumbnails();

    struct Case {
        Vec4 pos;
        Vec3 scale;
    };
    const Case cases[] = {
        {{0.21, -0.47, 0.66, 0.37}, {0.05, 0.08, 0.3}},
        {{-0.92, 0.13, 0.4, 0.81}, {0.6, 1.1, 0.9}},
        {{0.05, 0.63, -0.33, 0.5}, {0.18, 0.35, 2.4}},
    };
    Rng wr(0x77);
    for (const Case& c : cases) {
        double w[4];
        for (double& x : w) x = usym(wr);
        Vec4 pos = c.pos;
        Vec3 scale = c.scale;

        FieldQueryCache fq;
        double f[4];
        field.query(pos, scale, f, &fq);
        FieldGradients fg;
        fg.init(field);
        Vec4 d_pos = Vec4::Zero();
        Vec3 d_scale = Vec3::Zero();
        field.backward_query(fq, w, &fg, &d_pos, &d_scale);
        std::vector<double> flat = field.collapse_gradients(fg);

        auto loss = [&] {
            // The sweep writes plane cells through raw pointers, which cannot
            // flip the dirty flag; touch a trainable accessor so the rebuild
            // actually runs and the finite difference sees fresh thumbnails.
            field.spatial_base(0);
            field.ensure_thumbnails();
            double ff[4];
            field.query(pos, scale, ff, nullptr);
            return w[0] * ff[0] + w[1] * ff[1] + w[2] * ff[2] + w[3] * ff[3];
        };
        for (int a = 0; a < 4; ++a) chk.record(d_pos[a], central_diff(&pos[a], chk.h(), loss));
        for (int a = 0; a < 3; ++a) chk.record(d_scale[a], central_diff(&scale[a], chk.h(), loss));
        for (size_t i = 0; i < field.trainable_count(); ++i)
            chk.record(flat[i], central_diff(field_trainable_ptr(field, i), chk.h(), loss));
        field.ensure_thumbnails();
    }
    return chk.finish();
}

// Decoder with every block jittered off its init so no path is dead.
Decoder make_jittered_decoder(int feat_dim, int sh_coeffs, uint64_t seed) {
    Decoder dec(feat_dim, sh_coeffs);
    dec.init_weights(seed);
    Rng jr(seed ^ 0x9e3779b97f4a7c15ull);
    for (double& p : dec.params()) p += 0.2 * usym(jr);
    return dec;
}

GradCheckResult check_decoder_lifespan() {
    Check chk("decoder_lifespan", kSingleOpH, kSingleOpTol, kSingleOpFloor);
    Decoder dec = make_jittered_decoder(6, 4, 0xdec0);
    double f[6] = {0.4, -0.7, 0.2, 0.9, -0.3, 0.55};

    LifespanCache lc;
    dec.lifespan(f, &lc);
    std::vector<double> gp(dec.trainable_count(), 0.0);
    double df[6] = {};
    dec.backward_lifespan(f, lc, 1.0, gp.data(), df);

    auto loss = [&] { return dec.lifespan(f); };
    for (int i = 0; i < 6; ++i) chk.record(df[i], central_diff(&f[i], chk.h(), loss));
    for (size_t i = 0; i < gp.size(); ++i)
        chk.record(gp[i], central_diff(&dec.params()[i], chk.h(), loss));
    return chk.finish();
}

GradCheckResult check_decoder_residuals() {
    Check chk("decoder_residuals", kSingleOpH, kSingleOpTol, kSingleOpFloor);
    const int ncoef = 4;
    Decoder dec = make_jittered_decoder(6, ncoef, 0x4e5d);
    double f[6] = {0.3, -0.55, 0.8, -0.15, 0.6, -0.9};
    double dt = 0.37;

    ResidualBundle w;
    Rng wr(0x88);
    for (int a = 0; a < 3; ++a) w.d_position[a] = usym(wr);
    for (int a = 0; a < 3; ++a) w.d_scale[a] = usym(wr);
    for (int a = 0; a < 4; ++a) w.d_rotation[a] = usym(wr);
    for (int j = 0; j < 3 * ncoef; ++j) w.d_sh[j] = usym(wr);

    auto weigh = [&](const ResidualBundle& o) {
        double s = w.d_position.dot(o.d_position) + w.d_scale.dot(o.d_scale) +
                   w.d_rotation.dot(o.d_rotation);
        for (int j = 0; j < 3 * ncoef; ++j) s += w.d_sh[j] * o.d_sh[j];
        return s;
    };

    std::vector<double> zf(Decoder::kTrunkWidth);
    dec.trunk_zf(f, zf.data());
    ResidualCache rc;
    ResidualBundle out;
    dec.residuals(zf.data(), dt, out, &rc);

    std::vector<double> gp(dec.trainable_count(), 0.0);
    std::vector<double> d_zf(Decoder::kTrunkWidth, 0.0);
    double d_dt = 0.0;
    double df[6] = {};
    dec.backward_residuals(zf.data(), dt, rc, w, gp.data(), d_zf.data(), &d_dt);
    dec.backward_trunk_zf(f, d_zf.data(), gp.data(), df);

    auto loss = [&] {
        ResidualBundle o;
        dec.residuals_full(f, dt, o);
        return weigh(o);
    };
    for (int i = 0; i < 6; ++i) chk.record(df[i], central_diff(&f[i], chk.h(), loss));
    chk.record(d_dt, central_diff(&dt, chk.h(), loss));
    for (size_t i = 0; i < gp.size(); ++i)
        chk.record(gp[i], central_diff(&dec.params()[i], chk.h(), loss));
    return chk.finish();
}

GradCheckResult check_sh_color() {
    Check chk("sh_color", kSingleOpH, kSingleOpTol, kSingleOpFloor);
    const int ncoef = 16;
    Rng rng(0xc0104);
    double sh[3 * kMaxShCoeffs] = {};
    for (int c = 0; c < 3; ++c) {
        sh[c * ncoef] = 0.9 + 0.4 * usym(rng);
        for (int k = 1; k < ncoef; ++k) sh[c * ncoef + k] = 0.25 * usym(rng);
    }
    Vec3 dir(0.3, -0.8, 1.7); // unnormalized; the op owns the normalization
    Vec3 w(usym(rng), usym(rng), usym(rng));

    Vec3 pre;
    sh_to_color(sh, ncoef, dir, &pre);
    double d_sh[3 * kMaxShCoeffs] = {};
    Vec3 d_dir = Vec3::Zero();
    sh_to_color_backward(sh, ncoef, dir, pre, w, d_sh, &d_dir);

    auto loss = [&] { return sh_to_color(sh, ncoef, dir).dot(w); };
    for (int j = 0; j < 3 * ncoef; ++j) chk.record(d_sh[j], central_diff(&sh[j], chk.h(), loss));
    for (int a = 0; a < 3; ++a) chk.record(d_dir[a], central_diff(&dir[a], chk.h(), loss));
    return chk.finish();
}

GradCheckResult check_compose() {
    Check chk("compose", kSingleOpH, kSingleOpTol, kSingleOpFloor);
    const int ncoef = 4;
    Rng rng(0xc09a);

    Gaussian4D g;
    g.position = Vec4(0.2, -0.4, 0.1, 0.45);
    g.log_scale = Vec3(-1.8, -2.2, -2.0);
    g.rotation = Vec4(0.9, 0.2, -0.35, 0.1);
    g.opacity_logit = 0.4;
    for (int c = 0; c < 3; ++c) {
        g.sh_at(c, 0) = 0.8 + 0.3 * usym(rng);
        for (int k = 1; k < ncoef; ++k) g.sh_at(c, k) = 0.3 * usym(rng);
    }
    ResidualBundle res;
    for (int a = 0; a < 3; ++a) res.d_position[a] = 0.2 * usym(rng);
    for (int a = 0; a < 3; ++a) res.d_scale[a] = 0.2 * usym(rng);
    for (int a = 0; a < 4; ++a) res.d_rotation[a] = 0.2 * usym(rng);
    for (int j = 0; j < 3 * ncoef; ++j) res.d_sh[j] = 0.1 * usym(rng);
    double gamma = 0.73;

    Gaussian3DGrad up;
    for (int a = 0; a < 3; ++a) up.d_position[a] = usym(rng);
    for (int a = 0; a < 3; ++a) up.d_scale[a] = usym(rng);
    for (int a = 0; a < 4; ++a) up.d_rotation[a] = usym(rng);
    up.d_opacity = usym(rng);
    for (int j = 0; j < 3 * ncoef; ++j) up.d_sh[j] = usym(rng);

    ComposeGrad cg = compose_backward(g, ncoef, res, gamma, up);

    auto loss = [&] {
        Gaussian3D o = compose_gaussian3d(g, ncoef, res, gamma);
        double s = up.d_position.dot(o.position) + up.d_scale.dot(o.scale) +
                   up.d_rotation.dot(o.rotation) + up.d_opacity * o.opacity;
        for (int j = 0; j < 3 * ncoef; ++j) s += up.d_sh[j] * o.sh[j];
        return s;
    };
    double h = chk.h();
    for (int a = 0; a < 4; ++a) chk.record(cg.d_position[a], central_diff(&g.position[a], h, loss));
    for (int a = 0; a < 3; ++a)
        chk.record(cg.d_log_scale[a], central_diff(&g.log_scale[a], h, loss));
    for (int a = 0; a < 4; ++a) chk.record(cg.d_rotation[a], central_diff(&g.rotation[a], h, loss));
    chk.record(cg.d_opacity_logit, central_diff(&g.opacity_logit, h, loss));
    for (int c = 0; c < 3; ++c)
        for (int k = 0; k < ncoef; ++k)
            chk.record(cg.d_sh[c * kMaxShCoeffs + k],
                       central_diff(&g.sh[c * kMaxShCoeffs + k], h, loss));
    chk.record(cg.d_gamma, central_diff(&gamma, h, loss));
    for (int a = 0; a < 3; ++a)
        chk.record(cg.d_res.d_position[a], central_diff(&res.d_position[a], h, loss));
    for (int a = 0; a < 3; ++a)
        chk.record(cg.d_res.d_scale[a], central_diff(&res.d_scale[a], h, loss));
    for (int a = 0; a < 4; ++a)
        chk.record(cg.d_res.d_rotation[a], central_diff(&res.d_rotation[a], h, loss));
    for (int j = 0; j < 3 * ncoef; ++j)
        chk.record(cg.d_res.d_sh[j], central_diff(&res.d_sh[j], h, loss));
    return chk.finish();
}

GradCheckResult check_project_splat() {
    Check chk("project_splat", kSingleOpH, kSingleOpTol, kSingleOpFloor);
    const int ncoef = 4;
    Camera cam = make_lookat_camera({0.4, -0.3, -2.9}, {0, 0, 0}, {0, 1, 0}, 55.0, 48, 36, 0.05);
    Rng rng(0x57a7);

    Gaussian3D g;
    g.position = Vec3(0.15, -0.22, 0.3);
    g.rotation = Vec4(0.8, -0.3, 0.4, 0.25).normalized();
    g.scale = Vec3(0.08, 0.15, 0.11);
    g.opacity = 0.7;
    for (int c = 0; c < 3; ++c) {
        g.sh[c * ncoef] = 0.8 + 0.3 * usym(rng);
        for (int k = 1; k < ncoef; ++k) g.sh[c * ncoef + k] = 0.3 * usym(rng);
    }

    SplatGrad up;
    up.d_mean = Vec2(usym(rng), usym(rng));
    up.d_cov_a = usym(rng);
    up.d_cov_b = usym(rng);
    up.d_cov_c = usym(rng);
    up.d_opacity = usym(rng);
    up.d_color = Vec3(usym(rng), usym(rng), usym(rng));

    ProjectCache pc;
    auto splat = project_splat(g, cam, ncoef, 0, &pc);
    if (!splat) throw SaroError("gradcheck projection unexpectedly culled");
    Gaussian3DGrad gg = project_splat_backward(g, cam, ncoef, pc, up, 0.0);

    auto loss = [&] {
        auto s = project_splat(g, cam, ncoef, 0, nullptr);
        if (!s) throw SaroError("gradcheck projection unexpectedly culled");
        return up.d_mean.dot(s->mean) + up.d_cov_a * s->cov_a + up.d_cov_b * s->cov_b +
               up.d_cov_c * s->cov_c + up.d_opacity * s->opacity + up.d_color.dot(s->color);
    };
    double h = chk.h();
    for (int a = 0; a < 3; ++a) chk.record(gg.d_position[a], central_diff(&g.position[a], h, loss));
    for (int a = 0; a < 3; ++a) chk.record(gg.d_scale[a], central_diff(&g.scale[a], h, loss));
    for (int a = 0; a < 4; ++a) chk.record(gg.d_rotation[a], central_diff(&g.rotation[a], h, loss));
    chk.record(gg.d_opacity, central_diff(&g.opacity, h, loss));
    for (int j = 0; j < 3 * ncoef; ++j) chk.record(gg.d_sh[j], central_diff(&g.sh[j], h, loss));
    return chk.finish();
}

GradCheckResult check_rasterize() {
    // Wider step: the compositor's hard floors (contribution, footprint)
    // make the loss piecewise; the scene keeps every crossing far from the
    // evaluation points and moderate opacities keep transmittance off its
    // floor, so both secant points stay on one smooth piece.
    Check chk("rasterize", kImageOpH, kSingleOpTol, kSingleOpFloor);
    const int w = 40, h = 32;
    Rng rng(0x5a71);
    std::vector<Splat2D> splats(18);
    for (size_t i = 0; i < splats.size(); ++i) {
        Splat2D& s = splats[i];
        s.mean = Vec2(u01(rng) * 48.0 - 4.0, u01(rng) * 40.0 - 4.0);
        s.cov_a = 0.6 + 3.0 * u01(rng);
        s.cov_c = 0.6 + 3.0 * u01(rng);
        s.cov_b = 0.7 * usym(rng) * std::sqrt(s.cov_a * s.cov_c);
        s.depth = 0.5 + 4.0 * u01(rng);
        s.opacity = 0.15 + 0.3 * u01(rng);
        s.color = Vec3(u01(rng), u01(rng), u01(rng));
        s.prim_index = int(i);
    }
    RasterizeOptions opts;
    opts.background = Vec3(0.1, 0.2, 0.3);
    Image d_image(w, h);
    for (double& v : d_image.data) v = usym(rng);

    std::vector<SplatGrad> grads = rasterize_backward(splats, w, h, opts, d_image);

    auto loss = [&] {
        RasterizeResult r = rasterize(splats, w, h, opts);
        double s = 0.0;
        for (size_t i = 0; i < r.color.data.size(); ++i) s += d_image.data[i] * r.color.data[i];
        return s;
    };
    double hh = chk.h();
    for (size_t i = 0; i < splats.size(); ++i) {
        Splat2D& s = splats[i];
        const SplatGrad& g = grads[i];
        chk.record(g.d_mean[0], central_diff(&s.mean[0], hh, loss));
        chk.record(g.d_mean[1], central_diff(&s.mean[1], hh, loss));
        chk.record(g.d_cov_a, central_diff(&s.cov_a, hh, loss));
        chk.record(g.d_cov_b, central_diff(&s.cov_b, hh, loss));
        chk.record(g.d_cov_c, central_diff(&s.cov_c, hh, loss));
        chk.record(g.d_opacity, central_diff(&s.opacity, hh, loss));
        for (int c = 0; c < 3; ++c) chk.record(g.d_color[c], central_diff(&s.color[c], hh, loss));
    }
    return chk.finish();
}

GradCheckResult check_l1_image() {
    Check chk("l1_image", kSingleOpH, kSingleOpTol, kSingleOpFloor);
    Rng rng(0x11);
    Image x(16, 16), y(16, 16);
    for (double& v : x.data) v = 0.05 + 0.9 * u01(rng);
    for (double& v : y.data) v = 0.05 + 0.9 * u01(rng);

    Image d(16, 16);
    l1_loss_backward(x, y, 1.0, d);
    auto loss = [&] { return l1_loss(x, y); };
    for (size_t j = 0; j < x.data.size(); j += 16)
        chk.record(d.data[j], central_diff(&x.data[j], chk.h(), loss));
    return chk.finish();
}

GradCheckResult check_ssim_image() {
    Check chk("ssim_image", kImageOpH, kSingleOpTol, kSingleOpFloor);
    Rng rng(0x55);
    Image x(16, 16), y(16, 16);
    for (double& v : x.data) v = 0.05 + 0.9 * u01(rng);
    for (double& v : y.data) v = 0.05 + 0.9 * u01(rng);

    Image d(16, 16);
    ssim_backward(x, y, 1.0, d);
    auto loss = [&] { return ssim(x, y); };
    for (size_t j = 0; j < x.data.size(); j += 16)
        chk.record(d.data[j], central_diff(&x.data[j], chk.h(), loss));
    return chk.finish();
}

// Three primitives, two 8x8 views at distinct sampling times, every loss
// term active. Small enough that a full parameter sweep stays in seconds.
struct TinyScene {
    Model model;
    std::vector<Image> targets;
    std::vector<ViewSpec> views;

    static GaussianCloud make_cloud() {
        GaussianCloud cloud;
        cloud.sh_degree = 1;
        cloud.bbox = Bbox{};
        Rng rng(0x3c3a);
        const Vec4 positions[3] = {
            {0.25, -0.1, 0.05, 0.32}, {-0.3, 0.2, -0.1, 0.55}, {0.05, 0.3, 0.15, 0.68}};
        const Vec4 rotations[3] = {
            {0.92, 0.18, -0.3, 0.12}, {0.7, -0.4, 0.2, 0.55}, {0.85, 0.05, 0.45, -0.25}};
        for (int i = 0; i < 3; ++i) {
            Gaussian4D g;
            g.position = positions[i];
            g.log_scale = Vec3(std::log(0.16), std::log(0.2), std::log(0.13)) +
                          Vec3(usym(rng), usym(rng), usym(rng)) * 0.2;
            g.rotation = rotations[i];
            g.opacity_logit = 0.6 + 0.3 * usym(rng);
            for (int c = 0; c < 3; ++c) {
                g.sh_at(c, 0) = 1.0 + 0.4 * usym(rng);
                for (int k = 1; k < 4; ++k) g.sh_at(c, k) = 0.25 * usym(rng);
            }
            cloud.prims.push_back(g);
        }
        return cloud;
    }

    TinyScene() : model(make_cloud(), 4, 8, 8, 2) {
        Rng fr(31337);
        model.field.init_uniform(fr, 0.4);
        model.decoder.init_weights(777);
        Rng dj(4242);
        for (double& p : model.decoder.params()) p += 0.2 * usym(dj);

        const Vec3 eyes[2] = {{0.1, 0.25, -2.6}, {2.2, -0.4, -1.4}};
        const double t0s[2] = {0.38, 0.61};
        Rng ir(0x1a6e);
        for (int v = 0; v < 2; ++v) {
            Image tgt(8, 8);
            for (double& px : tgt.data) px = u01(ir);
            targets.push_back(std::move(tgt));
        }
        for (int v = 0; v < 2; ++v) {
            ViewSpec vs;
            vs.cam = make_lookat_camera(eyes[v], {0, 0, 0}, {0, 1, 0}, 50.0, 8, 8, 0.05);
            vs.t0 = t0s[v];
            vs.target = &targets[v];
            views.push_back(vs);
        }
    }
};

// Pointers to every raw coordinate of one primitive, paired with the
// matching analytic gradient entries.
struct CloudCoords {
    std::vector<double*> ptr;
    std::vector<double> analytic;
};

CloudCoords cloud_coords(GaussianCloud& cloud, const ParamGrads& grads) {
    CloudCoords cc;
    const int ncoef = cloud.sh_coeffs();
    for (size_t i = 0; i < cloud.size(); ++i) {
        Gaussian4D& g = cloud.prims[i];
        for (int a = 0; a < 4; ++a) {
            cc.ptr.push_back(&g.position[a]);
            cc.analytic.push_back(grads.position[i][a]);
        }
        for (int a = 0; a < 3; ++a) {
            cc.ptr.push_back(&g.log_scale[a]);
            cc.analytic.push_back(grads.log_scale[i][a]);
        }
        for (int a = 0; a < 4; ++a) {
            cc.ptr.push_back(&g.rotation[a]);
            cc.analytic.push_back(grads.rotation[i][a]);
        }
        cc.ptr.push_back(&g.opacity_logit);
        cc.analytic.push_back(grads.opacity_logit[i]);
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < ncoef; ++k) {
                cc.ptr.push_back(&g.sh[c * kMaxShCoeffs + k]);
                cc.analytic.push_back(grads.sh[i][c * kMaxShCoeffs + k]);
            }
    }
    return cc;
}

void append_pipeline_checks(std::vector<GradCheckResult>& out) {
    TinyScene scene;
    Model& model = scene.model;
    LossWeights weights{0.2, 0.8};
    Vec3 background(0.08, 0.05, 0.12);
    Pipeline pipe(model, weights, background);

    ParamGrads grads;
    grads.init(model);
    grads.zero();
    pipe.run(scene.views, false, &grads);
    std::vector<double> field_flat = model.field.collapse_gradients(grads.field);

    // Mark the field dirty on every evaluation: the field sweep writes plane
    // cells through raw pointers, so prepare()'s thumbnail refresh would
    // otherwise see a clean flag and keep stale pooled levels.
    auto loss = [&] {
        model.field.spatial_base(0);
        return pipe.run(scene.views, false, nullptr).total;
    };

    {
        Check chk("pipeline_cloud", kPipelineH, kPipelineTol, kPipelineFloor);
        CloudCoords cc = cloud_coords(model.cloud, grads);
        for (size_t j = 0; j < cc.ptr.size(); ++j)
            chk.record(cc.analytic[j], central_diff(cc.ptr[j], chk.h(), loss));
        out.push_back(chk.finish());
    }
    {
        Check chk("pipeline_field", kPipelineH, kPipelineTol, kPipelineFloor);
        for (size_t i = 0; i < model.field.trainable_count(); ++i)
            chk.record(field_flat[i],
                       central_diff(field_trainable_ptr(model.field, i), chk.h(), loss));
        model.field.ensure_thumbnails();
        out.push_back(chk.finish());
    }
    {
        Check chk("pipeline_decoder", kPipelineH, kPipelineTol, kPipelineFloor);
        for (size_t i = 0; i < model.decoder.trainable_count(); ++i)
            chk.record(grads.decoder[i],
                       central_diff(&model.decoder.params()[i], chk.h(), loss));
        out.push_back(chk.finish());
    }

    // Photometric-only configuration: total reduces to plain L1.
    {
        LossWeights l1w{0.0, 0.0};
        Pipeline pipe_l1(model, l1w, background);
        ParamGrads g1;
        g1.init(model);
        g1.zero();
        pipe_l1.run(scene.views, false, &g1);
        auto loss_l1 = [&] { return pipe_l1.run(scene.views, false, nullptr).total; };
        Check chk("pipeline_l1_cloud", kPipelineH, kPipelineTol, kPipelineFloor);
        CloudCoords cc = cloud_coords(model.cloud, g1);
        for (size_t j = 0; j < cc.ptr.size(); ++j)
            chk.record(cc.analytic[j], central_diff(cc.ptr[j], chk.h(), loss_l1));
        out.push_back(chk.finish());
    }
}

} // namespace

std::vector<GradCheckResult> run_gradient_checks(bool full) {
    std::vector<GradCheckResult> out;
    out.push_back(check_temporal_state());
    out.push_back(check_field_query());
    out.push_back(check_decoder_lifespan());
    out.push_back(check_decoder_residuals());
    out.push_back(check_sh_color());
    out.push_back(check_compose());
    out.push_back(check_project_splat());
    out.push_back(check_rasterize());
    out.push_back(check_l1_image());
    out.push_back(check_ssim_image());
    if (full) append_pipeline_checks(out);
    return out;
}

GradCheckResult run_mutation_probe() {
    // Deliberately corrupted temporal backward; the harness must flag it.
    Check chk("mutation_probe", kSingleOpH, kSingleOpTol, kSingleOpFloor);
    TemporalState ts{0.4, 0.3, kDefaultSharpness};
    double t = 0.55;
    StateGrad g = state_function_grad(ts, t);
    g.d_tau *= 1.01;
    double tau = ts.tau;
    double fd = central_diff(&tau, chk.h(), [&] {
        TemporalState s{tau, ts.sigma, ts.k};
        return state_function(s, t);
    });
    chk.record(g.d_tau, fd);
    return chk.finish();
}

std::string grad_report_jsonl(const std::vector<GradCheckResult>& results) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (const GradCheckResult& r : results) {
        os << "{\"name\":\"" << r.name << "\",\"max_rel_err\":" << r.max_rel_err
           << ",\"worst_index\":" << r.worst_index << ",\"n_checked\":" << r.n_checked
           << ",\"h\":" << r.h << ",\"tolerance\":" << r.tolerance
           << ",\"pass\":" << (r.pass ? "true" : "false") << "}\n";
    }
    return os.str();
}

bool all_passed(const std::vector<GradCheckResult>& results) {
    for (const GradCheckResult& r : results)
        if (!r.pass) return false;
    return true;
}

} // namespace saro
