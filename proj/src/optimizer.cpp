#include "saro/optimizer.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "saro/temporal.hpp"

namespace saro {

// --- Config --------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& key) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw SaroError("config: bad numeric value \"" + s + "\" for " + key);
    }
}

long long parse_int(const std::string& s, const std::string& key) {
    try {
        size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw SaroError("config: bad integer value \"" + s + "\" for " + key);
    }
}

struct ConfigEntry {
    const char* key;
    std::string (*get)(const TrainConfig&);
    void (*set)(TrainConfig&, const std::string&);
};

#define CFG_INT(field)                                                                 \
    {#field, [](const TrainConfig& c) { return std::to_string(c.field); },             \
     [](TrainConfig& c, const std::string& s) { c.field = int(parse_int(s, #field)); }}
#define CFG_SIZE(field)                                                                  \
    {#field, [](const TrainConfig& c) { return std::to_string(c.field); },               \
     [](TrainConfig& c, const std::string& s) { c.field = size_t(parse_int(s, #field)); }}
#define CFG_DBL(field)                                                           \
    {#field, [](const TrainConfig& c) { return fmt_double(c.field); },           \
     [](TrainConfig& c, const std::string& s) { c.field = parse_double(s, #field); }}
#define CFG_BOOL(field)                                                        \
    {#field, [](const TrainConfig& c) { return std::string(c.field ? "1" : "0"); }, \
     [](TrainConfig& c, const std::string& s) { c.field = parse_int(s, #field) != 0; }}
#define CFG_BG(idx, name)                                                        \
    {name, [](const TrainConfig& c) { return fmt_double(c.background[idx]); },   \
     [](TrainConfig& c, const std::string& s) { c.background[idx] = parse_double(s, name); }}

const ConfigEntry kConfigEntries[] = {
    CFG_INT(sh_degree),
    CFG_INT(feat_dim),
    CFG_INT(spatial_res),
    CFG_INT(time_res),
    CFG_INT(level_count),
    CFG_SIZE(init_count),
    CFG_DBL(field_init_amplitude),
    CFG_BOOL(init_from_point_cloud),
    CFG_DBL(kappa_base),
    CFG_INT(refresh_interval),
    CFG_INT(densify_interval),
    CFG_INT(densify_until),
    CFG_DBL(prune_opacity),
    CFG_INT(opacity_reset_interval),
    CFG_INT(warmup_iters),
    CFG_INT(total_iters),
    CFG_SIZE(max_prims),
    CFG_INT(batch_size),
    CFG_DBL(clone_size_frac),
    CFG_DBL(lr_mult_max),
    CFG_DBL(lr_position),
    CFG_DBL(lr_position_final),
    CFG_DBL(lr_scale),
    CFG_DBL(lr_scale_final),
    CFG_DBL(lr_rotation),
    CFG_DBL(lr_rotation_final),
    CFG_DBL(lr_opacity),
    CFG_DBL(lr_opacity_final),
    CFG_DBL(lr_sh),
    CFG_DBL(lr_sh_final),
    CFG_DBL(lr_field),
    CFG_DBL(lr_field_final),
    CFG_DBL(lr_decoder),
    CFG_DBL(lr_decoder_final),
    CFG_DBL(lambda1),
    CFG_DBL(lambda2),
    CFG_BG(0, "background_r"),
    CFG_BG(1, "background_g"),
    CFG_BG(2, "background_b"),
    CFG_INT(metrics_interval),
    CFG_DBL(state_sharpness),
};

#undef CFG_INT
#undef CFG_SIZE
#undef CFG_DBL
#undef CFG_BOOL
#undef CFG_BG

} // namespace

void TrainConfig::validate() const {
    auto period = [](int v, const char* name) {
        if (v < 1) throw SaroError(std::string("config: ") + name + " must be >= 1");
    };
    period(refresh_interval, "refresh_interval");
    period(densify_interval, "densify_interval");
    period(opacity_reset_interval, "opacity_reset_interval");
    period(metrics_interval, "metrics_interval");
    period(batch_size, "batch_size");
    if (!(kappa_base > 0.0)) throw SaroError("config: kappa_base must be positive");
    if (total_iters < 0 || warmup_iters < 0 || densify_until < 0)
        throw SaroError("config: iteration counts must be nonnegative");
    const double lrs[] = {lr_position, lr_position_final, lr_scale,   lr_scale_final,
                          lr_rotation, lr_rotation_final, lr_opacity, lr_opacity_final,
                          lr_sh,       lr_sh_final,       lr_field,   lr_field_final,
                          lr_decoder,  lr_decoder_final};
    for (double lr : lrs)
        if (!(lr > 0.0)) throw SaroError("config: learning rates must be positive");
    if (!(lambda1 >= 0.0 && lambda1 <= 1.0) || !(lambda2 >= 0.0))
        throw SaroError("config: loss weights out of range");
    if (feat_dim < 1 || spatial_res < 2 || time_res < 2 || level_count < 1)
        throw SaroError("config: field shape out of range");
    if (init_count < 1 || max_prims < 1) throw SaroError("config: primitive counts out of range");
    if (!(lr_mult_max >= 1.0)) throw SaroError("config: lr_mult_max must be >= 1");
    if (!(prune_opacity >= 0.0 && prune_opacity < 1.0))
        throw SaroError("config: prune_opacity out of range");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_pairs() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const ConfigEntry& e : kConfigEntries) out.emplace_back(e.key, e.get(*this));
    std::sort(out.begin(), out.end());
    return out;
}

void TrainConfig::apply(const std::map<std::string, std::string>& overrides) {
    for (const auto& [k, v] : overrides) {
        const ConfigEntry* found = nullptr;
        for (const ConfigEntry& e : kConfigEntries)
            if (k == e.key) {
                found = &e;
                break;
            }
        if (!found) throw SaroError("config: unknown key \"" + k + "\"");
        found->set(*this, v);
    }
}

TrainConfig dnerf_profile() { return TrainConfig{}; }

TrainConfig multiview_profile() {
    TrainConfig c;
    c.warmup_iters = 0;
    c.opacity_reset_interval = 3000;
    c.init_from_point_cloud = true;
    return c;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw SaroError("config: cannot open " + path);
    std::map<std::string, std::string> out;
    std::string line;
    size_t lineno = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        size_t a = s.find_first_not_of(ws);
        size_t b = s.find_last_not_of(ws);
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw SaroError("config: " + path + ":" + std::to_string(lineno) +
                            ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw SaroError("config: " + path + ":" + std::to_string(lineno) +
                                         ": empty key");
        out[key] = val;
    }
    return out;
}

// --- Schedule ------------------------------------------------------------

void adam_update(double* p, const double* g, double* m, double* v, size_t n, double lr,
                 uint64_t t) {
    const double bc1 = 1.0 - std::pow(kAdamBeta1, double(t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, double(t));
    for (size_t i = 0; i < n; ++i) {
        m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
        v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
    }
}

Schedule adaptive_schedule(double integral_i, double integral_max, double kappa_base,
                           double mult_max) {
    if (!(integral_i > 0.0) || !(integral_max > 0.0))
        throw SaroError("adaptive_schedule: integrals must be positive");
    Schedule s;
    s.kappa = kappa_base * integral_i / integral_max;
    s.lr_mult = std::min(mult_max, integral_max / integral_i);
    return s;
}

double lr_decay(const TrainConfig& cfg, uint64_t iter, ParamGroup group) {
    double start = 0.0, end = 0.0;
    switch (group) {
        case ParamGroup::kPosition: start = cfg.lr_position; end = cfg.lr_position_final; break;
        case ParamGroup::kScale: start = cfg.lr_scale; end = cfg.lr_scale_final; break;
        case ParamGroup::kRotation: start = cfg.lr_rotation; end = cfg.lr_rotation_final; break;
        case ParamGroup::kOpacity: start = cfg.lr_opacity; end = cfg.lr_opacity_final; break;
        case ParamGroup::kSh: start = cfg.lr_sh; end = cfg.lr_sh_final; break;
        case ParamGroup::kField: start = cfg.lr_field; end = cfg.lr_field_final; break;
        case ParamGroup::kDecoder: start = cfg.lr_decoder; end = cfg.lr_decoder_final; break;
    }
    if (cfg.total_iters < 1 || iter == 0) return start;
    const double t = std::min(1.0, double(iter) / double(cfg.total_iters));
    if (t >= 1.0) return end;
    return std::exp(std::log(start) + t * (std::log(end) - std::log(start)));
}

// --- State ---------------------------------------------------------------

void TrainState::init(const Model& model) {
    const size_t n = model.cloud.size();
    position.init(4 * n);
    log_scale.init(3 * n);
    rotation.init(4 * n);
    opacity.init(n);
    sh.init(3 * size_t(kMaxShCoeffs) * n);
    field.init(model.field.trainable_count());
    decoder.init(model.decoder.trainable_count());
    integral.assign(n, 0.0);
    integral_max = 0.0;
    grad_accum.assign(n, 0.0);
    grad_vec.assign(n, Vec3::Zero());
    grad_count.assign(n, 0);
}

void refresh_integrals(Model& model, TrainState& state) {
    const size_t n = model.cloud.size();
    const int m = model.field.feat_dim();
    model.field.ensure_thumbnails();
    state.integral.resize(n);
    parallel_chunks(n, 256, [&](size_t, size_t begin, size_t end) {
        std::vector<double> f(size_t(m), 0.0);
        for (size_t i = begin; i < end; ++i) {
            const Gaussian4D& g = model.cloud.prims[i];
            Vec3 scale = g.log_scale.array().exp();
            model.field.query(g.position, scale, f.data());
            const double sigma = model.decoder.lifespan(f.data());
            TemporalState ts{g.position[3], sigma, model.state_sharpness};
            state.integral[i] = temporal_integral(ts, 0.0, 1.0);
        }
    });
    state.integral_max = 0.0;
    for (double v : state.integral) state.integral_max = std::max(state.integral_max, v);
}

// --- Updates -------------------------------------------------------------

void adam_step(Model& model, const ParamGrads& grads, TrainState& state,
               const TrainConfig& cfg) {
    const size_t n = model.cloud.size();
    if (grads.position.size() != n || state.opacity.m.size() != n)
        throw SaroError("adam_step: gradient/state shape mismatch");
    const uint64_t t = ++state.iter;
    const uint64_t it = t - 1; // decay uses the pre-step iteration index

    std::vector<double> fparams(model.field.trainable_count());
    model.field.gather_trainable(fparams.data());
    std::vector<double> fgrads = model.field.collapse_gradients(grads.field);
    adam_update(fparams.data(), fgrads.data(), state.field.m.data(), state.field.v.data(),
                fparams.size(), lr_decay(cfg, it, ParamGroup::kField), t);
    model.field.scatter_trainable(fparams.data());

    adam_update(model.decoder.params().data(), grads.decoder.data(), state.decoder.m.data(),
                state.decoder.v.data(), grads.decoder.size(),
                lr_decay(cfg, it, ParamGroup::kDecoder), t);

    const double lr_pos = lr_decay(cfg, it, ParamGroup::kPosition);
    const double lr_scl = lr_decay(cfg, it, ParamGroup::kScale);
    const double lr_rot = lr_decay(cfg, it, ParamGroup::kRotation);
    const double lr_opa = lr_decay(cfg, it, ParamGroup::kOpacity);
    const double lr_sh0 = lr_decay(cfg, it, ParamGroup::kSh);
    const double lr_shk = lr_sh0 / 20.0;
    const int ncoef = model.cloud.sh_coeffs();
    const bool scheduled = state.integral.size() == n && state.integral_max > 0.0;
    for (size_t i = 0; i < n; ++i) {
        double mult = 1.0;
        if (scheduled && state.integral[i] > 0.0)
            mult = adaptive_schedule(state.integral[i], state.integral_max, cfg.kappa_base,
                                     cfg.lr_mult_max)
                       .lr_mult;
        Gaussian4D& g = model.cloud.prims[i];
        adam_update(g.position.data(), grads.position[i].data(), state.position.m.data() + 4 * i,
                    state.position.v.data() + 4 * i, 4, lr_pos * mult, t);
        adam_update(g.log_scale.data(), grads.log_scale[i].data(),
                    state.log_scale.m.data() + 3 * i, state.log_scale.v.data() + 3 * i, 3,
                    lr_scl * mult, t);
        adam_update(g.rotation.data(), grads.rotation[i].data(), state.rotation.m.data() + 4 * i,
                    state.rotation.v.data() + 4 * i, 4, lr_rot * mult, t);
        adam_update(&g.opacity_logit, &grads.opacity_logit[i], state.opacity.m.data() + i,
                    state.opacity.v.data() + i, 1, lr_opa, t);
        const size_t sh_off = 3 * size_t(kMaxShCoeffs) * i;
        for (int c = 0; c < 3; ++c) {
            for (int k = 0; k < ncoef; ++k) {
                const size_t a = size_t(c) * kMaxShCoeffs + size_t(k);
                const double lr = k == 0 ? lr_sh0 * mult : lr_shk;
                adam_update(&g.sh[a], &grads.sh[i][a], state.sh.m.data() + sh_off + a,
                            state.sh.v.data() + sh_off + a, 1, lr, t);
            }
        }
    }
}

namespace {

void remap_rows(AdamBuf& buf, const std::vector<int>& src, size_t stride) {
    AdamBuf next;
    next.init(src.size() * stride);
    for (size_t r = 0; r < src.size(); ++r) {
        if (src[r] < 0) continue;
        const size_t s = size_t(src[r]) * stride;
        for (size_t j = 0; j < stride; ++j) {
            next.m[r * stride + j] = buf.m[s + j];
            next.v[r * stride + j] = buf.v[s + j];
        }
    }
    buf = std::move(next);
}

} // namespace

DensifyReport densify_and_prune(Model& model, TrainState& state, const TrainConfig& cfg) {
    const size_t n = model.cloud.size();
    if (state.integral.size() != n || !(state.integral_max > 0.0))
        throw SaroError("densify_and_prune: integrals not refreshed");
    const double extent = (model.cloud.bbox.max - model.cloud.bbox.min).norm();
    const double size_thresh = cfg.clone_size_frac * extent;
    long budget = long(cfg.max_prims) - long(n);

    DensifyReport rep;
    std::vector<Gaussian4D> out;
    out.reserve(n + 16);
    std::vector<int> src; // old row feeding each new row; -1 = fresh moments
    src.reserve(n + 16);
    for (size_t i = 0; i < n; ++i) {
        const Gaussian4D& g = model.cloud.prims[i];
        if (logistic(g.opacity_logit) < cfg.prune_opacity) {
            ++rep.pruned;
            continue;
        }
        const double mean_grad =
            state.grad_count[i] ? state.grad_accum[i] / double(state.grad_count[i]) : 0.0;
        // A primitive whose mass left [0,1] entirely has integral 0 (underflow):
        // it renders nowhere, accumulates no gradient, and just passes through.
        const double kappa = state.integral[i] > 0.0
                                 ? adaptive_schedule(state.integral[i], state.integral_max,
                                                     cfg.kappa_base, cfg.lr_mult_max)
                                       .kappa
                                 : 0.0;
        if (!(mean_grad > kappa) || budget < 1) {
            out.push_back(g);
            src.push_back(int(i));
            continue;
        }
        const double max_scale = g.log_scale.array().exp().maxCoeff();
        if (max_scale < size_thresh) {
            out.push_back(g);
            src.push_back(int(i));
            out.push_back(clone(g, state.grad_vec[i], 0.5 * max_scale));
            src.push_back(-1);
            --budget;
            ++rep.cloned;
        } else {
            auto kids = split(g, 2, state.rng);
            for (auto& kid : kids) {
                out.push_back(kid);
                src.push_back(-1);
            }
            --budget;
            ++rep.splitted;
        }
    }
    model.cloud.prims = std::move(out);

    remap_rows(state.position, src, 4);
    remap_rows(state.log_scale, src, 3);
    remap_rows(state.rotation, src, 4);
    remap_rows(state.opacity, src, 1);
    remap_rows(state.sh, src, 3 * size_t(kMaxShCoeffs));
    const size_t nn = model.cloud.size();
    state.grad_accum.assign(nn, 0.0);
    state.grad_vec.assign(nn, Vec3::Zero());
    state.grad_count.assign(nn, 0);
    state.integral.assign(nn, 0.0); // stale until the next refresh
    state.integral_max = 0.0;
    return rep;
}

void opacity_reset(Model& model, TrainState& state) {
    const double target = logit(0.01);
    for (size_t i = 0; i < model.cloud.size(); ++i) {
        Gaussian4D& g = model.cloud.prims[i];
        if (logistic(g.opacity_logit) > 0.01) {
            g.opacity_logit = target;
            state.opacity.m[i] = 0.0;
            state.opacity.v[i] = 0.0;
        }
    }
}

// --- Training loop -------------------------------------------------------

TrainResult train(const Dataset& data, const TrainConfig& cfg, uint64_t seed,
                  const std::string& metrics_path) {
    cfg.validate();
    if (data.frames.empty()) throw SaroError("train: empty dataset");
    if (data.images.size() != data.frames.size())
        throw SaroError("train: dataset images not loaded");
    const std::vector<size_t> train_idx = data.split_indices("train");
    if (train_idx.empty()) throw SaroError("train: no frames tagged train");
    const std::vector<size_t> test_idx = data.split_indices("test");

    GaussianCloud cloud;
    if (cfg.init_from_point_cloud && !data.points.empty()) {
        cloud = init_from_points(data.points, data.point_colors, cfg.sh_degree);
        cloud.bbox = data.bbox;
    } else {
        cloud = init_random(cfg.init_count, data.bbox, seed, cfg.sh_degree);
    }
    Model model(std::move(cloud), cfg.feat_dim, cfg.spatial_res, cfg.time_res, cfg.level_count);
    model.state_sharpness = cfg.state_sharpness;
    Rng field_rng(seed + 1);
    model.field.init_uniform(field_rng, cfg.field_init_amplitude);
    model.decoder.init_weights(seed + 2);

    TrainState state;
    state.init(model);
    state.rng = Rng(seed + 3);
    refresh_integrals(model, state);

    Pipeline pipe(model, LossWeights{cfg.lambda1, cfg.lambda2}, cfg.background);
    ParamGrads grads;
    grads.init(model);

    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path);
        if (!metrics) throw SaroError("train: cannot open metrics file " + metrics_path);
    }

    auto snapshot = [&](uint64_t it) {
        std::ostringstream oss;
        oss << state.rng;
        return make_checkpoint(model, it, oss.str(), cfg.to_pairs());
    };
    TrainResult result;
    result.checkpoint = snapshot(0);

    for (uint64_t iter = 0; iter < uint64_t(cfg.total_iters); ++iter) {
        const bool warmup = iter < uint64_t(cfg.warmup_iters);
        std::vector<ViewSpec> views;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const size_t pick = train_idx[size_t(state.rng() % train_idx.size())];
            ViewSpec v;
            v.cam = data.cameras[size_t(data.frames[pick].camera)];
            v.t0 = data.frames[pick].time;
            v.target = &data.images[pick];
            views.push_back(v);
        }
        grads.zero();
        const LossTerms terms = pipe.run(views, warmup, &grads);
        if (!std::isfinite(terms.total)) {
            result.aborted = true;
            result.final_loss = terms.total;
            result.iters_run = iter;
            return result; // checkpoint = last good snapshot
        }
        adam_step(model, grads, state, cfg);
        for (size_t i = 0; i < model.cloud.size(); ++i) {
            const double norm = grads.position[i].norm();
            state.grad_accum[i] += norm;
            state.grad_vec[i] += grads.position[i].head<3>();
            if (norm > 0.0) ++state.grad_count[i];
        }

        const uint64_t done = iter + 1;
        bool resized = false;
        if (!warmup && done % uint64_t(cfg.densify_interval) == 0 &&
            done <= uint64_t(cfg.densify_until)) {
            refresh_integrals(model, state);
            densify_and_prune(model, state, cfg);
            resized = true;
        }
        if (done % uint64_t(cfg.opacity_reset_interval) == 0 && done < uint64_t(cfg.total_iters))
            opacity_reset(model, state);
        if (resized) {
            grads.init(model);
            refresh_integrals(model, state);
        } else if (done % uint64_t(cfg.refresh_interval) == 0) {
            refresh_integrals(model, state);
        }

        result.final_loss = terms.total;
        result.iters_run = done;
        if (done % uint64_t(cfg.metrics_interval) == 0 || done == uint64_t(cfg.total_iters)) {
            result.checkpoint = snapshot(done);
            if (metrics.is_open()) {
                nlohmann::json line;
                line["iter"] = done;
                line["l1"] = terms.l1;
                line["dssim"] = terms.dssim;
                line["l_sr"] = terms.l_sr;
                line["total"] = terms.total;
                line["prims"] = model.cloud.size();
                if (!test_idx.empty()) {
                    const size_t pick = test_idx[0];
                    RasterizeOptions opts;
                    opts.background = cfg.background;
                    RasterizeResult r =
                        render_model(model, data.cameras[size_t(data.frames[pick].camera)],
                                     data.frames[pick].time, opts, warmup);
                    line["psnr"] = psnr(r.color, data.images[pick]);
                }
                metrics << line.dump() << std::endl; // flush: the log must survive a crash
            }
        }
    }
    return result;
}

} // namespace saro
