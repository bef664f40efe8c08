#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "saro/optimizer.hpp"
#include "saro/scene_io.hpp"
#include "saro/temporal.hpp"
#include "support.hpp"

using namespace saro;
namespace st = saro::testing;

TEST_CASE("config snapshot round-trips through key=value pairs") {
    TrainConfig cfg;
    cfg.total_iters = 123;
    cfg.lr_field = 0.0625;
    cfg.background = Vec3(0.25, 0.5, 1.0);
    cfg.kappa_base = 3.5e-7;
    auto pairs = cfg.to_pairs();

    TrainConfig back;
    back.apply({pairs.begin(), pairs.end()});
    CHECK(back.total_iters == 123);
    CHECK(back.lr_field == 0.0625);
    CHECK(back.background == Vec3(0.25, 0.5, 1.0));
    CHECK(back.kappa_base == 3.5e-7);
    CHECK(back.to_pairs() == pairs);

    CHECK_THROWS_AS(back.apply({{"no_such_key", "1"}}), SaroError);
    CHECK_THROWS_AS(back.apply({{"total_iters", "abc"}}), SaroError);
}

TEST_CASE("config file parsing") {
    std::string dir = st::scratch_dir("cfg");
    {
        std::ofstream out(dir + "/t.cfg");
        out << "# comment line\n"
               "total_iters = 77\n"
               "\n"
               "lambda1=0.5   \n"
               "init_count = 12\n";
    }
    auto kv = parse_config_file(dir + "/t.cfg");
    TrainConfig cfg;
    cfg.apply(kv);
    CHECK(cfg.total_iters == 77);
    CHECK(cfg.lambda1 == 0.5);
    CHECK(cfg.init_count == 12);

    {
        std::ofstream out(dir + "/bad.cfg");
        out << "not a pair\n";
    }
    CHECK_THROWS_AS(parse_config_file(dir + "/bad.cfg"), SaroError);
    CHECK_THROWS_AS(parse_config_file(dir + "/missing.cfg"), SaroError);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.validate();
    TrainConfig bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), SaroError);
    bad = cfg;
    bad.lambda1 = 1.5;
    CHECK_THROWS_AS(bad.validate(), SaroError);
    bad = cfg;
    bad.kappa_base = 0.0;
    CHECK_THROWS_AS(bad.validate(), SaroError);
    bad = cfg;
    bad.lr_position = -1.0;
    CHECK_THROWS_AS(bad.validate(), SaroError);
    bad = cfg;
    bad.refresh_interval = 0;
    CHECK_THROWS_AS(bad.validate(), SaroError);
}

TEST_CASE("adam single step and convergence") {
    double p = 1.0, g = 0.5, m = 0.0, v = 0.0;
    adam_update(&p, &g, &m, &v, 1, 0.1, 1);
    // bias-corrected first step moves by lr * sign(g)
    CHECK(p == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(m == doctest::Approx(0.05).epsilon(1e-14));
    CHECK(v == doctest::Approx(2.5e-4).epsilon(1e-14));

    double x = -4.0, mx = 0.0, vx = 0.0;
    for (uint64_t t = 1; t <= 600; ++t) {
        double gx = 2.0 * (x - 3.0);
        adam_update(&x, &gx, &mx, &vx, 1, 0.05, t);
    }
    CHECK(std::abs(x - 3.0) < 1e-3);
}

TEST_CASE("learning-rate decay hits its endpoints exactly") {
    TrainConfig cfg;
    cfg.total_iters = 1000;
    CHECK(lr_decay(cfg, 0, ParamGroup::kPosition) == cfg.lr_position);
    CHECK(lr_decay(cfg, 1000, ParamGroup::kPosition) == cfg.lr_position_final);
    CHECK(lr_decay(cfg, 5000, ParamGroup::kPosition) == cfg.lr_position_final);
    double mid = lr_decay(cfg, 500, ParamGroup::kPosition);
    CHECK(mid == doctest::Approx(std::sqrt(cfg.lr_position * cfg.lr_position_final))
                     .epsilon(1e-12));
    // groups with equal endpoints stay put
    CHECK(lr_decay(cfg, 321, ParamGroup::kScale) ==
          doctest::Approx(cfg.lr_scale).epsilon(1e-15));
    CHECK(lr_decay(cfg, 321, ParamGroup::kOpacity) ==
          doctest::Approx(cfg.lr_opacity).epsilon(1e-15));
    // strictly decreasing for decaying groups
    CHECK(lr_decay(cfg, 100, ParamGroup::kField) > lr_decay(cfg, 900, ParamGroup::kField));
}

TEST_CASE("adaptive schedule trades integral mass for rate") {
    const double kb = 5e-7;
    Schedule s0 = adaptive_schedule(0.01, 1.0, kb);
    Schedule s1 = adaptive_schedule(1.0, 1.0, kb);
    CHECK(s0.kappa == kb * 0.01);
    CHECK(s1.kappa == kb);
    CHECK(s0.lr_mult == 100.0); // 1/0.01 caps at the default mult_max
    CHECK(s1.lr_mult == 1.0);
    CHECK(s0.kappa < s1.kappa);
    CHECK(s0.lr_mult > s1.lr_mult);
    CHECK(adaptive_schedule(0.001, 1.0, kb, 20.0).lr_mult == 20.0);
    // exact ratios, no rounding slack
    CHECK(s1.kappa / s0.kappa == 100.0);
    CHECK_THROWS_AS(adaptive_schedule(0.0, 1.0, kb), SaroError);
}

static Model schedule_model(uint64_t seed, size_t n) {
    GaussianCloud cloud = init_random(n, Bbox{}, seed);
    Model model(std::move(cloud), 4, 8, 8, 2);
    Rng fr(seed + 1);
    model.field.init_uniform(fr, 0.3);
    model.decoder.init_weights(seed + 2);
    Rng dj(seed + 3);
    for (double& p : model.decoder.params()) p += 0.2 * st::usym(dj);
    return model;
}

TEST_CASE("integral refresh matches the analytic state integral") {
    Model model = schedule_model(3, 10);
    TrainState state;
    state.init(model);
    refresh_integrals(model, state);
    REQUIRE(state.integral.size() == 10);
    double expect_max = 0.0;
    for (size_t i = 0; i < 10; ++i) {
        const Gaussian4D& g = model.cloud.prims[i];
        double f[4];
        Vec3 scale = g.log_scale.array().exp();
        model.field.query(g.position, scale, f);
        TemporalState ts{g.position[3], model.decoder.lifespan(f), model.state_sharpness};
        double expect = temporal_integral(ts, 0.0, 1.0);
        CHECK(state.integral[i] == doctest::Approx(expect).epsilon(1e-13));
        expect_max = std::max(expect_max, expect);
    }
    CHECK(state.integral_max == doctest::Approx(expect_max).epsilon(1e-13));
}

TEST_CASE("densify clones small primitives, splits large ones, prunes clear ones") {
    Model model = schedule_model(8, 3);
    // primitive 0: tiny, 1: huge, 2: transparent
    model.cloud.prims[0].log_scale = Vec3::Constant(std::log(0.001));
    model.cloud.prims[0].opacity_logit = logit(0.6);
    model.cloud.prims[1].log_scale = Vec3::Constant(std::log(1.0));
    model.cloud.prims[1].opacity_logit = logit(0.6);
    model.cloud.prims[2].opacity_logit = logit(0.001);

    TrainConfig cfg;
    cfg.max_prims = 100;
    TrainState state;
    state.init(model);
    refresh_integrals(model, state);

    // hand growth pressure to 0 and 1 only
    state.grad_accum[0] = 10.0;
    state.grad_vec[0] = Vec3(0, 5, 0);
    state.grad_count[0] = 5;
    state.grad_accum[1] = 10.0;
    state.grad_vec[1] = Vec3(5, 0, 0);
    state.grad_count[1] = 5;
    state.position.m[3] = 0.77; // prim 0 tau moment; must survive the remap

    Vec3 small_scale = model.cloud.prims[0].log_scale;
    Vec3 big_scale = model.cloud.prims[1].log_scale;
    Vec4 tiny_pos = model.cloud.prims[0].position;

    DensifyReport rep = densify_and_prune(model, state, cfg);
    CHECK(rep.cloned == 1);
    CHECK(rep.splitted == 1);
    CHECK(rep.pruned == 1);
    REQUIRE(model.cloud.size() == 4);

    size_t n_small = 0, n_children = 0;
    for (const auto& p : model.cloud.prims) {
        if (p.log_scale == small_scale) ++n_small;
        if (p.log_scale.isApprox(big_scale - Vec3::Constant(std::log(1.6)), 1e-12)) ++n_children;
        CHECK(activate(p).opacity > 0.005);
    }
    CHECK(n_small == 2); // original plus clone (same scale)
    CHECK(n_children == 2);

    // the clone stepped along the accumulated direction by half its max scale
    bool found_nudged = false;
    for (const auto& p : model.cloud.prims)
        if (p.log_scale == small_scale && p.position != tiny_pos) {
            CHECK(p.position.head<3>().isApprox(
                tiny_pos.head<3>() + Vec3(0, 0.5 * 0.001, 0), 1e-12));
            CHECK(p.position[3] == tiny_pos[3]);
            found_nudged = true;
        }
    CHECK(found_nudged);

    // optimizer moments follow surviving rows; fresh rows start cold
    REQUIRE(state.position.m.size() == 4 * 4);
    CHECK(state.position.m[3] == 0.77);
    CHECK(state.grad_accum == std::vector<double>(4, 0.0));
    CHECK(state.grad_count == std::vector<uint32_t>(4, 0u));
}

TEST_CASE("opacity reset caps activation and is idempotent") {
    Model model = schedule_model(12, 6);
    model.cloud.prims[0].opacity_logit = logit(0.9);
    model.cloud.prims[1].opacity_logit = logit(0.005); // already below target
    TrainState state;
    state.init(model);
    state.opacity.m[0] = 1.0;
    state.opacity.v[0] = 2.0;

    opacity_reset(model, state);
    CHECK(activate(model.cloud.prims[0]).opacity == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(activate(model.cloud.prims[1]).opacity == doctest::Approx(0.005).epsilon(1e-12));
    CHECK(state.opacity.m[0] == 0.0);
    CHECK(state.opacity.v[0] == 0.0);

    std::vector<double> logits;
    for (const auto& p : model.cloud.prims) logits.push_back(p.opacity_logit);
    opacity_reset(model, state);
    for (size_t i = 0; i < logits.size(); ++i) CHECK(model.cloud.prims[i].opacity_logit == logits[i]);
}

static TrainConfig smoke_config() {
    TrainConfig cfg;
    cfg.feat_dim = 8;
    cfg.spatial_res = 16;
    cfg.time_res = 16;
    cfg.level_count = 2;
    cfg.init_count = 30;
    cfg.total_iters = 25;
    cfg.warmup_iters = 5;
    cfg.batch_size = 1;
    cfg.densify_interval = 10;
    cfg.densify_until = 20;
    cfg.opacity_reset_interval = 18;
    cfg.metrics_interval = 10;
    cfg.max_prims = 200;
    return cfg;
}

TEST_CASE("training is deterministic end to end") {
    TeacherBundle bundle = generate_teacher_scene(21, 40, 3, 2, 24);
    TrainConfig cfg = smoke_config();
    std::string dir = st::scratch_dir("train_det");

    TrainResult r1 = train(bundle.dataset, cfg, 11, dir + "/m1.jsonl");
    TrainResult r2 = train(bundle.dataset, cfg, 11, "");
    CHECK_FALSE(r1.aborted);
    CHECK(r1.iters_run == 25);
    CHECK(std::isfinite(r1.final_loss));
    CHECK(r1.final_loss == r2.final_loss);
    CHECK(r1.checkpoint.cloud.size() == r2.checkpoint.cloud.size());

    save_checkpoint(dir + "/a.ckpt", r1.checkpoint);
    save_checkpoint(dir + "/b.ckpt", r2.checkpoint);
    CHECK(st::files_identical(dir + "/a.ckpt", dir + "/b.ckpt"));

    // metrics stream is valid JSONL with the advertised cadence
    std::ifstream in(dir + "/m1.jsonl");
    REQUIRE(in.good());
    std::string line;
    size_t lines = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.contains("iter"));
        CHECK(j.contains("total"));
        CHECK(j.contains("psnr"));
        CHECK(j.contains("prims"));
        ++lines;
    }
    CHECK(lines == 3); // iterations 10 and 20, plus the final one at 25

    // a different seed reaches a different model
    TrainResult r3 = train(bundle.dataset, cfg, 12, "");
    CHECK(r3.final_loss != r1.final_loss);
}

TEST_CASE("non-finite targets abort onto the last good snapshot") {
    TeacherBundle bundle = generate_teacher_scene(22, 20, 2, 2, 16);
    for (size_t i = 0; i < bundle.dataset.frames.size(); ++i)
        if (bundle.dataset.frames[i].split == "train")
            bundle.dataset.images[i].data[0] = std::nan("");
    TrainConfig cfg = smoke_config();
    cfg.warmup_iters = 0;
    TrainResult r = train(bundle.dataset, cfg, 5, "");
    CHECK(r.aborted);
    CHECK(r.iters_run == 0);
    CHECK(r.checkpoint.cloud.size() == 30); // the pre-training snapshot
}

TEST_CASE("point-cloud initialization seeds the primitive set") {
    TeacherBundle bundle = generate_teacher_scene(23, 15, 2, 2, 16);
    bundle.dataset.points = {{0, 0, 0}, {0.5, 0, 0}, {0, 0.5, 0}, {0, 0, 0.5}, {0.2, 0.2, 0.2}};
    bundle.dataset.point_colors.assign(5, Vec3(0.5, 0.5, 0.5));
    TrainConfig cfg = smoke_config();
    cfg.init_from_point_cloud = true;
    cfg.total_iters = 0;
    TrainResult r = train(bundle.dataset, cfg, 2, "");
    CHECK(r.checkpoint.cloud.size() == 5);
}
