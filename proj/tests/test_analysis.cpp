#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "saro/analysis.hpp"
#include "support.hpp"

using namespace saro;
namespace st = saro::testing;

TEST_CASE("otsu splits a bimodal lifespan population") {
    std::vector<double> sigmas;
    Rng rng(404);
    for (int i = 0; i < 60; ++i) sigmas.push_back(0.05 + 0.05 * st::u01(rng));
    for (int i = 0; i < 140; ++i) sigmas.push_back(5.0 + 5.0 * st::u01(rng));
    LifespanThreshold t = otsu_lifespan_threshold(sigmas);
    CHECK_FALSE(t.degenerate);
    // the threshold lands in the gap: every short draw below, every long above
    const double max_short = *std::max_element(sigmas.begin(), sigmas.begin() + 60);
    const double min_long = *std::min_element(sigmas.begin() + 60, sigmas.end());
    CHECK(t.sigma_star > max_short);
    CHECK(t.sigma_star < min_long);
}

TEST_CASE("otsu degenerates on a single cluster") {
    std::vector<double> sigmas(50, 0.7);
    LifespanThreshold t = otsu_lifespan_threshold(sigmas);
    CHECK(t.degenerate);
    CHECK(t.sigma_star < 0.7); // below the cluster: everything lands on the static side
    CHECK(t.sigma_star > 0.0);
    CHECK_THROWS_AS(otsu_lifespan_threshold({}), SaroError);
}

namespace {

// Cloud with a decoder whose lifespan head is hand-biased: zero weights keep
// sigma = softplus(bias) + floor for every primitive, so the target lifespan
// is set directly through the bias.
Model two_class_model(size_t n_short, size_t n_long, uint64_t seed) {
    GaussianCloud cloud = init_random(n_short + n_long, Bbox{}, seed);
    Model model(std::move(cloud), 4, 8, 8, 2);
    Rng fr(seed + 1);
    model.field.init_uniform(fr, 0.2);
    model.decoder.init_weights(seed + 2);
    return model;
}

} // namespace

TEST_CASE("lifespan segmentation by manual threshold") {
    Model model = two_class_model(3, 5, 9001);
    std::vector<double> sig = model_lifespans(model);
    REQUIRE(sig.size() == 8);
    // fresh decoder: every lifespan is identical
    for (double s : sig) CHECK(s == sig[0]);

    Segmentation all_dyn = segment_by_lifespan(model, sig[0] + 1.0);
    CHECK(all_dyn.n_dynamic == 8);
    CHECK(all_dyn.n_static == 0);
    CHECK(all_dyn.sigma_star == sig[0] + 1.0);

    Segmentation none_dyn = segment_by_lifespan(model, sig[0] * 0.5);
    CHECK(none_dyn.n_dynamic == 0);
    CHECK(none_dyn.n_static == 8);

    // Otsu path on the degenerate population keeps everything static
    Segmentation otsu = segment_by_lifespan(model);
    CHECK(otsu.degenerate);
    CHECK(otsu.n_dynamic == 0);
    CHECK(otsu.n_static == 8);
    REQUIRE(otsu.dynamic.size() == 8);
    CHECK(otsu.n_dynamic + otsu.n_static == 8);
}

TEST_CASE("segmentation accuracy against a teacher copy") {
    TeacherBundle bundle = generate_teacher_scene(77, 60, 4, 2, 24);
    const TeacherScene& teacher = bundle.teacher;

    // student cloud sitting exactly on the teacher primitives
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    cloud.bbox = bundle.dataset.bbox;
    size_t n_dyn_truth = 0;
    for (const TeacherPrim& tp : teacher.prims) {
        Gaussian4D g;
        Vec3 p = tp.position_at(tp.tau);
        g.position = Vec4(p[0], p[1], p[2], tp.tau);
        g.log_scale = tp.scale.array().log();
        g.rotation = Vec4(1, 0, 0, 0);
        g.opacity_logit = 0.0;
        g.sh.fill(0.0);
        cloud.prims.push_back(g);
        if (tp.dynamic) ++n_dyn_truth;
    }
    REQUIRE(n_dyn_truth > 0);
    REQUIRE(n_dyn_truth < teacher.prims.size());

    Model model(std::move(cloud), 4, 8, 8, 2);

    // label straight from the teacher's own lifespans
    Segmentation seg;
    seg.dynamic.resize(teacher.prims.size());
    for (size_t i = 0; i < teacher.prims.size(); ++i)
        seg.dynamic[i] = teacher.prims[i].dynamic ? 1 : 0;
    CHECK(segmentation_accuracy(model, seg, teacher) == 1.0);

    // flipping every label inverts the score
    for (auto& d : seg.dynamic) d = d ? 0 : 1;
    CHECK(segmentation_accuracy(model, seg, teacher) == 0.0);
}

TEST_CASE("evaluation report") {
    TeacherBundle bundle = generate_teacher_scene(55, 30, 3, 2, 24);
    Model model = two_class_model(10, 10, 31);
    model.cloud.bbox = bundle.dataset.bbox;

    EvalReport rep = evaluate(model, bundle.dataset, "test");
    CHECK(rep.n_frames == 3);
    CHECK(rep.prim_count == 20);
    CHECK(std::isfinite(rep.psnr));
    CHECK(rep.ssim > -1.0);
    CHECK(rep.ssim <= 1.0);
    CHECK(rep.dssim == doctest::Approx((1.0 - rep.ssim) / 2.0).epsilon(1e-15));
    CHECK(rep.dssim_global == doctest::Approx((1.0 - rep.ssim_global) / 2.0).epsilon(1e-15));
    CHECK(rep.render_ms_per_frame >= 0.0);

    CHECK_THROWS_AS(evaluate(model, bundle.dataset, "nope"), SaroError);

    auto j = nlohmann::json::parse(eval_report_json(rep));
    CHECK(j["psnr"].get<double>() == doctest::Approx(rep.psnr).epsilon(1e-12));
    CHECK(j["ssim"].get<double>() == doctest::Approx(rep.ssim).epsilon(1e-12));
    CHECK(j["n_frames"].get<size_t>() == 3);
    CHECK(j["prim_count"].get<size_t>() == 20);
    CHECK(j.contains("dssim"));
    CHECK(j.contains("ssim_global"));
}
