#include <doctest.h>

#include <cmath>

#include "saro/rasterizer.hpp"
#include "support.hpp"

using namespace saro;
namespace st = saro::testing;

TEST_CASE("sh color: constant band and band-one antisymmetry") {
    double sh[3 * kMaxShCoeffs] = {};
    sh[0] = 0.7; // red DC only
    Vec3 pre;
    Vec3 c = sh_to_color(sh, 1, Vec3(0.3, 0.5, -0.8), &pre);
    CHECK(c[0] == doctest::Approx(0.5 + kShBasis0 * 0.7).epsilon(1e-14));
    CHECK(c[1] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(pre[0] == c[0]);

    // pure band-1 color flips its deviation from 0.5 when the view flips
    double sh1[3 * kMaxShCoeffs] = {};
    sh1[0 * 4 + 1] = 0.2;
    sh1[0 * 4 + 2] = -0.15;
    sh1[0 * 4 + 3] = 0.1;
    Vec3 dir(0.4, -1.2, 0.8);
    Vec3 cp = sh_to_color(sh1, 4, dir);
    Vec3 cm = sh_to_color(sh1, 4, -dir);
    CHECK(cp[0] + cm[0] == doctest::Approx(1.0).epsilon(1e-13));

    // direction scale invariance (internal normalization)
    Vec3 cs = sh_to_color(sh1, 4, dir * 7.5);
    CHECK(cs[0] == doctest::Approx(cp[0]).epsilon(1e-13));

    // negative pre-clamp values floor at zero
    double shn[3 * kMaxShCoeffs] = {};
    shn[0] = -10.0;
    Vec3 pren;
    Vec3 cn = sh_to_color(shn, 1, dir, &pren);
    CHECK(cn[0] == 0.0);
    CHECK(pren[0] < 0.0);
}

TEST_CASE("lookat camera geometry") {
    Vec3 eye(1.0, 2.0, -3.0), target(0.2, -0.1, 0.4);
    Camera cam = make_lookat_camera(eye, target, Vec3(0, 1, 0), 60.0, 64, 48, 0.05);
    cam.validate();
    CHECK(cam.position().isApprox(eye, 1e-12));
    // the target lands on the optical axis at positive depth
    Vec4 t_h(target[0], target[1], target[2], 1.0);
    Vec3 in_cam = (cam.world_to_cam * t_h).head<3>();
    CHECK(std::abs(in_cam[0]) < 1e-12);
    CHECK(std::abs(in_cam[1]) < 1e-12);
    CHECK(in_cam[2] > 0.0);
    CHECK(cam.cx == doctest::Approx(32.0));
    CHECK(cam.cy == doctest::Approx(24.0));
    // vertical fov pins fy: fy = (h/2) / tan(fov/2)
    CHECK(cam.fy == doctest::Approx(24.0 / std::tan(30.0 * M_PI / 180.0)).epsilon(1e-12));

    Camera bad = cam;
    bad.world_to_cam(0, 0) = 3.0;
    CHECK_THROWS_AS(bad.validate(), SaroError);
    bad = cam;
    bad.fx = 0.0;
    CHECK_THROWS_AS(bad.validate(), SaroError);
}

TEST_CASE("projection of an axis-centered gaussian is analytic") {
    Camera cam;
    cam.world_to_cam = Mat4::Identity();
    cam.fx = cam.fy = 100.0;
    cam.cx = cam.cy = 32.0;
    cam.width = cam.height = 64;
    cam.near_plane = 0.05;

    Gaussian3D g;
    g.position = Vec3(0, 0, 2);
    g.scale = Vec3(0.01, 0.01, 0.01);
    g.opacity = 0.8;
    g.sh[0] = 0.5;

    auto s = project_splat(g, cam, 1, 3);
    REQUIRE(s.has_value());
    CHECK(s->mean[0] == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(s->mean[1] == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(s->depth == doctest::Approx(2.0).epsilon(1e-12));
    // (fx * s / z)^2 + screen dilation
    CHECK(s->cov_a == doctest::Approx(0.25 + kCovDilation).epsilon(1e-10));
    CHECK(s->cov_c == doctest::Approx(0.25 + kCovDilation).epsilon(1e-10));
    CHECK(s->cov_b == doctest::Approx(0.0));
    CHECK(s->opacity == 0.8);
    CHECK(s->prim_index == 3);

    Gaussian3D behind = g;
    behind.position = Vec3(0, 0, 0.01);
    CHECK_FALSE(project_splat(behind, cam, 1, 0).has_value());
    Gaussian3D offscreen = g;
    offscreen.position = Vec3(50, 0, 2);
    CHECK_FALSE(project_splat(offscreen, cam, 1, 0).has_value());
}

static std::vector<Splat2D> random_splats(Rng& rng, int n, double w, double h) {
    std::vector<Splat2D> out(n);
    for (int i = 0; i < n; ++i) {
        Splat2D& s = out[i];
        s.mean = Vec2(st::u01(rng) * (w + 8) - 4, st::u01(rng) * (h + 8) - 4);
        s.cov_a = 0.4 + 4.0 * st::u01(rng);
        s.cov_c = 0.4 + 4.0 * st::u01(rng);
        s.cov_b = 0.8 * st::usym(rng) * std::sqrt(s.cov_a * s.cov_c);
        s.depth = 0.2 + 5.0 * st::u01(rng);
        s.opacity = 0.05 + 0.9 * st::u01(rng);
        s.color = Vec3(st::u01(rng), st::u01(rng), st::u01(rng));
        s.prim_index = i;
    }
    return out;
}

TEST_CASE("tiled compositor matches the per-pixel reference bitwise") {
    Rng rng(2024);
    for (int scene = 0; scene < 10; ++scene) {
        auto splats = random_splats(rng, 40 + scene * 17, 64, 64);
        RasterizeOptions opts;
        opts.background = Vec3(st::u01(rng), st::u01(rng), st::u01(rng));
        opts.want_depth = (scene % 2 == 0);
        opts.count_blends = true;
        RasterizeResult tiled = rasterize(splats, 64, 64, opts);
        RasterizeResult naive = rasterize_oracle(splats, 64, 64, opts);
        CHECK(tiled.color.data == naive.color.data);
        CHECK(tiled.depth == naive.depth);
        CHECK(tiled.blend_counts == naive.blend_counts);
    }
}

TEST_CASE("compositing a known two-splat stack") {
    // both cover pixel (8, 8) dead center with q = 0
    Splat2D front, back;
    front.mean = back.mean = Vec2(8.5, 8.5);
    front.cov_a = front.cov_c = back.cov_a = back.cov_c = 0.5;
    front.cov_b = back.cov_b = 0.0;
    front.depth = 1.0;
    back.depth = 2.0;
    front.opacity = 0.6;
    back.opacity = 0.5;
    front.color = Vec3(1, 0, 0);
    back.color = Vec3(0, 1, 0);
    front.prim_index = 0;
    back.prim_index = 1;

    RasterizeOptions opts;
    opts.background = Vec3(0, 0, 1);
    RasterizeResult r = rasterize({back, front}, 16, 16, opts); // input order reversed
    // 0.6 red + 0.4 * (0.5 green + 0.5 blue)
    CHECK(r.color.at(8, 8, 0) == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(r.color.at(8, 8, 1) == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(r.color.at(8, 8, 2) == doctest::Approx(0.2).epsilon(1e-14));

    // depth-equal splats: prim_index breaks the tie regardless of input order
    back.depth = 1.0;
    RasterizeResult a = rasterize({back, front}, 16, 16, opts);
    RasterizeResult b = rasterize({front, back}, 16, 16, opts);
    CHECK(a.color.data == b.color.data);
    CHECK(a.color.at(8, 8, 0) == doctest::Approx(0.6).epsilon(1e-14)); // index 0 first
}

TEST_CASE("contribution floors and opacity clamp") {
    RasterizeOptions opts;
    opts.background = Vec3(0.25, 0.25, 0.25);

    Splat2D s;
    s.mean = Vec2(4.5, 4.5);
    s.cov_a = s.cov_c = 0.5;
    s.cov_b = 0.0;
    s.depth = 1.0;
    s.opacity = 0.003; // below 1/255 everywhere
    s.color = Vec3(1, 1, 1);
    RasterizeResult r = rasterize({s}, 8, 8, opts);
    CHECK(r.color.at(4, 4, 0) == 0.25);

    s.opacity = 0.9999; // clamps to 0.99 at the center
    r = rasterize({s}, 8, 8, opts);
    CHECK(r.color.at(4, 4, 0) == doctest::Approx(0.99 * 1.0 + 0.01 * 0.25).epsilon(1e-12));

    RasterizeResult empty = rasterize({}, 8, 8, opts);
    for (int c = 0; c < 3; ++c) CHECK(empty.color.at(3, 5, c) == 0.25);
}

TEST_CASE("transmittance floor stops deep stacks") {
    // one-pixel footprint: q at the nearest neighbor is 1/0.1 = 10 > 9
    std::vector<Splat2D> stack(6);
    for (int i = 0; i < 6; ++i) {
        stack[i].mean = Vec2(8.5, 8.5);
        stack[i].cov_a = stack[i].cov_c = 0.1;
        stack[i].cov_b = 0.0;
        stack[i].depth = 1.0 + i;
        stack[i].opacity = 0.97;
        stack[i].color = Vec3(1, 1, 1);
        stack[i].prim_index = i;
    }
    RasterizeOptions opts;
    opts.count_blends = true;
    opts.want_depth = true;
    RasterizeResult r = rasterize(stack, 16, 16, opts);
    REQUIRE(r.blend_counts.size() == 6);
    // T after three layers: 0.03^3 = 2.7e-5 < 1e-4, so layer 4 on never blends
    CHECK(r.blend_counts[0] == 1);
    CHECK(r.blend_counts[1] == 1);
    CHECK(r.blend_counts[2] == 1);
    CHECK(r.blend_counts[3] == 0);
    CHECK(r.blend_counts[5] == 0);
    // alpha-weighted mean depth is dominated by the first layer
    CHECK(r.depth[16 * 8 + 8] == doctest::Approx((0.97 * 1.0 + 0.03 * 0.97 * 2.0 +
                                                  0.03 * 0.03 * 0.97 * 3.0) /
                                                 (0.97 + 0.03 * 0.97 + 0.03 * 0.03 * 0.97))
                                     .epsilon(1e-12));
    CHECK(r.depth[0] == 0.0); // nothing blended there
}
