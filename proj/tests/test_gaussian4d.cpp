#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "saro/gaussian4d.hpp"
#include "support.hpp"

using namespace saro;
namespace st = saro::testing;

TEST_CASE("activation maps raw fields through exp, logistic, normalize") {
    Gaussian4D g;
    g.position = Vec4(1, 2, 3, 0.5);
    g.log_scale = Vec3(0.0, -1.0, 2.0);
    g.rotation = Vec4(2, 0, 0, 0);
    g.opacity_logit = 0.0;
    ActivatedGaussian a = activate(g);
    CHECK(a.scale[0] == 1.0);
    CHECK(a.scale[1] == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
    CHECK(a.scale[2] == doctest::Approx(std::exp(2.0)).epsilon(1e-15));
    CHECK(a.rotation[0] == 1.0);
    CHECK(a.opacity == 0.5);
    CHECK(a.sh == g.sh.data());

    CHECK(deactivate_scale(a.scale).isApprox(g.log_scale, 1e-14));
    CHECK(deactivate_opacity(0.5) == 0.0);

    Gaussian4D bad = g;
    bad.rotation.setZero();
    CHECK_THROWS_AS(activate(bad, 7), SaroError);
    bad = g;
    bad.position[0] = std::nan("");
    CHECK_THROWS_AS(activate(bad), SaroError);
}

TEST_CASE("covariance matches rotation-scale product from an independent quaternion") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        Vec4 q(st::usym(rng), st::usym(rng), st::usym(rng), st::usym(rng));
        if (q.norm() < 1e-3) continue;
        q.normalize();
        Vec3 s(0.2 + st::u01(rng), 0.2 + st::u01(rng), 0.2 + st::u01(rng));

        Mat3 R_oracle = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
        Mat3 cov_oracle = R_oracle * s.asDiagonal() * s.asDiagonal() * R_oracle.transpose();

        CHECK(quat_to_rotmat(q).isApprox(R_oracle, 1e-12));
        CHECK(covariance_from_rs(q, s).isApprox(cov_oracle, 1e-12));
    }
    CHECK_THROWS_AS(covariance_from_rs(Vec4(1, 0, 0, 0), Vec3(1, -1, 1)), SaroError);
}

TEST_CASE("split children sample the parent density") {
    Gaussian4D g;
    g.position = Vec4(0.3, -0.2, 0.8, 0.4);
    g.log_scale = Vec3(std::log(0.5), std::log(0.2), std::log(0.8));
    g.rotation = Vec4(0.8, 0.1, -0.5, 0.3);
    g.opacity_logit = 1.2;
    g.sh_at(1, 0) = 0.77;

    Rng rng(7);
    Vec3 mean = Vec3::Zero();
    Mat3 cov = Mat3::Zero();
    const int trials = 4000;
    for (int i = 0; i < trials / 2; ++i) {
        auto kids = split(g, 2, rng);
        REQUIRE(kids.size() == 2);
        for (const auto& k : kids) {
            CHECK(k.log_scale.isApprox(g.log_scale - Vec3::Constant(std::log(1.6)), 1e-12));
            CHECK(k.position[3] == g.position[3]);
            CHECK(k.rotation == g.rotation);
            CHECK(k.opacity_logit == g.opacity_logit);
            CHECK(k.sh_at(1, 0) == 0.77);
            Vec3 d = k.position.head<3>() - g.position.head<3>();
            mean += d / trials;
            cov += d * d.transpose() / trials;
        }
    }
    ActivatedGaussian a = activate(g);
    Mat3 expected = covariance_from_rs(a.rotation, a.scale);
    CHECK(mean.norm() < 0.03);
    CHECK((cov - expected).cwiseAbs().maxCoeff() < 0.05 * expected.norm());
}

TEST_CASE("clone nudges along the gradient direction") {
    Gaussian4D g;
    g.position = Vec4(1, 1, 1, 0.3);
    Gaussian4D c = clone(g, Vec3(0, 3, 0), 0.25);
    CHECK(c.position.head<3>().isApprox(Vec3(1, 1.25, 1), 1e-15));
    CHECK(c.position[3] == 0.3);
    Gaussian4D c0 = clone(g, Vec3::Zero(), 0.25);
    CHECK(c0.position == g.position);
}

TEST_CASE("random init is deterministic and in bounds") {
    Bbox box{Vec3(-2, 0, 1), Vec3(2, 1, 3)};
    GaussianCloud a = init_random(64, box, 123);
    GaussianCloud b = init_random(64, box, 123);
    REQUIRE(a.size() == 64);
    CHECK(a.sh_degree == 1);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a.prims[i].position == b.prims[i].position);
        CHECK(a.prims[i].log_scale == b.prims[i].log_scale);
        const Vec4& p = a.prims[i].position;
        CHECK(p[0] >= -2.0);
        CHECK(p[0] <= 2.0);
        CHECK(p[1] >= 0.0);
        CHECK(p[1] <= 1.0);
        CHECK(p[2] >= 1.0);
        CHECK(p[2] <= 3.0);
        CHECK(p[3] >= 0.0);
        CHECK(p[3] <= 1.0);
        CHECK(activate(a.prims[i], i).opacity == doctest::Approx(0.1).epsilon(1e-12));
    }
    GaussianCloud c = init_random(64, box, 124);
    CHECK(c.prims[0].position != a.prims[0].position);
    CHECK_THROWS_AS(init_random(0, box, 1), SaroError);
}

TEST_CASE("point cloud init keeps positions and encodes colors") {
    std::vector<Vec3> pts = {{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {0, 0, 3}};
    std::vector<Vec3> cols(4, Vec3(0.5, 0.5, 0.5));
    cols[1] = Vec3(1.0, 0.0, 0.25);
    GaussianCloud c = init_from_points(pts, cols);
    REQUIRE(c.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(c.prims[i].position.head<3>().isApprox(pts[i], 1e-15));
    // mid-gray maps to zero DC offset, full red to a positive one
    CHECK(c.prims[0].sh_at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.prims[1].sh_at(0, 0) > 0.0);
    CHECK(c.prims[1].sh_at(1, 0) < 0.0);
    CHECK_THROWS_AS(init_from_points({}, {}), SaroError);
}
