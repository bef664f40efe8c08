#include <doctest.h>

#include <cmath>

#include "saro/temporal.hpp"
#include "support.hpp"

using namespace saro;
using namespace saro::temporal;
namespace st = saro::testing;

static double true_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

TEST_CASE("state function values") {
    TemporalState ts{0.3, 0.2, 4.0};
    CHECK(state_function(ts, 0.3) == 1.0);
    // u = 0.5 -> exp(-1)
    CHECK(state_function(ts, 0.4) == doctest::Approx(0.3678794411714423).epsilon(1e-14));
    CHECK(state_function(ts, 0.2) == doctest::Approx(0.3678794411714423).epsilon(1e-14));
    CHECK(state_function(ts, 5.0) >= 0.0);
    // boundary of the guaranteed range
    for (double t : {0.0, 0.1, 0.77, 1.0}) {
        double g = state_function(ts, t);
        CHECK(g > 0.0);
        CHECK(g <= 1.0);
    }
}

TEST_CASE("state function gradient frozen values") {
    TemporalState ts{0.3, 0.2, 4.0};
    StateGrad g = state_function_grad(ts, 0.4);
    CHECK(g.d_tau == doctest::Approx(7.3575888234288466).epsilon(1e-13));
    CHECK(g.d_t == doctest::Approx(-7.3575888234288466).epsilon(1e-13));
    CHECK(g.d_sigma == doctest::Approx(3.6787944117144233).epsilon(1e-13));
    StateGrad at_peak = state_function_grad(ts, 0.3);
    CHECK(at_peak.d_tau == 0.0);
    CHECK(at_peak.d_sigma == 0.0);
}

TEST_CASE("total mass") {
    TemporalState ts{0.5, 0.2, 4.0};
    CHECK(total_mass(ts) == doctest::Approx(0.1772453850905516).epsilon(1e-14));
}

TEST_CASE("cdf approximation basics") {
    CHECK(approx_normal_cdf(0.0) == 0.5);
    // antisymmetry and monotonicity
    double prev = -1.0;
    for (double x = -6.0; x <= 6.0; x += 0.05) {
        double q = approx_normal_cdf(x);
        CHECK(q > prev);
        prev = q;
        CHECK(q + approx_normal_cdf(-x) == doctest::Approx(1.0).epsilon(1e-14));
    }
    // stays within the documented error band of the true CDF
    double worst = 0.0;
    for (double x = -8.0; x <= 8.0; x += 0.01)
        worst = std::max(worst, std::abs(approx_normal_cdf(x) - true_normal_cdf(x)));
    CHECK(worst <= 1.5e-4);
    CHECK(worst >= 1.0e-4); // it is an approximation, not erf in disguise
}

TEST_CASE("temporal cdf against adaptive quadrature") {
    for (double sigma : {0.05, 0.3, 2.0}) {
        TemporalState ts{0.4, sigma, 4.0};
        double mass = total_mass(ts);
        auto gamma = [&](double t) { return state_function(ts, t); };
        for (double t : {0.0, 0.25, 0.4, 0.6, 1.0}) {
            double lo = ts.tau - 12.0 * sigma; // gamma underflows past 12 sigma
            double oracle = st::adaptive_simpson(gamma, lo, t, 1e-12 * mass);
            CHECK(std::abs(temporal_cdf(ts, t) - oracle) <= 5e-4 * mass);
        }
    }
}

TEST_CASE("integral equals cdf difference and saturates to total mass") {
    TemporalState ts{0.37, 0.11, 4.0};
    double i = temporal_integral(ts, 0.1, 0.9);
    CHECK(i == temporal_cdf(ts, 0.9) - temporal_cdf(ts, 0.1));
    CHECK(i > 0.0);
    double whole = temporal_integral(ts, ts.tau - 50.0 * ts.sigma, ts.tau + 50.0 * ts.sigma);
    CHECK(whole == doctest::Approx(total_mass(ts)).epsilon(1e-9));
    // short lifespans hold only a sliver of the unit timeline's mass budget
    TemporalState wide{0.5, 8.0, 4.0};
    CHECK(temporal_integral(wide, 0.0, 1.0) < total_mass(wide) * 0.2);
}

TEST_CASE("survival mask") {
    std::vector<TemporalState> states = {{0.5, 0.1, 4.0}, {0.0, 0.1, 4.0}, {0.5, 5.0, 4.0}};
    auto mask = survival_mask(states, 0.5, 0.001);
    REQUIRE(mask.size() == 3);
    CHECK(mask[0]);
    CHECK_FALSE(mask[1]); // 5 sigma away, gamma ~ e^-100
    CHECK(mask[2]);
    auto all = survival_mask(states, 0.5, 0.0);
    CHECK(all[0]);
    CHECK(all[1]);
    CHECK(all[2]);
}
