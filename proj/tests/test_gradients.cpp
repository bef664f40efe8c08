#include <doctest.h>

#include <json.hpp>
#include <sstream>

#include "saro/gradients.hpp"

using namespace saro;

TEST_CASE("relative error formula") {
    CHECK(fd_rel_err(1.0, 1.0) == 0.0);
    CHECK(fd_rel_err(0.0, 0.0) == 0.0);
    CHECK(fd_rel_err(2.0, 1.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    // tiny magnitudes hit the denominator floor instead of dividing by zero
    CHECK(fd_rel_err(1e-12, -1e-12) == doctest::Approx(2e-4).epsilon(1e-10));
}

TEST_CASE("single-op suite passes") {
    auto results = run_gradient_checks(false);
    REQUIRE(results.size() == 10);
    for (const auto& r : results) {
        INFO(r.name, " max_rel_err=", r.max_rel_err, " worst=", r.worst_index);
        CHECK(r.pass);
        CHECK(r.n_checked > 0);
        CHECK(r.tolerance == 1e-6);
    }
}

TEST_CASE("corrupted backward is flagged") {
    GradCheckResult probe = run_mutation_probe();
    CHECK_FALSE(probe.pass);
    CHECK(probe.max_rel_err > probe.tolerance);
}

TEST_CASE("report serializes as one json object per line") {
    auto results = run_gradient_checks(false);
    std::string report = grad_report_jsonl(results);
    std::istringstream in(report);
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.contains("name"));
        CHECK(j.contains("max_rel_err"));
        CHECK(j.contains("worst_index"));
        CHECK(j.contains("h"));
        CHECK(j.contains("tolerance"));
        CHECK(j["pass"].is_boolean());
        ++n;
    }
    CHECK(n == results.size());
    CHECK(all_passed(results));
}
