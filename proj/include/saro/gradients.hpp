#pragma once

#include <string>
#include <vector>

namespace saro {

// One finite-difference certification of an op (or the full pipeline).
// Relative error: |ga - gf| / max(1e-8, |ga| + |gf|). Differences below the
// measurement floor (1e-8 absolute for end-to-end, 1e-9 per op) count as
// agreement; central differences cannot resolve finer in double precision.
struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    size_t worst_index = 0; // flat coordinate of the max error
    size_t n_checked = 0;
    double h = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

double fd_rel_err(double analytic, double numeric);

// All single-op checks (tolerance 1e-6, h = 1e-6); with full also the
// three full-pipeline sweeps (tolerance 1e-4, h = 1e-5). Deterministic.
std::vector<GradCheckResult> run_gradient_checks(bool full);

// Runs one check with a deliberately corrupted analytic gradient. Its
// result must come back pass == false; anything else means the harness lost
// its teeth.
GradCheckResult run_mutation_probe();

std::string grad_report_jsonl(const std::vector<GradCheckResult>& results);

bool all_passed(const std::vector<GradCheckResult>& results);

} // namespace saro
