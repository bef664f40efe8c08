#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "saro/common.hpp"

namespace saro::testing {

inline double u01(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }
inline double usym(Rng& rng) { return 2.0 * u01(rng) - 1.0; }

// Recursive adaptive Simpson quadrature; reference integrator for temporal
// oracles. Splits until the two-panel estimate stabilizes.
inline double simpson_panel(double a, double b, double fa, double fm, double fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double b,
                                   double fa, double fm, double fb, double whole, double tol,
                                   int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = simpson_panel(a, m, fa, flm, fm);
    double right = simpson_panel(m, b, fm, frm, fb);
    double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol) {
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    double whole = simpson_panel(a, b, fa, fm, fb);
    return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48);
}

// Fresh scratch directory under the build tree; wiped on entry.
inline std::string scratch_dir(const std::string& name) {
    namespace fs = std::filesystem;
    fs::path p = fs::temp_directory_path() / "saro_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline bool files_identical(const std::string& a, const std::string& b) {
    std::string ca = slurp(a), cb = slurp(b);
    return !ca.empty() && ca == cb;
}

} // namespace saro::testing
