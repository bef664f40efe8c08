#include "saro/temporal.hpp"

namespace saro::temporal {

double state_function(const TemporalState& ts, double t) {
    const double u = (t - ts.tau) / ts.sigma;
    return std::exp(-ts.k * u * u);
}

StateGrad state_function_grad(const TemporalState& ts, double t) {
    const double u = (t - ts.tau) / ts.sigma;
    const double g = std::exp(-ts.k * u * u);
    StateGrad out;
    out.d_t = -2.0 * ts.k * u / ts.sigma * g;
    out.d_tau = -out.d_t;
    out.d_sigma = 2.0 * ts.k * u * u / ts.sigma * g;
    return out;
}

double approx_normal_cdf(double x) {
    return logistic(kCdfAlpha1 * x * x * x + kCdfAlpha2 * x);
}

double temporal_cdf(const TemporalState& ts, double t) {
    const double arg = std::sqrt(2.0 * ts.k) * (t - ts.tau) / ts.sigma;
    return total_mass(ts) * approx_normal_cdf(arg);
}

double temporal_integral(const TemporalState& ts, double t_start, double t_end) {
    return temporal_cdf(ts, t_end) - temporal_cdf(ts, t_start);
}

double total_mass(const TemporalState& ts) {
    return ts.sigma * std::sqrt(M_PI / ts.k);
}

std::vector<bool> survival_mask(const std::vector<TemporalState>& states, double t0,
                                double threshold) {
    std::vector<bool> mask(states.size());
    for (size_t i = 0; i < states.size(); ++i)
        mask[i] = state_function(states[i], t0) >= threshold;
    return mask;
}

} // namespace saro::temporal
