#pragma once

#include "saro/common.hpp"

namespace saro::temporal {

// Sharpness constant of the state function; gamma(tau +- sigma) = exp(-k).
inline constexpr double kDefaultSharpness = 4.0;

// Cubic-logistic normal CDF approximation constants.
inline constexpr double kCdfAlpha1 = 0.070565992;
inline constexpr double kCdfAlpha2 = 1.5976;

struct TemporalState {
    double tau = 0.0;   // temporal position, normalized time
    double sigma = 1.0; // lifespan, must be > 0
    double k = kDefaultSharpness;

    bool valid() const {
        return std::isfinite(tau) && std::isfinite(sigma) && sigma > 0.0 && k > 0.0;
    }
};

// gamma(t) = exp(-k ((t - tau)/sigma)^2), in (0, 1].
double state_function(const TemporalState& ts, double t);

struct StateGrad {
    double d_tau = 0.0;
    double d_sigma = 0.0;
    double d_t = 0.0;
};

// Analytic gradient of state_function at t.
StateGrad state_function_grad(const TemporalState& ts, double t);

// Standard normal CDF via the cubic-logistic form
//   Q(x) = 1 / (1 + exp(-(a1 x^3 + a2 x))).
// Monotone, Q(0)=0.5, Q(x)+Q(-x)=1, max abs error vs the true CDF ~1.4e-4.
double approx_normal_cdf(double x);

// F(t) = (sqrt(pi) sigma / sqrt(k)) * Q(sqrt(2k) (t - tau) / sigma).
double temporal_cdf(const TemporalState& ts, double t);

// Definite integral of gamma over [t_start, t_end] = F(t_end) - F(t_start).
double temporal_integral(const TemporalState& ts, double t_start, double t_end);

// Total mass of gamma over the whole real line: sigma * sqrt(pi / k).
double total_mass(const TemporalState& ts);

// mask[i] = gamma_i(t0) >= threshold. threshold in [0, 1).
std::vector<bool> survival_mask(const std::vector<TemporalState>& states, double t0,
                                double threshold);

} // namespace saro::temporal

namespace saro {
using temporal::approx_normal_cdf;
using temporal::kCdfAlpha1;
using temporal::kCdfAlpha2;
using temporal::kDefaultSharpness;
using temporal::state_function;
using temporal::state_function_grad;
using temporal::StateGrad;
using temporal::survival_mask;
using temporal::temporal_cdf;
using temporal::temporal_integral;
using temporal::TemporalState;
using temporal::total_mass;
} // namespace saro
