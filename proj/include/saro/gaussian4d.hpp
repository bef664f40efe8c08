#pragma once

#include "saro/common.hpp"

#include <array>

namespace saro {

inline constexpr int kMaxShDegree = 3;
inline constexpr int kMaxShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);

inline constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// One 4D primitive, raw (unconstrained) parameterization:
// scale in log-domain, opacity in logit-domain, quaternion unnormalized.
struct Gaussian4D {
    Vec4 position = Vec4::Zero();     // (x, y, z, tau)
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0); // (w, x, y, z)
    double opacity_logit = 0.0;
    // sh[c * kMaxShCoeffs + k]; entries beyond the cloud's degree stay zero.
    std::array<double, 3 * kMaxShCoeffs> sh{};

    double& sh_at(int channel, int coeff) { return sh[channel * kMaxShCoeffs + coeff]; }
    double sh_at(int channel, int coeff) const { return sh[channel * kMaxShCoeffs + coeff]; }
};

struct ActivatedGaussian {
    Vec4 position = Vec4::Zero();
    Vec3 scale = Vec3::Ones();        // exp(log_scale), > 0
    Vec4 rotation = Vec4(1, 0, 0, 0); // unit norm
    double opacity = 0.5;             // logistic(opacity_logit), in (0,1)
    const double* sh = nullptr;       // borrowed from the raw primitive
};

struct GaussianCloud {
    std::vector<Gaussian4D> prims;
    Bbox bbox;
    int sh_degree = 1;

    size_t size() const { return prims.size(); }
    int sh_coeffs() const { return sh_coeff_count(sh_degree); }
};

// Constrained reparameterization. Throws SaroError naming `index` on
// non-finite input or a zero-norm quaternion.
ActivatedGaussian activate(const Gaussian4D& g, size_t index = size_t(-1));

// Inverse of activate on scale/opacity (log / logit).
Vec3 deactivate_scale(const Vec3& scale);
double deactivate_opacity(double opacity);

// Sigma = R S S^T R^T for unit quaternion q and positive scale s.
// Throws on s <= 0.
Mat3 covariance_from_rs(const Vec4& unit_q, const Vec3& s);

// Rotation matrix of a unit quaternion (w, x, y, z).
Mat3 quat_to_rotmat(const Vec4& unit_q);

// Split into n children: positions sampled from the parent's 3D density,
// scale divided by `scale_divisor`, everything else copied.
std::vector<Gaussian4D> split(const Gaussian4D& g, int n, Rng& rng,
                              double scale_divisor = 1.6);

// Duplicate with the spatial position nudged `step` along the (normalized)
// accumulated positional gradient direction; tau and all other fields copied.
Gaussian4D clone(const Gaussian4D& g, const Vec3& grad_dir, double step);

// Uniform positions in bbox, tau uniform in [0,1], isotropic initial scale at
// the mean distance to the 3 nearest neighbors, opacity 0.1.
GaussianCloud init_random(size_t count, const Bbox& bbox, uint64_t seed, int sh_degree = 1);

// From a point cloud with per-point RGB in [0,1]. Throws on empty input.
GaussianCloud init_from_points(const std::vector<Vec3>& points,
                               const std::vector<Vec3>& colors, int sh_degree = 1);

} // namespace saro
