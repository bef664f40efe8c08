#include "saro/gaussian4d.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace saro {

namespace {

void check_finite(const Gaussian4D& g, size_t index) {
    bool ok = g.position.allFinite() && g.log_scale.allFinite() && g.rotation.allFinite() &&
              std::isfinite(g.opacity_logit);
    for (double v : g.sh) ok = ok && std::isfinite(v);
    if (!ok) {
        std::ostringstream os;
        os << "activate: non-finite parameter in primitive " << index;
        throw SaroError(os.str());
    }
}

// Mean distance to the 3 nearest neighbors, used as the isotropic init scale.
std::vector<double> mean_knn_distance(const std::vector<Vec3>& pts, int knn = 3) {
    const size_t n = pts.size();
    std::vector<double> out(n, 0.01);
    if (n <= 1) return out;
    const int k = std::min<int>(knn, int(n) - 1);
    std::vector<double> best(k);
    for (size_t i = 0; i < n; ++i) {
        std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = (pts[j] - pts[i]).squaredNorm();
            if (d2 < best[k - 1]) {
                int p = k - 1;
                while (p > 0 && best[p - 1] > d2) {
                    best[p] = best[p - 1];
                    --p;
                }
                best[p] = d2;
            }
        }
        double acc = 0.0;
        for (double d2 : best) acc += std::sqrt(d2);
        out[i] = std::max(acc / k, 1e-7);
    }
    return out;
}

} // namespace

ActivatedGaussian activate(const Gaussian4D& g, size_t index) {
    check_finite(g, index);
    ActivatedGaussian a;
    a.position = g.position;
    a.scale = g.log_scale.array().exp();
    a.opacity = logistic(g.opacity_logit);
    double qn = g.rotation.norm();
    if (qn < 1e-12) {
        std::ostringstream os;
        os << "activate: zero-norm quaternion in primitive " << index;
        throw SaroError(os.str());
    }
    a.rotation = g.rotation / qn;
    a.sh = g.sh.data();
    return a;
}

Vec3 deactivate_scale(const Vec3& scale) { return scale.array().log(); }

double deactivate_opacity(double opacity) { return logit(opacity); }

Mat3 quat_to_rotmat(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 covariance_from_rs(const Vec4& unit_q, const Vec3& s) {
    if (!(s.array() > 0.0).all())
        throw SaroError("covariance_from_rs: scale components must be positive");
    Mat3 r = quat_to_rotmat(unit_q);
    return r * s.cwiseProduct(s).asDiagonal() * r.transpose();
}

std::vector<Gaussian4D> split(const Gaussian4D& g, int n, Rng& rng, double scale_divisor) {
    if (n < 2) throw SaroError("split: child count must be >= 2");
    ActivatedGaussian a = activate(g);
    Mat3 r = quat_to_rotmat(a.rotation);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Gaussian4D> children(n, g);
    const double log_div = std::log(scale_divisor);
    for (auto& child : children) {
        Vec3 z(normal(rng), normal(rng), normal(rng));
        Vec3 offset = r * a.scale.cwiseProduct(z);
        child.position.head<3>() += offset;
        child.log_scale.array() -= log_div;
    }
    return children;
}

Gaussian4D clone(const Gaussian4D& g, const Vec3& grad_dir, double step) {
    Gaussian4D c = g;
    double norm = grad_dir.norm();
    if (norm > 0.0) c.position.head<3>() += step * grad_dir / norm;
    return c;
}

GaussianCloud init_random(size_t count, const Bbox& bbox, uint64_t seed, int sh_degree) {
    if (count < 1) throw SaroError("init_random: count must be >= 1");
    if (!bbox.valid()) throw SaroError("init_random: invalid bbox");
    GaussianCloud cloud;
    cloud.bbox = bbox;
    cloud.sh_degree = sh_degree;
    cloud.prims.resize(count);

    Rng rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<Vec3> pts(count);
    for (size_t i = 0; i < count; ++i) {
        Vec3 u(uni(rng), uni(rng), uni(rng));
        pts[i] = bbox.min + u.cwiseProduct(bbox.extent());
        double tau = uni(rng);
        cloud.prims[i].position << pts[i], tau;
    }
    std::vector<double> nn = mean_knn_distance(pts);
    const double opacity_logit = logit(0.1);
    for (size_t i = 0; i < count; ++i) {
        cloud.prims[i].log_scale.setConstant(std::log(nn[i]));
        cloud.prims[i].rotation = Vec4(1, 0, 0, 0);
        cloud.prims[i].opacity_logit = opacity_logit;
    }
    return cloud;
}

GaussianCloud init_from_points(const std::vector<Vec3>& points, const std::vector<Vec3>& colors,
                               int sh_degree) {
    if (points.empty()) throw SaroError("init_from_points: empty point set");
    if (colors.size() != points.size())
        throw SaroError("init_from_points: point/color count mismatch");
    GaussianCloud cloud;
    cloud.sh_degree = sh_degree;
    cloud.prims.resize(points.size());

    Vec3 lo = points[0], hi = points[0];
    for (const Vec3& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    Vec3 pad = 0.05 * (hi - lo).cwiseMax(Vec3::Constant(1e-3));
    cloud.bbox = Bbox{lo - pad, hi + pad};

    Rng rng(0x5ca1ab1e);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> nn = mean_knn_distance(points);
    const double opacity_logit = logit(0.1);
    const double y00 = 0.28209479177387814;
    for (size_t i = 0; i < points.size(); ++i) {
        Gaussian4D& g = cloud.prims[i];
        g.position << points[i], uni(rng);
        g.log_scale.setConstant(std::log(nn[i]));
        g.rotation = Vec4(1, 0, 0, 0);
        g.opacity_logit = opacity_logit;
        for (int c = 0; c < 3; ++c) g.sh_at(c, 0) = (colors[i][c] - 0.5) / y00;
    }
    return cloud;
}

} // namespace saro
