#include "saro/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saro {

void Camera::validate() const {
    if (width < 1 || height < 1) throw SaroError("Camera: image size must be positive");
    if (!(fx > 0.0) || !(fy > 0.0)) throw SaroError("Camera: focal lengths must be positive");
    if (!(near_plane > 0.0)) throw SaroError("Camera: near plane must be positive");
    Mat3 r = rotation();
    if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw SaroError("Camera: world_to_cam rotation is not orthonormal");
}

Camera make_lookat_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg,
                          int width, int height, double near_plane) {
    Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-9) throw SaroError("make_lookat_camera: view direction parallel to up");
    right.normalize();
    // Rows are the camera axes: x right, y down the image, z forward.
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = forward.cross(right).transpose();
    r.row(2) = forward.transpose();
    Camera cam;
    cam.world_to_cam.setIdentity();
    cam.world_to_cam.topLeftCorner<3, 3>() = r;
    cam.world_to_cam.topRightCorner<3, 1>() = -r * eye;
    cam.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * M_PI / 180.0);
    cam.fx = cam.fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    cam.near_plane = near_plane;
    return cam;
}

namespace {

constexpr double kShC0 = kShBasis0;
constexpr double kShC1 = 0.4886025119029199;
constexpr double kShC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                             -1.0925484305920792, 0.5462742152960396};
constexpr double kShC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                             0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                             -0.5900435899266435};

// Real SH basis values and (optionally) their direction gradients, in the
// standard splatting coefficient order.
void sh_basis(const Vec3& dir, int ncoef, double* b, Vec3* db) {
    const double x = dir[0], y = dir[1], z = dir[2];
    b[0] = kShC0;
    if (db) db[0].setZero();
    if (ncoef <= 1) return;
    b[1] = -kShC1 * y;
    b[2] = kShC1 * z;
    b[3] = -kShC1 * x;
    if (db) {
        db[1] = Vec3(0, -kShC1, 0);
        db[2] = Vec3(0, 0, kShC1);
        db[3] = Vec3(-kShC1, 0, 0);
    }
    if (ncoef <= 4) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    b[4] = kShC2[0] * x * y;
    b[5] = kShC2[1] * y * z;
    b[6] = kShC2[2] * (2.0 * zz - xx - yy);
    b[7] = kShC2[3] * x * z;
    b[8] = kShC2[4] * (xx - yy);
    if (db) {
        db[4] = kShC2[0] * Vec3(y, x, 0);
        db[5] = kShC2[1] * Vec3(0, z, y);
        db[6] = kShC2[2] * Vec3(-2 * x, -2 * y, 4 * z);
        db[7] = kShC2[3] * Vec3(z, 0, x);
        db[8] = kShC2[4] * Vec3(2 * x, -2 * y, 0);
    }
    if (ncoef <= 9) return;
    b[9] = kShC3[0] * y * (3 * xx - yy);
    b[10] = kShC3[1] * x * y * z;
    b[11] = kShC3[2] * y * (4 * zz - xx - yy);
    b[12] = kShC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    b[13] = kShC3[4] * x * (4 * zz - xx - yy);
    b[14] = kShC3[5] * z * (xx - yy);
    b[15] = kShC3[6] * x * (xx - 3 * yy);
    if (db) {
        db[9] = kShC3[0] * Vec3(6 * x * y, 3 * xx - 3 * yy, 0);
        db[10] = kShC3[1] * Vec3(y * z, x * z, x * y);
        db[11] = kShC3[2] * Vec3(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
        db[12] = kShC3[3] * Vec3(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
        db[13] = kShC3[4] * Vec3(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
        db[14] = kShC3[5] * Vec3(2 * x * z, -2 * y * z, xx - yy);
        db[15] = kShC3[6] * Vec3(3 * xx - 3 * yy, -6 * x * y, 0);
    }
}

} // namespace

Vec3 sh_to_color(const double* sh, int ncoef, const Vec3& dir, Vec3* preclamp) {
    const double dn = dir.norm();
    if (dn < 1e-15) throw SaroError("sh_to_color: zero view direction");
    double b[kMaxShCoeffs];
    sh_basis(dir / dn, ncoef, b, nullptr);
    Vec3 rgb;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.5;
        const double* row = sh + size_t(c) * ncoef;
        for (int k = 0; k < ncoef; ++k) acc += b[k] * row[k];
        rgb[c] = acc;
    }
    if (preclamp) *preclamp = rgb;
    return rgb.cwiseMax(0.0);
}

void sh_to_color_backward(const double* sh, int ncoef, const Vec3& dir, const Vec3& preclamp,
                          const Vec3& d_color, double* d_sh, Vec3* d_dir) {
    const double dn = dir.norm();
    if (dn < 1e-15) throw SaroError("sh_to_color_backward: zero view direction");
    const Vec3 u = dir / dn;
    double b[kMaxShCoeffs];
    Vec3 db[kMaxShCoeffs];
    sh_basis(u, ncoef, b, db);
    Vec3 d_u = Vec3::Zero();
    for (int c = 0; c < 3; ++c) {
        if (preclamp[c] <= 0.0) continue; // clamped channel
        const double g = d_color[c];
        if (d_sh) {
            double* row = d_sh + size_t(c) * ncoef;
            for (int k = 0; k < ncoef; ++k) row[k] += g * b[k];
        }
        if (d_dir) {
            const double* row = sh + size_t(c) * ncoef;
            for (int k = 1; k < ncoef; ++k) d_u += g * row[k] * db[k];
        }
    }
    // Chain through the internal normalization: d/d_dir = (I - u u^T)/|dir| applied to d_u.
    if (d_dir) *d_dir += (d_u - u * u.dot(d_u)) / dn;
}

namespace {

// 2x3 Jacobian of the pinhole projection at camera-space point p.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& p) {
    const double z = p[2], inv_z = 1.0 / z;
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx * inv_z, 0.0, -cam.fx * p[0] * inv_z * inv_z,
        0.0, cam.fy * inv_z, -cam.fy * p[1] * inv_z * inv_z;
    return j;
}

double max_eigenvalue_2x2(double a, double b, double c) {
    double mid = 0.5 * (a + c);
    double d = std::sqrt(std::max(0.0, mid * mid - (a * c - b * b)));
    return mid + d;
}

} // namespace

std::optional<Splat2D> project_splat(const Gaussian3D& g, const Camera& cam, int sh_coeffs,
                                     int prim_index, ProjectCache* cache) {
    Mat3 rw = cam.rotation();
    Vec3 p_cam = rw * g.position + cam.translation();
    if (p_cam[2] <= cam.near_plane) return std::nullopt;

    Splat2D s;
    s.depth = p_cam[2];
    s.mean[0] = cam.fx * p_cam[0] / p_cam[2] + cam.cx;
    s.mean[1] = cam.fy * p_cam[1] / p_cam[2] + cam.cy;

    Mat3 v = covariance_from_rs(g.rotation, g.scale);
    Eigen::Matrix<double, 2, 3> t = projection_jacobian(cam, p_cam) * rw;
    Mat2 cov2 = t * v * t.transpose();
    s.cov_a = cov2(0, 0) + kCovDilation;
    s.cov_b = 0.5 * (cov2(0, 1) + cov2(1, 0));
    s.cov_c = cov2(1, 1) + kCovDilation;

    double radius = 3.0 * std::sqrt(max_eigenvalue_2x2(s.cov_a, s.cov_b, s.cov_c));
    if (s.mean[0] + radius < 0.0 || s.mean[0] - radius > cam.width || s.mean[1] + radius < 0.0 ||
        s.mean[1] - radius > cam.height)
        return std::nullopt;

    Vec3 dir = g.position - cam.position();
    double dist = dir.norm();
    if (dist < 1e-12) return std::nullopt;
    dir /= dist;
    Vec3 preclamp;
    s.color = sh_to_color(g.sh.data(), sh_coeffs, dir, &preclamp);
    if (cache) cache->color_preclamp = preclamp;
    s.opacity = g.opacity;
    s.prim_index = prim_index;
    return s;
}

Gaussian3DGrad project_splat_backward(const Gaussian3D& g, const Camera& cam, int sh_coeffs,
                                      const ProjectCache& cache, const SplatGrad& up,
                                      double d_depth) {
    Gaussian3DGrad out;
    Mat3 rw = cam.rotation();
    Vec3 p_cam = rw * g.position + cam.translation();
    const double z = p_cam[2], inv_z = 1.0 / z;

    // Opacity passes straight through.
    out.d_opacity = up.d_opacity;

    // Color: SH chain plus the view-direction dependence on position.
    Vec3 dir = g.position - cam.position();
    double dist = dir.norm();
    dir /= dist;
    Vec3 d_dir = Vec3::Zero();
    sh_to_color_backward(g.sh.data(), sh_coeffs, dir, cache.color_preclamp, up.d_color,
                         out.d_sh.data(), &d_dir);
    out.d_position += (Mat3::Identity() - dir * dir.transpose()) * d_dir / dist;

    // Screen mean and explicit depth uses.
    Vec3 d_pcam = Vec3::Zero();
    d_pcam[0] += up.d_mean[0] * cam.fx * inv_z;
    d_pcam[1] += up.d_mean[1] * cam.fy * inv_z;
    d_pcam[2] += -(up.d_mean[0] * cam.fx * p_cam[0] + up.d_mean[1] * cam.fy * p_cam[1]) * inv_z *
                 inv_z;
    d_pcam[2] += d_depth;

    // Covariance chain: cov2 = T V T^T with T = J rw.
    Mat3 v = covariance_from_rs(g.rotation, g.scale);
    Eigen::Matrix<double, 2, 3> j = projection_jacobian(cam, p_cam);
    Eigen::Matrix<double, 2, 3> t = j * rw;
    Mat2 g2;
    g2 << up.d_cov_a, 0.5 * up.d_cov_b, 0.5 * up.d_cov_b, up.d_cov_c;
    Mat3 g3 = t.transpose() * g2 * t;                    // dL/dV
    Eigen::Matrix<double, 2, 3> dt = 2.0 * g2 * t * v;   // dL/dT
    Eigen::Matrix<double, 2, 3> dj = dt * rw.transpose();

    // J depends on p_cam.
    d_pcam[0] += dj(0, 2) * (-cam.fx * inv_z * inv_z);
    d_pcam[1] += dj(1, 2) * (-cam.fy * inv_z * inv_z);
    d_pcam[2] += dj(0, 0) * (-cam.fx * inv_z * inv_z) +
                 dj(0, 2) * (2.0 * cam.fx * p_cam[0] * inv_z * inv_z * inv_z) +
                 dj(1, 1) * (-cam.fy * inv_z * inv_z) +
                 dj(1, 2) * (2.0 * cam.fy * p_cam[1] * inv_z * inv_z * inv_z);

    out.d_position += rw.transpose() * d_pcam;

    // V = R diag(s^2) R^T.
    Mat3 r = quat_to_rotmat(g.rotation);
    Mat3 rt_g3_r = r.transpose() * g3 * r;
    for (int k = 0; k < 3; ++k) out.d_scale[k] = 2.0 * g.scale[k] * rt_g3_r(k, k);
    Mat3 dr = 2.0 * g3 * r * g.scale.cwiseProduct(g.scale).asDiagonal();

    const double qw = g.rotation[0], qx = g.rotation[1], qy = g.rotation[2], qz = g.rotation[3];
    Mat3 drdw, drdx, drdy, drdz;
    drdw << 0, -qz, qy, qz, 0, -qx, -qy, qx, 0;
    drdx << 0, qy, qz, qy, -2 * qx, -qw, qz, qw, -2 * qx;
    drdy << -2 * qy, qx, qw, qx, 0, qz, -qw, qz, -2 * qy;
    drdz << -2 * qz, -qw, qx, qw, -2 * qz, qy, qx, qy, 0;
    out.d_rotation[0] = 2.0 * (dr.array() * drdw.array()).sum();
    out.d_rotation[1] = 2.0 * (dr.array() * drdx.array()).sum();
    out.d_rotation[2] = 2.0 * (dr.array() * drdy.array()).sum();
    out.d_rotation[3] = 2.0 * (dr.array() * drdz.array()).sum();
    return out;
}

namespace {

struct PreparedSplat {
    double mx, my;
    double conic_a, conic_b, conic_c;
    double opacity;
    Vec3 color;
    double depth;
    double radius;
    int input_index;
    bool degenerate;
};

std::vector<PreparedSplat> prepare_splats(const std::vector<Splat2D>& splats) {
    std::vector<PreparedSplat> out(splats.size());
    for (size_t i = 0; i < splats.size(); ++i) {
        const Splat2D& s = splats[i];
        PreparedSplat& p = out[i];
        p.mx = s.mean[0];
        p.my = s.mean[1];
        double det = s.cov_a * s.cov_c - s.cov_b * s.cov_b;
        p.degenerate = !(det > 0.0);
        if (!p.degenerate) {
            double inv_det = 1.0 / det;
            p.conic_a = s.cov_c * inv_det;
            p.conic_b = -s.cov_b * inv_det;
            p.conic_c = s.cov_a * inv_det;
        } else {
            p.conic_a = p.conic_b = p.conic_c = 0.0;
        }
        p.opacity = s.opacity;
        p.color = s.color;
        p.depth = s.depth;
        p.radius = 3.0 * std::sqrt(max_eigenvalue_2x2(s.cov_a, s.cov_b, s.cov_c));
        p.input_index = int(i);
    }
    return out;
}

// Global compositing order: front to back, ties broken by primitive index
// then input position.
std::vector<int> sorted_order(const std::vector<Splat2D>& splats,
                              const std::vector<PreparedSplat>& prep) {
    std::vector<int> order;
    order.reserve(prep.size());
    for (size_t i = 0; i < prep.size(); ++i)
        if (!prep[i].degenerate) order.push_back(int(i));
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (prep[a].depth != prep[b].depth) return prep[a].depth < prep[b].depth;
        if (splats[a].prim_index != splats[b].prim_index)
            return splats[a].prim_index < splats[b].prim_index;
        return a < b;
    });
    return order;
}

// One pixel, front to back over the given splat ids. The contribution rule
// here is the single source of truth shared by the tiled and oracle paths.
void composite_pixel(const std::vector<PreparedSplat>& prep, const int* ids, size_t count,
                     double px, double py, const RasterizeOptions& opts, double* rgb,
                     double* depth_out, uint32_t* blend_counts = nullptr) {
    double t = 1.0;
    double r = 0.0, g = 0.0, b = 0.0;
    double depth_acc = 0.0, weight_acc = 0.0;
    for (size_t n = 0; n < count; ++n) {
        const PreparedSplat& s = prep[ids[n]];
        const double dx = px - s.mx, dy = py - s.my;
        const double q = s.conic_a * dx * dx + 2.0 * s.conic_b * dx * dy + s.conic_c * dy * dy;
        if (q > kQuadFormCutoff) continue;
        const double w = std::min(kAlphaClampMax, s.opacity * std::exp(-0.5 * q));
        if (w < kContributionMin) continue;
        if (blend_counts) ++blend_counts[ids[n]];
        const double tw = t * w;
        r += tw * s.color[0];
        g += tw * s.color[1];
        b += tw * s.color[2];
        depth_acc += tw * s.depth;
        weight_acc += tw;
        t *= 1.0 - w;
        if (t < kTransmittanceMin) break;
    }
    rgb[0] = r + t * opts.background[0];
    rgb[1] = g + t * opts.background[1];
    rgb[2] = b + t * opts.background[2];
    if (depth_out) *depth_out = weight_acc > 0.0 ? depth_acc / weight_acc : 0.0;
}

struct TileGrid {
    int tiles_x, tiles_y;
    std::vector<std::vector<int>> lists; // per tile, in global sorted order
};

TileGrid build_tiles(const std::vector<PreparedSplat>& prep, const std::vector<int>& order,
                     int width, int height) {
    TileGrid grid;
    grid.tiles_x = (width + kTileSize - 1) / kTileSize;
    grid.tiles_y = (height + kTileSize - 1) / kTileSize;
    grid.lists.assign(size_t(grid.tiles_x) * grid.tiles_y, {});
    for (int id : order) {
        const PreparedSplat& s = prep[id];
        int x0 = std::max(0, int(std::floor((s.mx - s.radius) / kTileSize)));
        int x1 = std::min(grid.tiles_x - 1, int(std::floor((s.mx + s.radius) / kTileSize)));
        int y0 = std::max(0, int(std::floor((s.my - s.radius) / kTileSize)));
        int y1 = std::min(grid.tiles_y - 1, int(std::floor((s.my + s.radius) / kTileSize)));
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx)
                grid.lists[size_t(ty) * grid.tiles_x + tx].push_back(id);
    }
    return grid;
}

} // namespace

RasterizeResult rasterize(const std::vector<Splat2D>& splats, int width, int height,
                          const RasterizeOptions& opts) {
    if (width < 1 || height < 1) throw SaroError("rasterize: zero-size image");
    std::vector<PreparedSplat> prep = prepare_splats(splats);
    std::vector<int> order = sorted_order(splats, prep);
    TileGrid grid = build_tiles(prep, order, width, height);

    RasterizeResult res;
    res.color = Image(width, height);
    if (opts.want_depth) res.depth.assign(size_t(width) * height, 0.0);
    if (opts.count_blends) res.blend_counts.assign(splats.size(), 0);

    const size_t tile_count = grid.lists.size();
    std::vector<std::vector<uint32_t>> tile_counts(opts.count_blends ? tile_count : 0);
    parallel_chunks(tile_count, 1, [&](size_t, size_t begin, size_t end) {
        for (size_t tile = begin; tile < end; ++tile) {
            const auto& list = grid.lists[tile];
            uint32_t* counts = nullptr;
            if (opts.count_blends) {
                tile_counts[tile].assign(splats.size(), 0);
                counts = tile_counts[tile].data();
            }
            int tx = int(tile % grid.tiles_x), ty = int(tile / grid.tiles_x);
            int px0 = tx * kTileSize, px1 = std::min(width, px0 + kTileSize);
            int py0 = ty * kTileSize, py1 = std::min(height, py0 + kTileSize);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    double* rgb = &res.color.at(px, py, 0);
                    double* d = opts.want_depth ? &res.depth[size_t(py) * width + px] : nullptr;
                    composite_pixel(prep, list.data(), list.size(), px + 0.5, py + 0.5, opts,
                                    rgb, d, counts);
                }
            }
        }
    });
    for (const auto& tc : tile_counts)
        for (size_t i = 0; i < tc.size(); ++i) res.blend_counts[i] += tc[i];
    return res;
}

RasterizeResult rasterize_oracle(const std::vector<Splat2D>& splats, int width, int height,
                                 const RasterizeOptions& opts) {
    if (width < 1 || height < 1) throw SaroError("rasterize_oracle: zero-size image");
    std::vector<PreparedSplat> prep = prepare_splats(splats);
    std::vector<int> order = sorted_order(splats, prep);
    RasterizeResult res;
    res.color = Image(width, height);
    if (opts.want_depth) res.depth.assign(size_t(width) * height, 0.0);
    if (opts.count_blends) res.blend_counts.assign(splats.size(), 0);
    uint32_t* counts = opts.count_blends ? res.blend_counts.data() : nullptr;
    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            double* rgb = &res.color.at(px, py, 0);
            double* d = opts.want_depth ? &res.depth[size_t(py) * width + px] : nullptr;
            composite_pixel(prep, order.data(), order.size(), px + 0.5, py + 0.5, opts, rgb, d,
                            counts);
        }
    }
    return res;
}

namespace {

struct Contribution {
    int id;          // prepared-splat index
    double w, tw;    // clamped weight, t * w
    double g_unclamped; // opacity * G before the 0.99 clamp
    double G;
    double m0, m1;   // conic * d
};

} // namespace

std::vector<SplatGrad> rasterize_backward(const std::vector<Splat2D>& splats, int width,
                                          int height, const RasterizeOptions& opts,
                                          const Image& d_image) {
    if (width < 1 || height < 1) throw SaroError("rasterize_backward: zero-size image");
    if (d_image.width != width || d_image.height != height)
        throw SaroError("rasterize_backward: gradient image size mismatch");
    std::vector<PreparedSplat> prep = prepare_splats(splats);
    std::vector<int> order = sorted_order(splats, prep);
    TileGrid grid = build_tiles(prep, order, width, height);

    const size_t tile_count = grid.lists.size();
    std::vector<std::vector<SplatGrad>> tile_grads(tile_count);

    parallel_chunks(tile_count, 1, [&](size_t, size_t begin, size_t end) {
        std::vector<Contribution> contribs;
        for (size_t tile = begin; tile < end; ++tile) {
            const auto& list = grid.lists[tile];
            tile_grads[tile].assign(list.size(), SplatGrad{});
            if (list.empty()) continue;
            // Local position of each splat id in the tile list.
            int tx = int(tile % grid.tiles_x), ty = int(tile / grid.tiles_x);
            int px0 = tx * kTileSize, px1 = std::min(width, px0 + kTileSize);
            int py0 = ty * kTileSize, py1 = std::min(height, py0 + kTileSize);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    const double cx = px + 0.5, cy = py + 0.5;
                    contribs.clear();
                    double t = 1.0;
                    Vec3 total = Vec3::Zero();
                    for (size_t n = 0; n < list.size(); ++n) {
                        const PreparedSplat& s = prep[list[n]];
                        const double dx = cx - s.mx, dy = cy - s.my;
                        const double q = s.conic_a * dx * dx + 2.0 * s.conic_b * dx * dy +
                                         s.conic_c * dy * dy;
                        if (q > kQuadFormCutoff) continue;
                        const double G = std::exp(-0.5 * q);
                        const double w_raw = s.opacity * G;
                        const double w = std::min(kAlphaClampMax, w_raw);
                        if (w < kContributionMin) continue;
                        Contribution c;
                        c.id = int(n);
                        c.w = w;
                        c.tw = t * w;
                        c.g_unclamped = w_raw;
                        c.G = G;
                        c.m0 = s.conic_a * dx + s.conic_b * dy;
                        c.m1 = s.conic_b * dx + s.conic_c * dy;
                        contribs.push_back(c);
                        total += c.tw * s.color;
                        t *= 1.0 - w;
                        if (t < kTransmittanceMin) break;
                    }
                    total += t * opts.background;
                    const Vec3 g_pix(d_image.at(px, py, 0), d_image.at(px, py, 1),
                                     d_image.at(px, py, 2));
                    Vec3 partial = Vec3::Zero();
                    double t_i = 1.0;
                    for (const Contribution& c : contribs) {
                        const PreparedSplat& s = prep[list[c.id]];
                        SplatGrad& sg = tile_grads[tile][c.id];
                        partial += c.tw * s.color;
                        sg.d_color += c.tw * g_pix;
                        double dw = g_pix.dot(t_i * s.color - (total - partial) / (1.0 - c.w));
                        t_i *= 1.0 - c.w;
                        if (c.g_unclamped > kAlphaClampMax) continue; // clamp active
                        const double d_opacity = dw * c.G;
                        const double dG = dw * s.opacity;
                        const double dq = -0.5 * c.G * dG;
                        sg.d_opacity += d_opacity;
                        sg.d_mean[0] += dq * (-2.0 * c.m0);
                        sg.d_mean[1] += dq * (-2.0 * c.m1);
                        sg.d_cov_a += dq * (-c.m0 * c.m0);
                        sg.d_cov_b += dq * (-2.0 * c.m0 * c.m1);
                        sg.d_cov_c += dq * (-c.m1 * c.m1);
                    }
                }
            }
        }
    });

    std::vector<SplatGrad> out(splats.size());
    for (size_t tile = 0; tile < tile_count; ++tile) {
        const auto& list = grid.lists[tile];
        for (size_t n = 0; n < list.size(); ++n) {
            const SplatGrad& src = tile_grads[tile][n];
            SplatGrad& dst = out[prep[list[n]].input_index];
            dst.d_mean += src.d_mean;
            dst.d_cov_a += src.d_cov_a;
            dst.d_cov_b += src.d_cov_b;
            dst.d_cov_c += src.d_cov_c;
            dst.d_opacity += src.d_opacity;
            dst.d_color += src.d_color;
        }
    }
    return out;
}

} // namespace saro
