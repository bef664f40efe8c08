#include "saro/residual_field.hpp"

#include <algorithm>
#include <cstring>

namespace saro {

PlaneGrid::PlaneGrid(int ru, int rv, int fd) : res_u(ru), res_v(rv), feat_dim(fd) {
    if (ru < 1 || rv < 1 || fd < 1) throw SaroError("PlaneGrid: resolution and feature dim must be >= 1");
    data.assign(size_t(ru) * rv * fd, 0.0);
}

namespace {

struct Axis1D {
    int i0, i1;
    double f;  // fractional offset within [i0, i1]
    double dg; // d(grid coord)/d(normalized coord); 0 where clamped
};

Axis1D axis_tap(int res, double u) {
    Axis1D a;
    if (res == 1) {
        a.i0 = a.i1 = 0;
        a.f = 0.0;
        a.dg = 0.0;
        return a;
    }
    double g = u * res - 0.5;
    double gc = clampd(g, 0.0, double(res - 1));
    a.dg = (g > 0.0 && g < double(res - 1)) ? double(res) : 0.0;
    a.i0 = std::min(int(gc), res - 2);
    a.f = gc - a.i0;
    a.i1 = a.i0 + 1;
    return a;
}

} // namespace

BilinearTap make_tap(const PlaneGrid& plane, double u, double v, double du_dx, double dv_dy) {
    Axis1D au = axis_tap(plane.res_u, u);
    Axis1D av = axis_tap(plane.res_v, v);
    BilinearTap t;
    t.cell[0] = av.i0 * plane.res_u + au.i0;
    t.cell[1] = av.i0 * plane.res_u + au.i1;
    t.cell[2] = av.i1 * plane.res_u + au.i0;
    t.cell[3] = av.i1 * plane.res_u + au.i1;
    const double fu = au.f, fv = av.f;
    t.w[0] = (1 - fu) * (1 - fv);
    t.w[1] = fu * (1 - fv);
    t.w[2] = (1 - fu) * fv;
    t.w[3] = fu * fv;
    t.dw_dgu[0] = -(1 - fv);
    t.dw_dgu[1] = (1 - fv);
    t.dw_dgu[2] = -fv;
    t.dw_dgu[3] = fv;
    t.dw_dgv[0] = -(1 - fu);
    t.dw_dgv[1] = -fu;
    t.dw_dgv[2] = (1 - fu);
    t.dw_dgv[3] = fu;
    t.dgu_dx = au.dg * du_dx;
    t.dgv_dy = av.dg * dv_dy;
    return t;
}

void apply_tap(const PlaneGrid& plane, const BilinearTap& tap, double weight, double* out) {
    const int m = plane.feat_dim;
    for (int i = 0; i < 4; ++i) {
        const double* src = plane.data.data() + size_t(tap.cell[i]) * m;
        const double w = weight * tap.w[i];
        for (int c = 0; c < m; ++c) out[c] += w * src[c];
    }
}

PlaneGrid pool_2x2(const PlaneGrid& parent) {
    PlaneGrid child((parent.res_u + 1) / 2, (parent.res_v + 1) / 2, parent.feat_dim);
    const int m = parent.feat_dim;
    for (int v = 0; v < child.res_v; ++v) {
        for (int u = 0; u < child.res_u; ++u) {
            for (int dv = 0; dv < 2; ++dv) {
                int pv = std::min(2 * v + dv, parent.res_v - 1);
                for (int du = 0; du < 2; ++du) {
                    int pu = std::min(2 * u + du, parent.res_u - 1);
                    for (int c = 0; c < m; ++c)
                        child.at(u, v, c) += 0.25 * parent.at(pu, pv, c);
                }
            }
        }
    }
    return child;
}

void pool_2x2_transpose(const PlaneGrid& parent_shape, const std::vector<double>& child_grad,
                        int child_res_u, int child_res_v, std::vector<double>& parent_grad) {
    const int m = parent_shape.feat_dim;
    for (int v = 0; v < child_res_v; ++v) {
        for (int u = 0; u < child_res_u; ++u) {
            const double* g = child_grad.data() + (size_t(v) * child_res_u + u) * m;
            for (int dv = 0; dv < 2; ++dv) {
                int pv = std::min(2 * v + dv, parent_shape.res_v - 1);
                for (int du = 0; du < 2; ++du) {
                    int pu = std::min(2 * u + du, parent_shape.res_u - 1);
                    double* dst = parent_grad.data() + (size_t(pv) * parent_shape.res_u + pu) * m;
                    for (int c = 0; c < m; ++c) dst[c] += 0.25 * g[c];
                }
            }
        }
    }
}

MipMapStack make_mipmap_stack(PlaneGrid level0, int level_count) {
    if (level_count < 1) throw SaroError("make_mipmap_stack: need at least one level");
    MipMapStack stack;
    stack.levels.reserve(level_count);
    stack.levels.push_back(std::move(level0));
    for (int l = 1; l < level_count; ++l) stack.levels.push_back(pool_2x2(stack.levels.back()));
    return stack;
}

double scale_level(const Vec2& s_proj, const Vec2& base, int level_count, Vec2* dl_ds) {
    if (dl_ds) dl_ds->setZero();
    double la = std::log2(s_proj[0] / base[0]);
    double lb = std::log2(s_proj[1] / base[1]);
    int arg = (la <= lb) ? 0 : 1;
    double l = std::min(la, lb);
    if (l <= 0.0) return 0.0;
    double lmax = double(level_count - 1);
    if (l >= lmax) return lmax;
    if (dl_ds) (*dl_ds)[arg] = 1.0 / (s_proj[arg] * M_LN2);
    return l;
}

HexplaneField::HexplaneField(int feat_dim, int spatial_res, int time_res, int level_count,
                             const Bbox& bbox)
    : feat_dim_(feat_dim), spatial_res_(spatial_res), time_res_(time_res),
      level_count_(level_count), bbox_(bbox) {
    if (feat_dim < 1) throw SaroError("HexplaneField: feature dim must be >= 1");
    if (spatial_res < 2 || time_res < 2) throw SaroError("HexplaneField: resolutions must be >= 2");
    if (level_count < 1) throw SaroError("HexplaneField: need at least one mip level");
    if (!bbox.valid()) throw SaroError("HexplaneField: invalid bbox");
    Vec3 ext = bbox.extent();
    for (int i = 0; i < 3; ++i) {
        stacks_[i].levels.assign(1, PlaneGrid(spatial_res, spatial_res, feat_dim));
        stacks_[i].base_scale =
            Vec2(ext[kSpatialAxes[i][0]], ext[kSpatialAxes[i][1]]) / double(spatial_res);
        spacetime_[i] = PlaneGrid(spatial_res, time_res, feat_dim);
    }
    ensure_thumbnails();
}

const MipMapStack& HexplaneField::spatial_stack(int i) const {
    if (dirty_) throw SaroError("spatial_stack: thumbnails are stale; call ensure_thumbnails()");
    return stacks_[i];
}

PlaneGrid& HexplaneField::spatial_base(int i) {
    dirty_ = true;
    return stacks_[i].levels[0];
}

PlaneGrid& HexplaneField::spacetime_plane_mut(int i) { return spacetime_[i]; }

void HexplaneField::init_uniform(Rng& rng, double amplitude) {
    std::uniform_real_distribution<double> uni(-amplitude, amplitude);
    for (auto& s : stacks_)
        for (double& v : s.levels[0].data) v = uni(rng);
    for (auto& p : spacetime_)
        for (double& v : p.data) v = uni(rng);
    dirty_ = true;
    ensure_thumbnails();
}

void HexplaneField::ensure_thumbnails() {
    if (!dirty_) return;
    for (auto& s : stacks_) {
        s.levels.resize(1);
        for (int l = 1; l < level_count_; ++l) s.levels.push_back(pool_2x2(s.levels.back()));
    }
    dirty_ = false;
}

namespace {

// Normalized coordinate plus the chain factor to the world input; the factor
// is zero once the position leaves the covered range.
struct NormCoord {
    double u;
    double du_dx;
};

NormCoord normalize_axis(double x, double lo, double hi) {
    double ext = hi - lo;
    double u = (x - lo) / ext;
    NormCoord n;
    n.du_dx = (u > 0.0 && u < 1.0) ? 1.0 / ext : 0.0;
    n.u = clampd(u, 0.0, 1.0);
    return n;
}

} // namespace

void HexplaneField::query(const Vec4& pos, const Vec3& scale, double* f,
                          FieldQueryCache* cache) const {
    if (dirty_) throw SaroError("query: thumbnails are stale; call ensure_thumbnails()");
    std::fill(f, f + feat_dim_, 0.0);
    NormCoord nc[4];
    for (int a = 0; a < 3; ++a) nc[a] = normalize_axis(pos[a], bbox_.min[a], bbox_.max[a]);
    nc[3] = normalize_axis(pos[3], 0.0, 1.0);

    for (int i = 0; i < 3; ++i) {
        const MipMapStack& stack = stacks_[i];
        const int ax = kSpatialAxes[i][0], ay = kSpatialAxes[i][1];
        Vec2 dl2;
        double l = scale_level(Vec2(scale[ax], scale[ay]), stack.base_scale, level_count_, &dl2);
        int l0 = std::min(int(l), level_count_ - 1);
        int l1 = std::min(l0 + 1, level_count_ - 1);
        double frac = l - l0;
        BilinearTap tap0 =
            make_tap(stack.levels[l0], nc[ax].u, nc[ay].u, nc[ax].du_dx, nc[ay].du_dx);
        BilinearTap tap1 =
            make_tap(stack.levels[l1], nc[ax].u, nc[ay].u, nc[ax].du_dx, nc[ay].du_dx);
        apply_tap(stack.levels[l0], tap0, 1.0 - frac, f);
        apply_tap(stack.levels[l1], tap1, frac, f);
        if (cache) {
            StackSample& s = cache->spatial[i];
            s.l0 = l0;
            s.l1 = l1;
            s.frac = frac;
            s.tap0 = tap0;
            s.tap1 = tap1;
            s.dl_ds.setZero();
            s.dl_ds[ax] = dl2[0];
            s.dl_ds[ay] = dl2[1];
        }
    }
    for (int i = 0; i < 3; ++i) {
        const int ax = kTimeAxes[i];
        BilinearTap tap = make_tap(spacetime_[i], nc[ax].u, nc[3].u, nc[ax].du_dx, nc[3].du_dx);
        apply_tap(spacetime_[i], tap, 1.0, f);
        if (cache) cache->spacetime[i] = tap;
    }
}

namespace {

// dot(df, bilinear sample) and the two grid-coordinate derivatives of that dot.
struct TapPullback {
    double val = 0.0;
    double d_gu = 0.0;
    double d_gv = 0.0;
};

TapPullback tap_pullback(const PlaneGrid& plane, const BilinearTap& tap, const double* df) {
    TapPullback r;
    const int m = plane.feat_dim;
    for (int i = 0; i < 4; ++i) {
        const double* src = plane.data.data() + size_t(tap.cell[i]) * m;
        double dot = 0.0;
        for (int c = 0; c < m; ++c) dot += df[c] * src[c];
        r.val += tap.w[i] * dot;
        r.d_gu += tap.dw_dgu[i] * dot;
        r.d_gv += tap.dw_dgv[i] * dot;
    }
    return r;
}

void scatter_tap(const BilinearTap& tap, double weight, const double* df, int m,
                 std::vector<double>& grad) {
    for (int i = 0; i < 4; ++i) {
        double* dst = grad.data() + size_t(tap.cell[i]) * m;
        const double w = weight * tap.w[i];
        for (int c = 0; c < m; ++c) dst[c] += w * df[c];
    }
}

} // namespace

void HexplaneField::backward_query(const FieldQueryCache& cache, const double* df,
                                   FieldGradients* grads, Vec4* d_pos, Vec3* d_scale) const {
    if (dirty_) throw SaroError("backward_query: thumbnails are stale");
    for (int i = 0; i < 3; ++i) {
        const StackSample& s = cache.spatial[i];
        const MipMapStack& stack = stacks_[i];
        const int ax = kSpatialAxes[i][0], ay = kSpatialAxes[i][1];
        TapPullback p0 = tap_pullback(stack.levels[s.l0], s.tap0, df);
        TapPullback p1 = tap_pullback(stack.levels[s.l1], s.tap1, df);
        const double w0 = 1.0 - s.frac, w1 = s.frac;
        if (d_pos) {
            (*d_pos)[ax] += w0 * p0.d_gu * s.tap0.dgu_dx + w1 * p1.d_gu * s.tap1.dgu_dx;
            (*d_pos)[ay] += w0 * p0.d_gv * s.tap0.dgv_dy + w1 * p1.d_gv * s.tap1.dgv_dy;
        }
        if (d_scale) *d_scale += (p1.val - p0.val) * s.dl_ds;
        if (grads) {
            scatter_tap(s.tap0, w0, df, feat_dim_, grads->spatial[i][s.l0]);
            scatter_tap(s.tap1, w1, df, feat_dim_, grads->spatial[i][s.l1]);
        }
    }
    for (int i = 0; i < 3; ++i) {
        const BilinearTap& tap = cache.spacetime[i];
        const int ax = kTimeAxes[i];
        TapPullback p = tap_pullback(spacetime_[i], tap, df);
        if (d_pos) {
            (*d_pos)[ax] += p.d_gu * tap.dgu_dx;
            (*d_pos)[3] += p.d_gv * tap.dgv_dy;
        }
        if (grads) scatter_tap(tap, 1.0, df, feat_dim_, grads->spacetime[i]);
    }
}

size_t HexplaneField::trainable_count() const {
    size_t n = 0;
    for (const auto& s : stacks_) n += s.levels[0].data.size();
    for (const auto& p : spacetime_) n += p.data.size();
    return n;
}

void HexplaneField::gather_trainable(double* out) const {
    for (const auto& s : stacks_) {
        std::memcpy(out, s.levels[0].data.data(), s.levels[0].data.size() * sizeof(double));
        out += s.levels[0].data.size();
    }
    for (const auto& p : spacetime_) {
        std::memcpy(out, p.data.data(), p.data.size() * sizeof(double));
        out += p.data.size();
    }
}

void HexplaneField::scatter_trainable(const double* in) {
    for (auto& s : stacks_) {
        std::memcpy(s.levels[0].data.data(), in, s.levels[0].data.size() * sizeof(double));
        in += s.levels[0].data.size();
    }
    for (auto& p : spacetime_) {
        std::memcpy(p.data.data(), in, p.data.size() * sizeof(double));
        in += p.data.size();
    }
    dirty_ = true;
    ensure_thumbnails();
}

std::vector<double> HexplaneField::collapse_gradients(const FieldGradients& grads) const {
    std::vector<double> flat;
    flat.reserve(trainable_count());
    for (int i = 0; i < 3; ++i) {
        const MipMapStack& stack = stacks_[i];
        // Fold thumbnail-level gradients down one level at a time.
        std::vector<std::vector<double>> acc = grads.spatial[i];
        for (int l = level_count_ - 1; l >= 1; --l)
            pool_2x2_transpose(stack.levels[l - 1], acc[l], stack.levels[l].res_u,
                               stack.levels[l].res_v, acc[l - 1]);
        flat.insert(flat.end(), acc[0].begin(), acc[0].end());
    }
    for (int i = 0; i < 3; ++i)
        flat.insert(flat.end(), grads.spacetime[i].begin(), grads.spacetime[i].end());
    return flat;
}

void FieldGradients::init(const HexplaneField& field) {
    spatial.assign(3, {});
    spacetime.assign(3, {});
    for (int i = 0; i < 3; ++i) {
        const MipMapStack& stack = field.stacks_[i];
        spatial[i].resize(stack.level_count());
        for (int l = 0; l < stack.level_count(); ++l)
            spatial[i][l].assign(stack.levels[l].data.size(), 0.0);
        spacetime[i].assign(field.spacetime_[i].data.size(), 0.0);
    }
}

void FieldGradients::zero() {
    for (auto& stack : spatial)
        for (auto& level : stack) std::fill(level.begin(), level.end(), 0.0);
    for (auto& plane : spacetime) std::fill(plane.begin(), plane.end(), 0.0);
}

} // namespace saro
