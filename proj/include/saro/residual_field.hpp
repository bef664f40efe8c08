#pragma once

#include <vector>

#include "saro/common.hpp"

namespace saro {

// One 2D feature grid. Cell (u, v) stores feat_dim channels; cell centers sit
// at normalized coordinates ((u + 0.5)/res_u, (v + 0.5)/res_v).
struct PlaneGrid {
    int res_u = 0;
    int res_v = 0;
    int feat_dim = 0;
    std::vector<double> data; // [(v*res_u + u)*feat_dim + c]

    PlaneGrid() = default;
    PlaneGrid(int ru, int rv, int fd);

    size_t cell_count() const { return size_t(res_u) * res_v; }
    double& at(int u, int v, int c) { return data[(size_t(v) * res_u + u) * feat_dim + c]; }
    double at(int u, int v, int c) const { return data[(size_t(v) * res_u + u) * feat_dim + c]; }
};

// Bilinear footprint of one sample: the four touched cells, their weights,
// the weight derivatives in grid units, and the chain factors from the world
// inputs to grid units (zero where the sample was clamped to the boundary).
struct BilinearTap {
    int cell[4] = {0, 0, 0, 0}; // flattened v*res_u + u
    double w[4] = {0, 0, 0, 0};
    double dw_dgu[4] = {0, 0, 0, 0};
    double dw_dgv[4] = {0, 0, 0, 0};
    double dgu_dx = 0.0;
    double dgv_dy = 0.0;
};

BilinearTap make_tap(const PlaneGrid& plane, double u, double v, double du_dx, double dv_dy);

// out[c] += weight * sample[c] for the tap's bilinear sample.
void apply_tap(const PlaneGrid& plane, const BilinearTap& tap, double weight, double* out);

// Mipmap pyramid over one spatial plane. Level 0 is trainable; level l+1 is
// the 2x2 average pooling of level l (edge replication on odd dimensions) at
// resolution ceil(N/2^(l+1)).
struct MipMapStack {
    std::vector<PlaneGrid> levels;
    Vec2 base_scale = Vec2::Zero(); // world size of one level-0 cell per axis

    int level_count() const { return int(levels.size()); }
};

PlaneGrid pool_2x2(const PlaneGrid& parent);
MipMapStack make_mipmap_stack(PlaneGrid level0, int level_count);

// Scatters child-level cell gradients back onto the parent level (transpose
// of pool_2x2), accumulating into parent_grad.
void pool_2x2_transpose(const PlaneGrid& parent_shape, const std::vector<double>& child_grad,
                        int child_res_u, int child_res_v, std::vector<double>& parent_grad);

// Fractional mip level for a footprint with projected world axes s_proj on a
// plane with level-0 cell sizes base: clamp(min(log2(sx/bx), log2(sy/by)), 0, L-1).
// dl_ds (optional) receives the subgradient w.r.t. s_proj.
double scale_level(const Vec2& s_proj, const Vec2& base, int level_count, Vec2* dl_ds = nullptr);

struct StackSample {
    int l0 = 0, l1 = 0;
    double frac = 0.0; // cross-level weight: (1-frac)*level l0 + frac*level l1
    BilinearTap tap0, tap1;
    Vec3 dl_ds = Vec3::Zero(); // level subgradient w.r.t. the world scale vector
};

// Everything needed to replay one residual-feature query in the backward
// pass without re-deriving weights.
struct FieldQueryCache {
    StackSample spatial[3];
    BilinearTap spacetime[3];
};

class HexplaneField;

// Gradient buffers matching the field's plane layout. Spatial gradients are
// scattered at the mip level each tap touched and collapsed onto level 0
// through the pooling transpose when flattened.
struct FieldGradients {
    std::vector<std::vector<std::vector<double>>> spatial; // [stack][level][cell*M + c]
    std::vector<std::vector<double>> spacetime;            // [plane][cell*M + c]

    void init(const HexplaneField& field);
    void zero();
};

// The residual feature field: three mipmapped spatial planes {xy, xz, yz}
// plus three spatiotemporal planes {xt, yt, zt}, all sharing one feature
// dimension. A query sums one scale-aware sample per spatial stack and one
// bilinear sample per spatiotemporal plane.
class HexplaneField {
  public:
    // Axis pairs, indexing {x,y,z}: spatial stack i spans kSpatialAxes[i],
    // spatiotemporal plane i spans (kTimeAxes[i], t).
    static constexpr int kSpatialAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    static constexpr int kTimeAxes[3] = {0, 1, 2};

    HexplaneField(int feat_dim, int spatial_res, int time_res, int level_count, const Bbox& bbox);

    int feat_dim() const { return feat_dim_; }
    int spatial_res() const { return spatial_res_; }
    int time_res() const { return time_res_; }
    int level_count() const { return level_count_; }
    const Bbox& bbox() const { return bbox_; }

    const MipMapStack& spatial_stack(int i) const;
    const PlaneGrid& spacetime_plane(int i) const { return spacetime_[i]; }

    // Mutable access to trainable tensors; any write marks thumbnails dirty.
    PlaneGrid& spatial_base(int i);
    PlaneGrid& spacetime_plane_mut(int i);

    void init_uniform(Rng& rng, double amplitude);

    // Rebuilds thumbnail levels if dirty. Queries from multiple threads are
    // safe only after this ran with exclusive access.
    void ensure_thumbnails();

    // pos = (x, y, z, tau); scale = activated world scale. Writes feat_dim()
    // values into f. The spatiotemporal planes sample at the primitive's tau,
    // so the feature depends on time only through the trainable planes.
    void query(const Vec4& pos, const Vec3& scale, double* f, FieldQueryCache* cache = nullptr) const;

    // Accumulates d(loss)/d(inputs) for one cached query given df = dL/df.
    // Any output pointer may be null. Plane scatter is not thread safe.
    void backward_query(const FieldQueryCache& cache, const double* df, FieldGradients* grads,
                        Vec4* d_pos, Vec3* d_scale) const;

    // Flat trainable vector: spatial level-0 planes in stack order, then
    // spatiotemporal planes. collapse_gradients matches this layout.
    size_t trainable_count() const;
    void gather_trainable(double* out) const;
    void scatter_trainable(const double* in);
    std::vector<double> collapse_gradients(const FieldGradients& grads) const;

  private:
    int feat_dim_;
    int spatial_res_;
    int time_res_;
    int level_count_;
    Bbox bbox_;
    MipMapStack stacks_[3];
    PlaneGrid spacetime_[3];
    bool dirty_ = true;

    friend struct FieldGradients;
};

} // namespace saro
