#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace saro {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

using Rng = std::mt19937_64;

struct Bbox {
    Vec3 min = Vec3(-1.0, -1.0, -1.0);
    Vec3 max = Vec3(1.0, 1.0, 1.0);

    bool valid() const {
        return (min.array() < max.array()).all() && min.allFinite() && max.allFinite();
    }
    Vec3 extent() const { return max - min; }
    double max_extent() const { return extent().maxCoeff(); }
};

// Row-major float RGB image, values nominally in [0,1], origin top-left.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data; // height*width*3

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), data(size_t(w) * h * 3, fill) {}

    double& at(int x, int y, int c) { return data[(size_t(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(size_t(y) * width + x) * 3 + c]; }
    size_t pixel_count() const { return size_t(width) * height; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

// Single-channel double image (depth maps, weights).
struct Plane2D {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Plane2D() = default;
    Plane2D(int w, int h, double fill = 0.0) : width(w), height(h), data(size_t(w) * h, fill) {}
    double& at(int x, int y) { return data[size_t(y) * width + x]; }
    double at(int x, int y) const { return data[size_t(y) * width + x]; }
};

inline double logistic(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double softplus(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

// d softplus / dx = logistic(x)
inline double softplus_grad(double x) { return logistic(x); }

inline double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Number of worker threads: SARO_THREADS caps it, default hardware concurrency.
int thread_count();

// Deterministic chunked parallel loop. The index range [0, n) is cut into
// fixed-size chunks; fn(chunk_index, begin, end) runs once per chunk. Chunk
// boundaries depend only on (n, chunk_size), never on the thread count, so
// per-chunk accumulators merged in chunk order give bitwise-stable reductions.
void parallel_chunks(size_t n, size_t chunk_size,
                     const std::function<void(size_t, size_t, size_t)>& fn);

size_t chunk_count(size_t n, size_t chunk_size);

// FNV-1a over raw bytes; used for content hashes (bake staleness checks).
constexpr uint64_t kFnvBasis = 1469598103934665603ull;
uint64_t fnv1a64(const void* data, size_t bytes, uint64_t seed = kFnvBasis);

struct SaroError : std::runtime_error {
    explicit SaroError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace saro
