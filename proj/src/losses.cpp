#include "saro/losses.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace saro {

namespace {

void check_same_size(const Image& a, const Image& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw SaroError(std::string(what) + ": image size mismatch");
    if (a.width < 1 || a.height < 1) throw SaroError(std::string(what) + ": empty image");
}

} // namespace

double l1_loss(const Image& img, const Image& ref) {
    check_same_size(img, ref, "l1_loss");
    double acc = 0.0;
    for (size_t i = 0; i < img.data.size(); ++i) acc += std::abs(img.data[i] - ref.data[i]);
    return acc / double(img.data.size());
}

void l1_loss_backward(const Image& img, const Image& ref, double upstream, Image& d_img) {
    check_same_size(img, ref, "l1_loss_backward");
    const double g = upstream / double(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        double d = img.data[i] - ref.data[i];
        if (d > 0.0)
            d_img.data[i] += g;
        else if (d < 0.0)
            d_img.data[i] -= g;
    }
}

double mse(const Image& img, const Image& ref) {
    check_same_size(img, ref, "mse");
    double acc = 0.0;
    for (size_t i = 0; i < img.data.size(); ++i) {
        double d = img.data[i] - ref.data[i];
        acc += d * d;
    }
    return acc / double(img.data.size());
}

double psnr(const Image& img, const Image& ref) {
    double m = mse(img, ref);
    if (m <= 0.0) return 99.0;
    return std::min(99.0, -10.0 * std::log10(m));
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin>& gaussian_window() {
    static const std::array<double, kWin> w = [] {
        std::array<double, kWin> k{};
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            double d = i - (kWin - 1) / 2.0;
            k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
            sum += k[i];
        }
        for (double& v : k) v /= sum;
        return k;
    }();
    return w;
}

// Separable zero-padded same-size blur. Self-adjoint for this symmetric
// kernel, so the backward pass reuses it.
void blur(const std::vector<double>& src, int w, int h, std::vector<double>& tmp,
          std::vector<double>& dst) {
    const auto& k = gaussian_window();
    const int r = kWin / 2;
    tmp.resize(src.size());
    dst.resize(src.size());
    for (int y = 0; y < h; ++y) {
        const double* row = src.data() + size_t(y) * w;
        double* out = tmp.data() + size_t(y) * w;
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            int lo = std::max(0, x - r), hi = std::min(w - 1, x + r);
            for (int i = lo; i <= hi; ++i) acc += k[i - x + r] * row[i];
            out[x] = acc;
        }
    }
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            double acc = 0.0;
            int lo = std::max(0, y - r), hi = std::min(h - 1, y + r);
            for (int i = lo; i <= hi; ++i) acc += k[i - y + r] * tmp[size_t(i) * w + x];
            dst[size_t(y) * w + x] = acc;
        }
    }
}

struct SsimPlanes {
    std::vector<double> mu_x, mu_y, s_xx, s_yy, s_xy;
};

// Per-pixel SSIM map statistics for one channel pair.
double ssim_channel(const std::vector<double>& x, const std::vector<double>& y, int w, int h,
                    SsimPlanes* planes) {
    const size_t n = x.size();
    std::vector<double> tmp, prod(n);
    SsimPlanes local;
    SsimPlanes& p = planes ? *planes : local;
    blur(x, w, h, tmp, p.mu_x);
    blur(y, w, h, tmp, p.mu_y);
    for (size_t i = 0; i < n; ++i) prod[i] = x[i] * x[i];
    blur(prod, w, h, tmp, p.s_xx);
    for (size_t i = 0; i < n; ++i) prod[i] = y[i] * y[i];
    blur(prod, w, h, tmp, p.s_yy);
    for (size_t i = 0; i < n; ++i) prod[i] = x[i] * y[i];
    blur(prod, w, h, tmp, p.s_xy);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double mx = p.mu_x[i], my = p.mu_y[i];
        double vx = p.s_xx[i] - mx * mx;
        double vy = p.s_yy[i] - my * my;
        double cxy = p.s_xy[i] - mx * my;
        double a1 = 2.0 * mx * my + kC1, a2 = 2.0 * cxy + kC2;
        double b1 = mx * mx + my * my + kC1, b2 = vx + vy + kC2;
        acc += (a1 * a2) / (b1 * b2);
    }
    return acc / double(n);
}

// Gradient of mean SSIM w.r.t. x for one channel, scaled by upstream.
void ssim_channel_backward(const std::vector<double>& x, const std::vector<double>& y, int w,
                           int h, const SsimPlanes& p, double upstream, double* d_x) {
    const size_t n = x.size();
    std::vector<double> d_mu(n), d_sxx(n), d_sxy(n);
    const double scale = upstream / double(n);
    for (size_t i = 0; i < n; ++i) {
        double mx = p.mu_x[i], my = p.mu_y[i];
        double vx = p.s_xx[i] - mx * mx;
        double vy = p.s_yy[i] - my * my;
        double cxy = p.s_xy[i] - mx * my;
        double a1 = 2.0 * mx * my + kC1, a2 = 2.0 * cxy + kC2;
        double b1 = mx * mx + my * my + kC1, b2 = vx + vy + kC2;
        double inv = 1.0 / (b1 * b2);
        double d_a1 = scale * a2 * inv;
        double d_a2 = scale * a1 * inv;
        double d_b1 = -scale * a1 * a2 * inv / b1;
        double d_b2 = -scale * a1 * a2 * inv / b2;
        // mu_x enters a1, b1 directly and the central moments via -2mx, -my.
        d_mu[i] = d_a1 * 2.0 * my + d_b1 * 2.0 * mx + d_b2 * (-2.0 * mx) + d_a2 * 2.0 * (-my);
        d_sxx[i] = d_b2;
        d_sxy[i] = d_a2 * 2.0;
    }
    std::vector<double> tmp, blurred;
    blur(d_mu, w, h, tmp, blurred);
    for (size_t i = 0; i < n; ++i) d_x[i] += blurred[i];
    blur(d_sxx, w, h, tmp, blurred);
    for (size_t i = 0; i < n; ++i) d_x[i] += 2.0 * x[i] * blurred[i];
    blur(d_sxy, w, h, tmp, blurred);
    for (size_t i = 0; i < n; ++i) d_x[i] += y[i] * blurred[i];
}

void extract_channel(const Image& img, int c, std::vector<double>& out) {
    out.resize(size_t(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out[size_t(y) * img.width + x] = img.at(x, y, c);
}

} // namespace

double ssim(const Image& img, const Image& ref) {
    check_same_size(img, ref, "ssim");
    std::vector<double> x, y;
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) {
        extract_channel(img, c, x);
        extract_channel(ref, c, y);
        acc += ssim_channel(x, y, img.width, img.height, nullptr);
    }
    return acc / 3.0;
}

double ssim_backward(const Image& img, const Image& ref, double upstream, Image& d_img) {
    check_same_size(img, ref, "ssim_backward");
    std::vector<double> x, y;
    std::vector<double> dx(size_t(img.width) * img.height);
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) {
        extract_channel(img, c, x);
        extract_channel(ref, c, y);
        SsimPlanes planes;
        acc += ssim_channel(x, y, img.width, img.height, &planes);
        std::fill(dx.begin(), dx.end(), 0.0);
        ssim_channel_backward(x, y, img.width, img.height, planes, upstream / 3.0, dx.data());
        for (int py = 0; py < img.height; ++py)
            for (int px = 0; px < img.width; ++px)
                d_img.at(px, py, c) += dx[size_t(py) * img.width + px];
    }
    return acc / 3.0;
}

double ssim_global(const Image& img, const Image& ref) {
    check_same_size(img, ref, "ssim_global");
    std::vector<double> x(size_t(img.width) * img.height), y(x.size());
    for (int py = 0; py < img.height; ++py) {
        for (int px = 0; px < img.width; ++px) {
            size_t i = size_t(py) * img.width + px;
            x[i] = (img.at(px, py, 0) + img.at(px, py, 1) + img.at(px, py, 2)) / 3.0;
            y[i] = (ref.at(px, py, 0) + ref.at(px, py, 1) + ref.at(px, py, 2)) / 3.0;
        }
    }
    return ssim_channel(x, y, img.width, img.height, nullptr);
}

double total_loss(double l1, double dssim, double l_sr, const LossWeights& w) {
    if (w.lambda1 < 0.0 || w.lambda1 > 1.0) throw SaroError("total_loss: lambda1 out of [0,1]");
    if (w.lambda2 < 0.0) throw SaroError("total_loss: lambda2 must be nonnegative");
    return (1.0 - w.lambda1) * l1 + w.lambda1 * dssim + w.lambda2 * l_sr;
}

} // namespace saro
