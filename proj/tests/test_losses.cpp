#include <doctest.h>

#include <cmath>

#include "saro/losses.hpp"
#include "support.hpp"

using namespace saro;
namespace st = saro::testing;

// Independent SSIM reference: explicit 11x11 Gaussian window, zero padding,
// direct (non-separable) convolution.
namespace {

struct Kernel2D {
    double w[11][11];
    Kernel2D() {
        double k1[11];
        double sum = 0.0;
        for (int i = 0; i < 11; ++i) {
            k1[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2.0 * 1.5 * 1.5));
            sum += k1[i];
        }
        for (int i = 0; i < 11; ++i) k1[i] /= sum;
        for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x) w[y][x] = k1[y] * k1[x];
    }
};

double conv_at(const Image& img, int px, int py, int c, const Kernel2D& k,
               const Image* other = nullptr) {
    double acc = 0.0;
    for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx) {
            int x = px + dx, y = py + dy;
            if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
            double v = img.at(x, y, c);
            if (other) v *= other->at(x, y, c);
            acc += k.w[dy + 5][dx + 5] * v;
        }
    return acc;
}

double ssim_reference(const Image& x, const Image& y) {
    const double c1 = 1e-4, c2 = 9e-4;
    Kernel2D k;
    double total = 0.0;
    size_t n = 0;
    for (int c = 0; c < 3; ++c)
        for (int py = 0; py < x.height; ++py)
            for (int px = 0; px < x.width; ++px) {
                double mx = conv_at(x, px, py, c, k);
                double my = conv_at(y, px, py, c, k);
                double mxx = conv_at(x, px, py, c, k, &x);
                double myy = conv_at(y, px, py, c, k, &y);
                double mxy = conv_at(x, px, py, c, k, &y);
                double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
                total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                         ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++n;
            }
    return total / double(n);
}

} // namespace

TEST_CASE("l1, mse, psnr on constructed images") {
    Image x(4, 3, 0.5), y(4, 3, 0.2);
    CHECK(l1_loss(x, y) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(mse(x, y) == doctest::Approx(0.09).epsilon(1e-14));
    y = x;
    y.at(1, 2, 0) += 0.12;
    CHECK(l1_loss(x, y) == doctest::Approx(0.12 / 36.0).epsilon(1e-13));
    CHECK(psnr(x, x) == 99.0);
    Image z(4, 3, 0.6); // uniform 0.1 offset: mse 0.01 -> 20 dB
    CHECK(psnr(x, z) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("l1 backward is the signed mean slope") {
    Image x(5, 4, 0.0), y(5, 4, 0.0);
    Rng rng(31);
    for (double& v : x.data) v = st::u01(rng);
    for (double& v : y.data) v = st::u01(rng);
    Image d(5, 4);
    l1_loss_backward(x, y, 2.0, d);
    size_t n = x.data.size();
    for (size_t i = 0; i < n; ++i) {
        double expect = (x.data[i] > y.data[i] ? 1.0 : -1.0) * 2.0 / double(n);
        if (x.data[i] == y.data[i]) expect = 0.0;
        CHECK(d.data[i] == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("ssim agrees with the direct convolution reference") {
    Rng rng(77);
    Image x(24, 16, 0.0), y(24, 16, 0.0);
    for (double& v : x.data) v = st::u01(rng);
    for (double& v : y.data) v = 0.3 + 0.4 * st::u01(rng);
    CHECK(ssim(x, y) == doctest::Approx(ssim_reference(x, y)).epsilon(1e-11));
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    Image scratch(24, 16);
    CHECK(ssim_backward(x, y, 1.0, scratch) == ssim(x, y));
}

TEST_CASE("ssim global operates on the channel mean") {
    Rng rng(78);
    Image x(16, 16, 0.0), y(16, 16, 0.0);
    // grayscale inputs: global and per-channel variants coincide
    for (int py = 0; py < 16; ++py)
        for (int px = 0; px < 16; ++px) {
            double a = st::u01(rng), b = st::u01(rng);
            for (int c = 0; c < 3; ++c) {
                x.at(px, py, c) = a;
                y.at(px, py, c) = b;
            }
        }
    CHECK(ssim_global(x, y) == doctest::Approx(ssim(x, y)).epsilon(1e-12));
}

TEST_CASE("loss mixing weights") {
    CHECK(dssim_from_ssim(0.5) == 0.25);
    LossWeights w;
    CHECK(total_loss(0.5, 0.25, 0.1, w) == doctest::Approx(0.53).epsilon(1e-14));
    LossWeights l1_only{0.0, 0.0};
    CHECK(total_loss(0.37, 0.9, 0.9, l1_only) == doctest::Approx(0.37).epsilon(1e-14));
}
