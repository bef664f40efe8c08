#pragma once

#include "saro/common.hpp"

namespace saro {

struct LossWeights {
    double lambda1 = 0.2; // structural-dissimilarity weight
    double lambda2 = 0.8; // scale-residual regularizer weight
};

double l1_loss(const Image& img, const Image& ref);
// Accumulates upstream * d(l1)/d(img) into d_img.
void l1_loss_backward(const Image& img, const Image& ref, double upstream, Image& d_img);

double mse(const Image& img, const Image& ref);
// 10*log10(1/mse) for [0,1] images, capped at 99 dB.
double psnr(const Image& img, const Image& ref);

// Mean SSIM over pixels and channels: 11x11 Gaussian window (sigma 1.5),
// C1=0.01^2, C2=0.03^2, zero-padded same-size convolution.
double ssim(const Image& img, const Image& ref);
// Same value; also accumulates upstream * d(ssim)/d(img) into d_img.
double ssim_backward(const Image& img, const Image& ref, double upstream, Image& d_img);
// SSIM of the channel-mean (grayscale) images.
double ssim_global(const Image& img, const Image& ref);

inline double dssim_from_ssim(double s) { return 0.5 * (1.0 - s); }

// (1 - lambda1) * l1 + lambda1 * dssim + lambda2 * l_sr.
double total_loss(double l1, double dssim, double l_sr, const LossWeights& w);

} // namespace saro
