#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "drtl/image.hpp"

namespace drtl::eval {

// 10*log10(1/MSE) over all elements; +inf when the images are identical.
// Intensities are assumed in [0,1] (dynamic range 1).
double psnr(const Image& a, const Image& b);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1, mean over valid (fully interior) windows. RGB inputs are
// converted to BT.601 luma first. Requires min(H,W) >= 11.
double ssim(const Image& a, const Image& b);

// mean PSNR convention: +inf entries enter the mean capped at 100 dB unless
// exclude_inf is set, in which case they are dropped
double aggregate_psnr(const std::vector<double>& values, bool exclude_inf = false);

inline constexpr double kPsnrCapDb = 100.0;

struct MetricReport {
    std::string regime;
    std::string dataset_hash;
    uint64_t seed = 0;
    std::vector<double> per_image_psnr;
    std::vector<double> per_image_ssim;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

// Restores every distorted image via `restore` (restorer clamps to [0,1]),
// then scores against the clean references. Pairs are (clean, distorted).
MetricReport evaluate_restorer(const std::function<Image(const Image&)>& restore,
                               const std::vector<std::pair<Image, Image>>& pairs,
                               const std::string& regime = {},
                               const std::string& dataset_hash = {}, uint64_t seed = 0);

}  // namespace drtl::eval
