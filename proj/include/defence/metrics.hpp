#pragma once

#include <limits>

#include "defence/image.hpp"

namespace defence {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();
inline constexpr int kSsimWindow = 8;

/// 10 log10(1 / MSE) over all samples; kInfinitePsnr when MSE = 0.
double psnr(const Image& a, const Image& b);

/// Mean SSIM over every 8x8 window of the luminance images,
/// C1 = 0.01^2, C2 = 0.03^2.
double ssim(const Image& a, const Image& b);

}  // namespace defence
