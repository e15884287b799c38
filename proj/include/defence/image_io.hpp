#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "defence/image.hpp"

namespace defence {

/// PNG (8/16-bit gray or RGB, alpha stripped) and binary PGM/PPM.
Image load_image(const std::filesystem::path& path);

/// Format is chosen by extension: .png, .pgm (1 channel) or .ppm (3 channels).
/// Samples are quantized as round(s * 255).
void save_image(const Image& image, const std::filesystem::path& path);

/// Single-channel PNG, 255 = fence, 0 = background.
void save_mask(const FenceMask& mask, const std::filesystem::path& path);
/// Any sample >= 0.5 after scaling counts as fence.
FenceMask load_mask(const std::filesystem::path& path);

/// One `x,y` pair per line.
std::vector<Point2> read_points(const std::filesystem::path& path);
void write_points(const std::vector<Point2>& points,
                  const std::filesystem::path& path);

}  // namespace defence
