#include "defence/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "defence/error.hpp"

namespace defence {

namespace {

double clamp_unit(double v) {
  if (!(v > 0.0)) return 0.0;  // also maps NaN to 0
  return v < 1.0 ? v : 1.0;
}

}  // namespace

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

Image::Image(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
  if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
    throw ShapeError("imagecore", "invalid image dimensions");
  }
  samples_.assign(plane_size() * static_cast<std::size_t>(channels),
                  clamp_unit(fill));
}

Image::Image(int width, int height, int channels, std::vector<double> samples)
    : width_(width), height_(height), channels_(channels),
      samples_(std::move(samples)) {
  if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
    throw ShapeError("imagecore", "invalid image dimensions");
  }
  if (samples_.size() != plane_size() * static_cast<std::size_t>(channels)) {
    throw ShapeError("imagecore", "sample count does not match dimensions");
  }
  for (double& s : samples_) s = clamp_unit(s);
}

void Image::set(int c, int y, int x, double v) {
  samples_[static_cast<std::size_t>(c) * plane_size() +
           static_cast<std::size_t>(y) * width_ + x] = clamp_unit(v);
}

FenceMask::FenceMask(int width, int height, std::uint8_t fill)
    : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw ShapeError("imagecore", "invalid mask dimensions");
  }
  bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

std::size_t FenceMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

Image to_luminance(const Image& image) {
  if (image.channels() == 1) return image;
  const std::size_t n = image.plane_size();
  std::vector<double> lum(n, 0.0);
  for (int c = 0; c < image.channels(); ++c) {
    auto plane = image.plane(c);
    for (std::size_t i = 0; i < n; ++i) lum[i] += plane[i];
  }
  for (double& v : lum) v /= image.channels();
  return Image(image.width(), image.height(), 1, std::move(lum));
}

Patch extract_patch(const Image& image, int cx, int cy, int side) {
  if (side <= 0) throw GeometryError("imagecore", "patch side must be positive");
  const int x0 = cx - side / 2;
  const int y0 = cy - side / 2;
  if (x0 < 0 || y0 < 0 || x0 + side > image.width() ||
      y0 + side > image.height()) {
    throw GeometryError("imagecore", "patch window out of bounds");
  }
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  std::vector<double> out(plane * image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    auto src = image.plane(c);
    for (int y = 0; y < side; ++y) {
      const double* row =
          src.data() + static_cast<std::size_t>(y0 + y) * image.width() + x0;
      std::copy(row, row + side, out.begin() + c * plane + y * side);
    }
  }
  return Patch{Image(side, side, image.channels(), std::move(out)),
               Point2{static_cast<double>(cx), static_cast<double>(cy)}};
}

Patch resize_bilinear(const Patch& patch, int new_side) {
  if (new_side < 2) throw GeometryError("imagecore", "resize target below 2");
  const int side = patch.side();
  if (side == new_side) return patch;
  const double scale =
      side > 1 ? static_cast<double>(side - 1) / (new_side - 1) : 0.0;
  const std::size_t plane = static_cast<std::size_t>(new_side) * new_side;
  std::vector<double> out(plane * patch.channels());
  for (int c = 0; c < patch.channels(); ++c) {
    for (int y = 0; y < new_side; ++y) {
      const double sy = y * scale;
      const int y0 = std::min(static_cast<int>(sy), side - 1);
      const int y1 = std::min(y0 + 1, side - 1);
      const double fy = sy - y0;
      for (int x = 0; x < new_side; ++x) {
        const double sx = x * scale;
        const int x0 = std::min(static_cast<int>(sx), side - 1);
        const int x1 = std::min(x0 + 1, side - 1);
        const double fx = sx - x0;
        const auto& p = patch.pixels;
        const double top = (1.0 - fx) * p.at(c, y0, x0) + fx * p.at(c, y0, x1);
        const double bot = (1.0 - fx) * p.at(c, y1, x0) + fx * p.at(c, y1, x1);
        out[c * plane + y * new_side + x] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
  return Patch{Image(new_side, new_side, patch.channels(), std::move(out)),
               patch.origin};
}

Image flip_horizontal(const Image& image) {
  std::vector<double> out(image.samples().begin(), image.samples().end());
  const int w = image.width();
  for (std::size_t row = 0; row < out.size() / w; ++row) {
    std::reverse(out.begin() + row * w, out.begin() + (row + 1) * w);
  }
  return Image(w, image.height(), image.channels(), std::move(out));
}

FenceMask invert(const FenceMask& mask) {
  FenceMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) out.set(x, y, !mask.at(x, y));
  return out;
}

}  // namespace defence
