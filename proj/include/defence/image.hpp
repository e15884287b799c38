#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace defence {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

double distance(Point2 a, Point2 b);

struct Offset {
  int dx = 0;
  int dy = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

/// Multi-channel raster of unit-range samples, planar and row-major per
/// channel. Every write clamps to [0,1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0);
  /// Takes ownership of `samples` (planar layout); values are clamped.
  Image(int width, int height, int channels, std::vector<double> samples);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  bool empty() const { return samples_.empty(); }

  double at(int c, int y, int x) const {
    return samples_[static_cast<std::size_t>(c) * plane_size() +
                    static_cast<std::size_t>(y) * width_ + x];
  }
  void set(int c, int y, int x, double v);

  std::span<const double> samples() const { return samples_; }
  std::span<const double> plane(int c) const {
    return std::span<const double>(samples_).subspan(
        static_cast<std::size_t>(c) * plane_size(), plane_size());
  }

  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_ &&
           channels_ == other.channels_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> samples_;
};

/// Square window cut from a source image; `origin` is the window center in
/// source coordinates.
struct Patch {
  Image pixels;
  Point2 origin;

  int side() const { return pixels.width(); }
  int channels() const { return pixels.channels(); }
};

/// Per-pixel binary occlusion map: 1 = fence, 0 = background.
class FenceMask {
 public:
  FenceMask() = default;
  FenceMask(int width, int height, std::uint8_t fill = 0);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return bits_.size(); }

  bool at(int x, int y) const {
    return bits_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }
  void set(int x, int y, bool on) {
    bits_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0;
  }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }
  std::size_t count() const;
  std::span<const std::uint8_t> bits() const { return bits_; }

  friend bool operator==(const FenceMask&, const FenceMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Mean of channels; a 1-channel input is returned unchanged.
Image to_luminance(const Image& image);

/// Copies the side x side window centered at (cx, cy). For even sides the
/// center is the pixel at index side/2 inside the window.
Patch extract_patch(const Image& image, int cx, int cy, int side);

/// Bilinear resampling with a corner-aligned grid.
Patch resize_bilinear(const Patch& patch, int new_side);

/// Mirror about the vertical axis.
Image flip_horizontal(const Image& image);

FenceMask invert(const FenceMask& mask);

}  // namespace defence
