#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "defence/image.hpp"
#include "defence/kernels.hpp"

namespace defence {

/// Content motion from the reference image to frame m: the frame shows
/// reference content at p - displacement(p), i.e. frame(p) = x(p - d(p)).
/// A global translation (dx, dy) therefore reproduces shift_image(x, (dx, dy)).
struct MotionField {
  enum class Kind { translation, dense };

  Kind kind = Kind::translation;
  double dx = 0.0;
  double dy = 0.0;
  int width = 0;
  int height = 0;
  std::vector<double> u;  // dense only, row-major
  std::vector<double> v;

  static MotionField translation(double dx, double dy);
  static MotionField dense(int width, int height, std::vector<double> u,
                           std::vector<double> v);

  Point2 at(int x, int y) const;
};

/// Sparse bilinear resampling of x into frame coordinates with an exact
/// transpose. Out-of-bounds taps are dropped, so border rows may sum to < 1.
class WarpOperator {
 public:
  WarpOperator() = default;
  WarpOperator(int width, int height, kernels::SparseRows rows);

  static WarpOperator identity(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixels() const { return static_cast<std::size_t>(width_) * height_; }
  const kernels::SparseRows& rows() const { return rows_; }
  const kernels::SparseRows& transposed() const { return transposed_; }

  double row_weight(std::size_t row) const;
  bool is_identity() const;

 private:
  int width_ = 0;
  int height_ = 0;
  kernels::SparseRows rows_;
  kernels::SparseRows transposed_;
};

WarpOperator build_warp(const MotionField& motion, int width, int height);

/// Plane-level operators; multi-channel data is a sequence of planes.
std::vector<double> apply_warp(const WarpOperator& warp, std::span<const double> x);
std::vector<double> apply_warp_adjoint(const WarpOperator& warp, std::span<const double> y);

Image apply_warp(const WarpOperator& warp, const Image& x);

struct Translation {
  double dx = 0.0;
  double dy = 0.0;
  double ncc = 0.0;
};

struct TranslationParams {
  int max_disp = 20;
  int levels = 3;
  double min_overlap = 0.25;
};

/// Coarse-to-fine NCC search over pixels unmasked in both frames, with a
/// parabolic sub-pixel fit around the integer peak. Returns the motion of
/// `frame` relative to `reference`.
Translation estimate_translation(const Image& reference, const Image& frame,
                                 const FenceMask* reference_mask,
                                 const FenceMask* frame_mask,
                                 const TranslationParams& params = {});

/// `DEFLOW v1 <width> <height>` header line, then little-endian float32
/// (u, v) pairs row-major.
void write_flow(const MotionField& flow, const std::filesystem::path& path);
/// Pass expected dimensions (> 0) to validate against them.
MotionField load_flow(const std::filesystem::path& path, int expected_width = 0,
                      int expected_height = 0);

}  // namespace defence
