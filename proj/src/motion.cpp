#include "defence/motion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "defence/error.hpp"

namespace defence {

namespace {

constexpr const char* kModule = "motion";

// Luminance plane with a validity flag per pixel (false = fenced).
struct Level {
  int width = 0;
  int height = 0;
  std::vector<double> value;
  std::vector<std::uint8_t> valid;
};

Level make_level(const Image& image, const FenceMask* mask) {
  const Image lum = to_luminance(image);
  Level l{lum.width(), lum.height(),
          std::vector<double>(lum.samples().begin(), lum.samples().end()),
          std::vector<std::uint8_t>(lum.plane_size(), 1)};
  if (mask) {
    if (mask->width() != l.width || mask->height() != l.height) {
      throw ShapeError(kModule, "exclusion mask does not match frame");
    }
    for (std::size_t i = 0; i < l.valid.size(); ++i) l.valid[i] = mask->bits()[i] ? 0 : 1;
  }
  return l;
}

Level downsample(const Level& fine) {
  Level c;
  c.width = fine.width / 2;
  c.height = fine.height / 2;
  c.value.assign(static_cast<std::size_t>(c.width) * c.height, 0.0);
  c.valid.assign(c.value.size(), 1);
  for (int y = 0; y < c.height; ++y) {
    for (int x = 0; x < c.width; ++x) {
      double acc = 0.0;
      bool ok = true;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          const std::size_t k = static_cast<std::size_t>(2 * y + i) * fine.width + 2 * x + j;
          acc += fine.value[k];
          ok = ok && fine.valid[k];
        }
      const std::size_t k = static_cast<std::size_t>(y) * c.width + x;
      c.value[k] = acc / 4.0;
      c.valid[k] = ok;
    }
  }
  return c;
}

// NCC between ref(q) and frame(q + d) over jointly valid pixels. Returns -2 if
// the overlap is below `min_count`.
double ncc_at(const Level& ref, const Level& frm, int dx, int dy, std::size_t min_count) {
  const int x0 = std::max(0, -dx), x1 = std::min(ref.width, ref.width - dx);
  const int y0 = std::max(0, -dy), y1 = std::min(ref.height, ref.height - dy);
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  std::size_t n = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const std::size_t qa = static_cast<std::size_t>(y) * ref.width + x;
      const std::size_t qb = static_cast<std::size_t>(y + dy) * frm.width + x + dx;
      if (!ref.valid[qa] || !frm.valid[qb]) continue;
      const double a = ref.value[qa], b = frm.value[qb];
      sa += a;
      sb += b;
      saa += a * a;
      sbb += b * b;
      sab += a * b;
      ++n;
    }
  }
  if (n < min_count || n < 2) return -2.0;
  const double mean_a = sa / n, mean_b = sb / n;
  const double va = saa / n - mean_a * mean_a;
  const double vb = sbb / n - mean_b * mean_b;
  const double cov = sab / n - mean_a * mean_b;
  if (va <= 1e-14 || vb <= 1e-14) return 0.0;
  return cov / std::sqrt(va * vb);
}

struct Peak {
  int dx = 0, dy = 0;
  double score = -std::numeric_limits<double>::infinity();
};

Peak search(const Level& ref, const Level& frm, int cx, int cy, int radius,
            std::size_t min_count) {
  Peak best;
  for (int dy = cy - radius; dy <= cy + radius; ++dy) {
    for (int dx = cx - radius; dx <= cx + radius; ++dx) {
      const double s = ncc_at(ref, frm, dx, dy, min_count);
      if (s <= -2.0) continue;
      const bool better = s > best.score + 1e-12;
      const bool tie = std::abs(s - best.score) <= 1e-12 &&
                       dx * dx + dy * dy < best.dx * best.dx + best.dy * best.dy;
      if (better || tie) best = {dx, dy, s};
    }
  }
  return best;
}

double parabolic_offset(double minus, double center, double plus) {
  const double denom = minus - 2.0 * center + plus;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp(0.5 * (minus - plus) / denom, -0.5, 0.5);
}

}  // namespace

MotionField MotionField::translation(double dx, double dy) {
  if (!std::isfinite(dx) || !std::isfinite(dy)) {
    throw NumericError(kModule, "non-finite translation");
  }
  MotionField m;
  m.kind = Kind::translation;
  m.dx = dx;
  m.dy = dy;
  return m;
}

MotionField MotionField::dense(int width, int height, std::vector<double> u,
                               std::vector<double> v) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (width <= 0 || height <= 0 || u.size() != n || v.size() != n) {
    throw ShapeError(kModule, "dense flow arrays do not match dimensions");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(u[i]) || !std::isfinite(v[i])) {
      throw NumericError(kModule, "non-finite flow vector at index " + std::to_string(i));
    }
  }
  MotionField m;
  m.kind = Kind::dense;
  m.width = width;
  m.height = height;
  m.u = std::move(u);
  m.v = std::move(v);
  return m;
}

Point2 MotionField::at(int x, int y) const {
  if (kind == Kind::translation) return {dx, dy};
  const std::size_t i = static_cast<std::size_t>(y) * width + x;
  return {u[i], v[i]};
}

WarpOperator::WarpOperator(int width, int height, kernels::SparseRows rows)
    : width_(width), height_(height), rows_(std::move(rows)) {
  if (rows_.rows() != pixels()) throw ShapeError(kModule, "warp row count mismatch");
  transposed_ = kernels::transpose(rows_, pixels());
}

WarpOperator WarpOperator::identity(int width, int height) {
  return build_warp(MotionField::translation(0.0, 0.0), width, height);
}

double WarpOperator::row_weight(std::size_t row) const {
  double s = 0.0;
  for (std::size_t k = rows_.row_ptr[row]; k < rows_.row_ptr[row + 1]; ++k) s += rows_.weight[k];
  return s;
}

bool WarpOperator::is_identity() const {
  for (std::size_t r = 0; r < rows_.rows(); ++r) {
    if (rows_.row_ptr[r + 1] - rows_.row_ptr[r] != 1) return false;
    const std::size_t k = rows_.row_ptr[r];
    if (rows_.index[k] != static_cast<int>(r) || rows_.weight[k] != 1.0) return false;
  }
  return true;
}

// Sample offsets closer than this to a pixel center are snapped to it, so an
// estimate a few thousandths off an integer shift does not produce near-empty
// border taps.
constexpr double kSnap = 1e-2;

WarpOperator build_warp(const MotionField& motion, int width, int height) {
  if (motion.kind == MotionField::Kind::dense &&
      (motion.width != width || motion.height != height)) {
    throw ShapeError(kModule, "flow dimensions do not match the frame");
  }
  kernels::SparseRows rows;
  rows.row_ptr.reserve(static_cast<std::size_t>(width) * height + 1);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Point2 d = motion.at(x, y);
      const double sx = x - d.x, sy = y - d.y;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      double fx = sx - fx0, fy = sy - fy0;
      if (fx < kSnap) fx = 0.0; else if (fx > 1.0 - kSnap) fx = 1.0;
      if (fy < kSnap) fy = 0.0; else if (fy > 1.0 - kSnap) fy = 1.0;
      const int tx[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ty[4] = {y0, y0, y0 + 1, y0 + 1};
      const double tw[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      for (int k = 0; k < 4; ++k) {
        if (tw[k] == 0.0) continue;
        if (tx[k] < 0 || ty[k] < 0 || tx[k] >= width || ty[k] >= height) continue;
        rows.index.push_back(ty[k] * width + tx[k]);
        rows.weight.push_back(tw[k]);
      }
      rows.row_ptr.push_back(rows.index.size());
    }
  }
  return WarpOperator(width, height, std::move(rows));
}

std::vector<double> apply_warp(const WarpOperator& warp, std::span<const double> x) {
  const std::size_t n = warp.pixels();
  if (n == 0 || x.size() % n != 0) throw ShapeError(kModule, "warp input size mismatch");
  std::vector<double> y(x.size());
  for (std::size_t p0 = 0; p0 < x.size(); p0 += n) {
    kernels::gather(warp.rows(), x.subspan(p0, n), std::span<double>(y).subspan(p0, n));
  }
  return y;
}

std::vector<double> apply_warp_adjoint(const WarpOperator& warp, std::span<const double> y) {
  const std::size_t n = warp.pixels();
  if (n == 0 || y.size() % n != 0) throw ShapeError(kModule, "warp input size mismatch");
  std::vector<double> x(y.size());
  for (std::size_t p0 = 0; p0 < y.size(); p0 += n) {
    kernels::gather(warp.transposed(), y.subspan(p0, n), std::span<double>(x).subspan(p0, n));
  }
  return x;
}

Image apply_warp(const WarpOperator& warp, const Image& x) {
  if (x.width() != warp.width() || x.height() != warp.height()) {
    throw ShapeError(kModule, "image does not match warp dimensions");
  }
  return Image(x.width(), x.height(), x.channels(), apply_warp(warp, x.samples()));
}

Translation estimate_translation(const Image& reference, const Image& frame,
                                 const FenceMask* reference_mask,
                                 const FenceMask* frame_mask,
                                 const TranslationParams& params) {
  if (reference.width() != frame.width() || reference.height() != frame.height()) {
    throw ShapeError(kModule, "frames differ in size");
  }
  if (params.max_disp < 1 || params.levels < 1) {
    throw GeometryError(kModule, "max_disp and levels must be at least 1");
  }
  std::vector<Level> ref{make_level(reference, reference_mask)};
  std::vector<Level> frm{make_level(frame, frame_mask)};
  for (int l = 1; l < params.levels && ref.back().width >= 16 && ref.back().height >= 16; ++l) {
    ref.push_back(downsample(ref.back()));
    frm.push_back(downsample(frm.back()));
  }
  auto min_count = [&](const Level& l) {
    return static_cast<std::size_t>(
        std::ceil(params.min_overlap * static_cast<double>(l.width) * l.height));
  };

  const int top = static_cast<int>(ref.size()) - 1;
  const int scale = 1 << top;
  Peak peak = search(ref[top], frm[top], 0, 0, (params.max_disp + scale - 1) / scale,
                     min_count(ref[top]));
  for (int l = top - 1; l >= 0; --l) {
    if (!std::isfinite(peak.score)) break;
    peak = search(ref[l], frm[l], 2 * peak.dx, 2 * peak.dy, 2, min_count(ref[l]));
  }
  if (!std::isfinite(peak.score)) {
    throw GeometryError(kModule, "insufficient unmasked overlap between frames");
  }
  peak.dx = std::clamp(peak.dx, -params.max_disp, params.max_disp);
  peak.dy = std::clamp(peak.dy, -params.max_disp, params.max_disp);

  const std::size_t need = min_count(ref[0]);
  const double center = ncc_at(ref[0], frm[0], peak.dx, peak.dy, need);
  if (center <= -2.0) throw GeometryError(kModule, "insufficient unmasked overlap between frames");
  auto neighbor = [&](int dx, int dy) {
    const double s = ncc_at(ref[0], frm[0], dx, dy, need);
    return s <= -2.0 ? center : s;
  };
  Translation t;
  t.dx = peak.dx + parabolic_offset(neighbor(peak.dx - 1, peak.dy), center,
                                    neighbor(peak.dx + 1, peak.dy));
  t.dy = peak.dy + parabolic_offset(neighbor(peak.dx, peak.dy - 1), center,
                                    neighbor(peak.dx, peak.dy + 1));
  t.ncc = center;
  return t;
}

}  // namespace defence
