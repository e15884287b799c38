#include "defence/metrics.hpp"

#include <cmath>

#include "defence/error.hpp"

namespace defence {

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("imagecore", "psnr shape mismatch");
  auto sa = a.samples();
  auto sb = b.samples();
  double sum = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = sa[i] - sb[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(sa.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ShapeError("imagecore", "ssim shape mismatch");
  }
  if (a.width() < kSsimWindow || a.height() < kSsimWindow) {
    throw ShapeError("imagecore", "image smaller than ssim window");
  }
  const Image la = to_luminance(a);
  const Image lb = to_luminance(b);
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  constexpr double n = kSsimWindow * kSsimWindow;
  const int nx = a.width() - kSsimWindow + 1;
  const int ny = a.height() - kSsimWindow + 1;
  double total = 0.0;
  for (int y0 = 0; y0 < ny; ++y0) {
    for (int x0 = 0; x0 < nx; ++x0) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = y0; y < y0 + kSsimWindow; ++y) {
        for (int x = x0; x < x0 + kSsimWindow; ++x) {
          const double va = la.at(0, y, x);
          const double vb = lb.at(0, y, x);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      }
      const double ma = sa / n, mb = sb / n;
      const double va = saa / n - ma * ma;
      const double vb = sbb / n - mb * mb;
      const double cov = sab / n - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return total / (static_cast<double>(nx) * ny);
}

}  // namespace defence
