#include "defence/raster.hpp"

#include <algorithm>
#include <cmath>

namespace defence {

namespace {

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2;
    t = std::clamp(t, 0.0, 1.0);
  }
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

}  // namespace

void draw_segment(FenceMask& mask, Point2 a, Point2 b, double thickness,
                  bool value) {
  const double half = thickness / 2.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - half)));
  const int x1 = std::min(mask.width() - 1,
                          static_cast<int>(std::ceil(std::max(a.x, b.x) + half)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - half)));
  const int y1 = std::min(mask.height() - 1,
                          static_cast<int>(std::ceil(std::max(a.y, b.y) + half)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (point_segment_distance({double(x), double(y)}, a, b) <= half + 1e-9) {
        mask.set(x, y, value);
      }
    }
  }
}

void draw_disc(FenceMask& mask, Point2 center, double radius, bool value) {
  draw_segment(mask, center, center, 2.0 * radius, value);
}

}  // namespace defence
