#pragma once

#include "defence/image.hpp"

namespace defence {

// Pixels whose center lies within thickness/2 of segment ab.
void draw_segment(FenceMask& mask, Point2 a, Point2 b, double thickness,
                  bool value = true);

// Pixels whose center lies within `radius` of the center.
void draw_disc(FenceMask& mask, Point2 center, double radius,
               bool value = true);

}  // namespace defence
