#include "edgeguard/geometry.hpp"

#include <algorithm>

namespace edgeguard {

float intersection_area(const FaceBox& a, const FaceBox& b) noexcept {
  const float w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const float h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0f || h <= 0.0f) return 0.0f;
  return w * h;
}

float iou(const FaceBox& a, const FaceBox& b) noexcept {
  const float inter = intersection_area(a, b);
  const float uni = a.area() + b.area() - inter;
  return uni > 0.0f ? inter / uni : 0.0f;
}

FaceBox square_box(const FaceBox& box) noexcept {
  const float side = std::max(box.width(), box.height());
  const float cx = box.center_x(), cy = box.center_y();
  FaceBox out = box;
  out.x1 = cx - 0.5f * side;
  out.y1 = cy - 0.5f * side;
  out.x2 = out.x1 + side;
  out.y2 = out.y1 + side;
  return out;
}

FaceBox expand_box(const FaceBox& box, float fraction) noexcept {
  const float dx = 0.5f * fraction * box.width();
  const float dy = 0.5f * fraction * box.height();
  FaceBox out = box;
  out.x1 -= dx;
  out.x2 += dx;
  out.y1 -= dy;
  out.y2 += dy;
  return out;
}

}  // namespace edgeguard
