#pragma once

#include <array>
#include <cstddef>

namespace edgeguard {

// Axis-aligned face box in original-image pixel coordinates. Pixel (x, y)
// covers [x, x+1) x [y, y+1); a box (0,0,W,H) spans a whole W x H image.
struct FaceBox {
  float x1 = 0.0f;
  float y1 = 0.0f;
  float x2 = 0.0f;
  float y2 = 0.0f;
  float score = 0.0f;

  float width() const noexcept { return x2 - x1; }
  float height() const noexcept { return y2 - y1; }
  float area() const noexcept { return width() * height(); }
  float center_x() const noexcept { return 0.5f * (x1 + x2); }
  float center_y() const noexcept { return 0.5f * (y1 + y2); }
  bool valid() const noexcept { return x2 > x1 && y2 > y1 && score >= 0.0f && score <= 1.0f; }

  friend bool operator==(const FaceBox&, const FaceBox&) = default;
};

struct Point {
  float x = 0.0f;
  float y = 0.0f;
  friend bool operator==(const Point&, const Point&) = default;
};

// Left eye, right eye, nose, left mouth corner, right mouth corner.
using Landmarks = std::array<Point, 5>;

struct Detection {
  FaceBox box;
  Landmarks landmarks{};
  friend bool operator==(const Detection&, const Detection&) = default;
};

// Intersection area of two boxes (0 when disjoint).
float intersection_area(const FaceBox& a, const FaceBox& b) noexcept;
float iou(const FaceBox& a, const FaceBox& b) noexcept;

// Box grown to a square of side max(w, h) about its centre.
FaceBox square_box(const FaceBox& box) noexcept;

// Box grown by `fraction` of its size, split evenly between opposite sides.
FaceBox expand_box(const FaceBox& box, float fraction) noexcept;

}  // namespace edgeguard
