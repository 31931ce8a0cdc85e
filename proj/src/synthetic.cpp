#include "edgeguard/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "edgeguard/errors.hpp"
#include "edgeguard/image.hpp"

namespace edgeguard {

namespace {

float uniform(Rng& rng, float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); }

struct Look {
  float rx, ry;          // outline radii as fractions of the box side
  float eye_r, eye_dy;   // eye radius and vertical offset
  float mouth_dy, mouth_half;
  std::array<float, 3> skin;
  bool lines;
};

Look look_for(AgeLabel label) {
  if (label == AgeLabel::Child) return {0.40f, 0.42f, 0.085f, -0.05f, 0.22f, 0.13f, {236.0f, 196.0f, 168.0f}, false};
  return {0.34f, 0.46f, 0.05f, -0.08f, 0.25f, 0.15f, {196.0f, 160.0f, 136.0f}, true};
}

float segment_distance(float px, float py, float ax, float ay, float bx, float by) {
  const float dx = bx - ax, dy = by - ay;
  const float t = std::clamp(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0f, 1.0f);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

}  // namespace

Tensor synth_background(Rng& rng, std::size_t height, std::size_t width) {
  Tensor img({3, height, width});
  const float base = uniform(rng, 15.0f, 60.0f);
  std::array<float, 3> tint{};
  for (float& t : tint) t = uniform(rng, -8.0f, 8.0f);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const float n = uniform(rng, -18.0f, 18.0f);
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = base + tint[c] + n;
    }
  const int patches = std::uniform_int_distribution<int>(3, 6)(rng);
  for (int k = 0; k < patches; ++k) {
    const float pw = uniform(rng, 4.0f, 20.0f), ph = uniform(rng, 4.0f, 20.0f);
    const float px = uniform(rng, -pw / 2, static_cast<float>(width)), py = uniform(rng, -ph / 2, static_cast<float>(height));
    const float lift = uniform(rng, 10.0f, 60.0f);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        if (x + 0.5f < px || x + 0.5f > px + pw || y + 0.5f < py || y + 0.5f > py + ph) continue;
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) += lift;
      }
  }
  for (float& v : img.data()) v = std::clamp(v, 0.0f, 255.0f);
  return img;
}

SynthFace draw_face(Tensor& image, Rng& rng, AgeLabel label, float x, float y, float size) {
  check_image(image);
  if (!(size > 0.0f)) throw ConfigError("face size must be > 0");
  const Look lk = look_for(label);
  const float s = size, cx = x + s / 2, cy = y + s / 2;
  const float shade = uniform(rng, -12.0f, 12.0f);
  std::array<float, 3> skin = lk.skin;
  for (float& v : skin) v += shade;

  const Point eye_l{cx - 0.17f * s, cy + lk.eye_dy * s}, eye_r{cx + 0.17f * s, cy + lk.eye_dy * s};
  const Point nose{cx, cy + 0.08f * s};
  const Point mouth_l{cx - lk.mouth_half * s, cy + lk.mouth_dy * s}, mouth_r{cx + lk.mouth_half * s, cy + lk.mouth_dy * s};
  const float mouth_w = std::max(0.5f, 0.025f * s), line_w = std::max(0.5f, 0.012f * s);

  const auto x0 = static_cast<std::size_t>(std::clamp(std::floor(x), 0.0f, static_cast<float>(image_width(image))));
  const auto y0 = static_cast<std::size_t>(std::clamp(std::floor(y), 0.0f, static_cast<float>(image_height(image))));
  const auto x1 = static_cast<std::size_t>(std::clamp(std::ceil(x + s), 0.0f, static_cast<float>(image_width(image))));
  const auto y1 = static_cast<std::size_t>(std::clamp(std::ceil(y + s), 0.0f, static_cast<float>(image_height(image))));
  for (std::size_t py = y0; py < y1; ++py) {
    for (std::size_t px = x0; px < x1; ++px) {
      const float X = px + 0.5f, Y = py + 0.5f;
      const float u = (X - cx) / (lk.rx * s), v = (Y - cy) / (lk.ry * s);
      if (u * u + v * v > 1.0f) continue;
      std::array<float, 3> col = skin;
      const float n = uniform(rng, -6.0f, 6.0f);
      if (std::hypot(X - eye_l.x, Y - eye_l.y) <= lk.eye_r * s || std::hypot(X - eye_r.x, Y - eye_r.y) <= lk.eye_r * s) {
        col = {40.0f, 35.0f, 30.0f};
      } else if (segment_distance(X, Y, mouth_l.x, mouth_l.y, mouth_r.x, mouth_r.y) <= mouth_w) {
        col = {150.0f, 50.0f, 55.0f};
      } else if (std::hypot(X - nose.x, Y - nose.y) <= 0.035f * s) {
        for (float& c : col) c *= 0.75f;
      } else if (lk.lines && std::abs(X - cx) <= 0.22f * s) {
        for (float line_y : {-0.33f, -0.26f, -0.19f})
          if (std::abs(Y - (cy + line_y * s)) <= line_w) {
            for (float& c : col) c *= 0.7f;
            break;
          }
      }
      for (std::size_t c = 0; c < 3; ++c) image.at(c, py, px) = std::clamp(col[c] + n, 0.0f, 255.0f);
    }
  }
  return SynthFace{{x, y, x + s, y + s, 1.0f}, {eye_l, eye_r, nose, mouth_l, mouth_r}, label};
}

SynthScene synth_scene(Rng& rng, const SceneSpec& spec, std::optional<AgeLabel> label) {
  const float limit = static_cast<float>(std::min(spec.height, spec.width));
  if (!(spec.min_face > 0.0f) || spec.min_face > spec.max_face || spec.max_face > limit) {
    throw ConfigError("scene face size range must satisfy 0 < min <= max <= frame size");
  }
  SynthScene scene{synth_background(rng, spec.height, spec.width), {}};
  const AgeLabel lbl =
      label ? *label : (std::bernoulli_distribution(0.5)(rng) ? AgeLabel::Child : AgeLabel::Adult);
  const float size = uniform(rng, spec.min_face, spec.max_face);
  const float x = uniform(rng, 0.0f, static_cast<float>(spec.width) - size);
  const float y = uniform(rng, 0.0f, static_cast<float>(spec.height) - size);
  scene.faces.push_back(draw_face(scene.image, rng, lbl, x, y, size));
  return scene;
}

std::optional<FaceBox> sample_crop(Rng& rng, const SynthScene& scene, CropKind kind) {
  if (scene.faces.empty()) throw ConfigError("scene has no face to crop around");
  const FaceBox& gt = scene.faces.front().box;
  const float s = gt.width();
  const float fw = static_cast<float>(image_width(scene.image)), fh = static_cast<float>(image_height(scene.image));
  const float min_side = 12.0f;
  for (int attempt = 0; attempt < 200; ++attempt) {
    float side = 0.0f, cx = 0.0f, cy = 0.0f;
    switch (kind) {
      case CropKind::Positive:
        side = s * uniform(rng, 0.85f, 1.2f);
        cx = gt.center_x() + s * uniform(rng, -0.15f, 0.15f);
        cy = gt.center_y() + s * uniform(rng, -0.15f, 0.15f);
        break;
      case CropKind::Part:
        side = s * uniform(rng, 0.7f, 1.4f);
        cx = gt.center_x() + s * uniform(rng, -0.45f, 0.45f);
        cy = gt.center_y() + s * uniform(rng, -0.45f, 0.45f);
        break;
      case CropKind::Negative:
        side = uniform(rng, min_side, std::min(fw, fh));
        if (attempt % 2 == 0) {
          cx = uniform(rng, side / 2, fw - side / 2);
          cy = uniform(rng, side / 2, fh - side / 2);
        } else {
          cx = gt.center_x() + s * uniform(rng, -1.0f, 1.0f);
          cy = gt.center_y() + s * uniform(rng, -1.0f, 1.0f);
        }
        break;
    }
    if (side < min_side) continue;
    const FaceBox b{cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2, 0.0f};
    if (kind == CropKind::Negative && (b.x1 < 0.0f || b.y1 < 0.0f || b.x2 > fw || b.y2 > fh)) continue;
    const float o = iou(b, gt);
    const bool ok = kind == CropKind::Positive ? o >= 0.65f : kind == CropKind::Part ? (o >= 0.4f && o < 0.65f) : o < 0.3f;
    if (ok) return b;
  }
  return std::nullopt;
}

FaceBox jittered_face_box(Rng& rng, const SynthFace& face, float shift, float scale) {
  const float s = face.box.width();
  const float side = s * (1.0f + uniform(rng, -scale, scale));
  const float cx = face.box.center_x() + s * uniform(rng, -shift, shift);
  const float cy = face.box.center_y() + s * uniform(rng, -shift, shift);
  return {cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2, 1.0f};
}

}  // namespace edgeguard
