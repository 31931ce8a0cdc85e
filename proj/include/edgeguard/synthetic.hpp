#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "edgeguard/geometry.hpp"
#include "edgeguard/recognizer.hpp"
#include "edgeguard/tensor.hpp"

// Seeded synthetic scenes for toy training and end-to-end tests: a dark
// textured background with one or more bright cartoon faces.
//
// child: rounder outline, large eyes, warmer skin
// adult: taller outline, small eyes, darker skin, forehead lines
namespace edgeguard {

using Rng = std::mt19937_64;

struct SynthFace {
  FaceBox box;  // square box of side `size` around the face; score 1
  Landmarks landmarks{};
  AgeLabel label = AgeLabel::Adult;
};

struct SynthScene {
  Tensor image;  // [3,H,W], 8-bit scale
  std::vector<SynthFace> faces;
};

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  float min_face = 28.0f;
  float max_face = 44.0f;
};

Tensor synth_background(Rng& rng, std::size_t height, std::size_t width);

// Paints one face whose box has side `size` and top-left corner (x, y).
SynthFace draw_face(Tensor& image, Rng& rng, AgeLabel label, float x, float y, float size);

// One face fully inside the frame; label drawn uniformly when not given.
SynthScene synth_scene(Rng& rng, const SceneSpec& spec, std::optional<AgeLabel> label = std::nullopt);

// Square crops of a scene, labeled by IoU with the face box: positive
// (>= 0.65), part (>= 0.4 and < 0.65) or negative (< 0.3).
enum class CropKind { Positive, Part, Negative };

// Draws a crop of the requested kind. Returns nullopt if rejection sampling
// gives up (e.g. a negative in a frame filled by the face).
std::optional<FaceBox> sample_crop(Rng& rng, const SynthScene& scene, CropKind kind);

// Jittered square crop around the face, for embedder chips.
FaceBox jittered_face_box(Rng& rng, const SynthFace& face, float shift = 0.08f, float scale = 0.12f);

}  // namespace edgeguard
