#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "edgeguard/geometry.hpp"
#include "edgeguard/recognizer.hpp"
#include "edgeguard/tensor.hpp"

// Region redaction operators. Each operator touches only the pixels inside
// its region; everything else stays bit-identical.
namespace edgeguard {

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRegion {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t x1 = 0;
  std::size_t y1 = 0;

  bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
  std::size_t width() const noexcept { return empty() ? 0 : x1 - x0; }
  std::size_t height() const noexcept { return empty() ? 0 : y1 - y0; }
  friend bool operator==(const PixelRegion&, const PixelRegion&) = default;
};

// Clips `region` to an image of the given size.
PixelRegion clip_region(const PixelRegion& region, std::size_t height, std::size_t width) noexcept;
// Pixels touched by `box` (floor of the top-left, ceil of the bottom-right), clipped.
PixelRegion region_from_box(const FaceBox& box, std::size_t height, std::size_t width) noexcept;

using ScrambleKey = std::array<std::uint8_t, 16>;
// 32 hex digits -> key; throws ConfigError otherwise.
ScrambleKey parse_scramble_key(std::string_view hex);

struct Pixelate {
  std::size_t block_size = 8;
};
struct GaussianBlur {
  double sigma = 2.5;
};
struct KeyedScramble {
  ScrambleKey key{};
};
using DenatureMethod = std::variant<Pixelate, GaussianBlur, KeyedScramble>;

// "pixelate:8", "blur:2.5" or "scramble:<32 hex digits>".
DenatureMethod parse_denature_method(std::string_view text);
// Method name without secret material ("pixelate:8", "blur:2.5", "scramble").
std::string describe(const DenatureMethod& method);

// Tiles of block_size x block_size anchored at the region's top-left corner
// are replaced by their per-channel mean; border tiles use their own mean.
Tensor pixelate_region(const Tensor& image, const PixelRegion& region, std::size_t block_size);

// Separable Gaussian with radius ceil(3 sigma), normalized to sum 1, clamped
// to the region edges so only in-region pixels are read.
Tensor blur_region(const Tensor& image, const PixelRegion& region, double sigma);

// Keyed permutation of the region's pixels followed by a keystream XOR over
// their 8-bit values (values are rounded and clamped to [0,255] first). The
// keystream is ChaCha20 under a BLAKE2b subkey bound to the region, so the
// same key and region are needed to undo it. No integrity check.
Tensor scramble_region(const Tensor& image, const PixelRegion& region, const ScrambleKey& key);
Tensor unscramble_region(const Tensor& image, const PixelRegion& region, const ScrambleKey& key);

// In-place forms used when several regions of one frame are redacted.
void pixelate_in_place(Tensor& image, const PixelRegion& region, std::size_t block_size);
void blur_in_place(Tensor& image, const PixelRegion& region, double sigma);
void scramble_in_place(Tensor& image, const PixelRegion& region, const ScrambleKey& key);
void unscramble_in_place(Tensor& image, const PixelRegion& region, const ScrambleKey& key);
void apply_method_in_place(Tensor& image, const PixelRegion& region, const DenatureMethod& method);

struct RedactionPolicy {
  std::set<AgeLabel> redact_labels{AgeLabel::Child};
  bool redact_on_tie = true;
  float box_expansion = 0.1f;  // fraction of box size added, split across both sides

  void validate() const;
};

struct LabeledDetection {
  Detection detection;
  ClassificationResult classification;
};

struct RedactionLogEntry {
  std::size_t detection_index = 0;
  PixelRegion region;
  std::string reason;  // "label:child", "label:adult" or "tie"
};

struct Redaction {
  Tensor frame;
  std::vector<RedactionLogEntry> log;
};

// Redacts the expanded box of every detection the policy selects, in
// descending detection-score order. The input frame is not modified.
Redaction apply_policy(const Tensor& frame, std::span<const LabeledDetection> detections,
                       const RedactionPolicy& policy, const DenatureMethod& method);

}  // namespace edgeguard
