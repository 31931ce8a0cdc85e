#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "edgeguard/geometry.hpp"
#include "edgeguard/network.hpp"
#include "edgeguard/tensor.hpp"

namespace edgeguard {

inline constexpr std::size_t kEmbeddingDim = 128;
inline constexpr std::size_t kDefaultChipSize = 160;

// Unit-norm face embedding.
class Embedding {
 public:
  // Throws DegenerateInputError if the values are not unit norm within `tolerance`.
  static Embedding from_unit(std::span<const float> values, double tolerance = 1e-5);

  std::span<const float, kEmbeddingDim> values() const noexcept { return values_; }
  float operator[](std::size_t i) const noexcept { return values_[i]; }

  double dot(const Embedding& other) const noexcept;
  double squared_distance(const Embedding& other) const noexcept;
  double distance(const Embedding& other) const noexcept;
  double norm() const noexcept;

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  Embedding() = default;
  std::array<float, kEmbeddingDim> values_{};
};

// Normalized square face crop fed to the embedding network.
struct FaceChip {
  Tensor pixels;  // [3,S,S], values (v - 127.5) / 128
  FaceBox source;
};

// Squares the detection box about its centre, crops and resizes to
// out_size x out_size, and normalizes. No landmark warping.
FaceChip align_crop(const Tensor& image, const FaceBox& box, std::size_t out_size = kDefaultChipSize);
inline FaceChip align_crop(const Tensor& image, const Detection& detection,
                           std::size_t out_size = kDefaultChipSize) {
  return align_crop(image, detection.box, out_size);
}

// Small conv stack ending in FullyConnected(., 128) + L2Normalize. Input is
// [3, input_size, input_size]; widths are the three conv channel counts.
struct EmbedderWidths {
  std::size_t conv1 = 8;
  std::size_t conv2 = 16;
  std::size_t conv3 = 32;
};
inline constexpr std::size_t kToyChipSize = 48;
NetworkDef make_toy_embedder(std::size_t input_size = kToyChipSize, const EmbedderWidths& widths = {});

// Name of the [3] tensor recording the embedder's declared input shape.
inline constexpr const char* kEmbedderInputShapeKey = "embed.input_shape";

// Rebuilds the toy embedder from stored weights (widths from parameter
// shapes, input size from kEmbedderInputShapeKey) and validates it.
NetworkDef embedder_from_weights(const WeightStore& weights);

// Throws DegenerateInputError when the pre-normalization vector is zero and
// ConfigError when the chip does not match the network input.
Embedding embed(const FaceChip& chip, const NetworkDef& net, const WeightStore& weights);

// Network plus weights; immutable and safe to share across threads.
class Embedder {
 public:
  explicit Embedder(WeightStore weights);
  Embedder(NetworkDef net, WeightStore weights);

  std::size_t chip_size() const { return net_.input_shape.at(1); }
  Embedding embed(const FaceChip& chip) const { return edgeguard::embed(chip, net_, weights_); }
  FaceChip chip(const Tensor& image, const FaceBox& box) const { return align_crop(image, box, chip_size()); }

  const NetworkDef& net() const noexcept { return net_; }
  const WeightStore& weights() const noexcept { return weights_; }

 private:
  NetworkDef net_;
  WeightStore weights_;
};

}  // namespace edgeguard
