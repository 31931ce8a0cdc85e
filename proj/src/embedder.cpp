#include "edgeguard/embedder.hpp"

#include <cmath>

#include "edgeguard/errors.hpp"
#include "edgeguard/image.hpp"

namespace edgeguard {

Embedding Embedding::from_unit(std::span<const float> values, double tolerance) {
  if (values.size() != kEmbeddingDim) {
    throw DegenerateInputError("embedding must have " + std::to_string(kEmbeddingDim) + " values, got " +
                               std::to_string(values.size()));
  }
  Embedding e;
  std::copy(values.begin(), values.end(), e.values_.begin());
  const double n = e.norm();
  if (!(std::abs(n - 1.0) <= tolerance)) {
    throw DegenerateInputError("embedding norm " + std::to_string(n) + " is not 1");
  }
  return e;
}

double Embedding::dot(const Embedding& other) const noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) s += static_cast<double>(values_[i]) * other.values_[i];
  return s;
}

double Embedding::squared_distance(const Embedding& other) const noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
    const double d = static_cast<double>(values_[i]) - other.values_[i];
    s += d * d;
  }
  return s;
}

double Embedding::distance(const Embedding& other) const noexcept { return std::sqrt(squared_distance(other)); }

double Embedding::norm() const noexcept { return std::sqrt(dot(*this)); }

FaceChip align_crop(const Tensor& image, const FaceBox& box, std::size_t out_size) {
  if (!(box.x2 > box.x1) || !(box.y2 > box.y1)) throw DegenerateInputError("face box has no area");
  const FaceBox sq = square_box(box);
  return FaceChip{normalize_pixels(crop_resize(image, sq, out_size)), box};
}

NetworkDef make_toy_embedder(std::size_t input_size, const EmbedderWidths& widths) {
  NetworkDef net;
  net.name = "embed";
  net.input_shape = {3, input_size, input_size};
  net.conv("conv1", {widths.conv1, 3, 3, 3, 2, 1})
      .prelu("prelu1", widths.conv1)
      .maxpool("pool1", 2, 2)
      .conv("conv2", {widths.conv2, widths.conv1, 3, 3, 1, 1})
      .prelu("prelu2", widths.conv2)
      .maxpool("pool2", 2, 2)
      .conv("conv3", {widths.conv3, widths.conv2, 3, 3, 1, 0})
      .prelu("prelu3", widths.conv3);
  const std::size_t features = shape_product(net.infer_shapes(net.input_shape).at("prelu3"));
  net.fc("fc", features, kEmbeddingDim).l2norm("embedding").head("embedding", "embedding");
  return net;
}

NetworkDef embedder_from_weights(const WeightStore& weights) {
  const Tensor& shape = weights.get(kEmbedderInputShapeKey);
  if (shape.size() != 3 || shape[0] != 3.0f || shape[1] != shape[2] || !(shape[1] >= 1.0f)) {
    throw ConfigError(std::string(kEmbedderInputShapeKey) + " must hold [3,S,S]");
  }
  const auto size = static_cast<std::size_t>(shape[1]);
  EmbedderWidths w{weights.get("embed.conv1.weight").dim(0), weights.get("embed.conv2.weight").dim(0),
                   weights.get("embed.conv3.weight").dim(0)};
  NetworkDef net = make_toy_embedder(size, w);
  net.validate(weights);
  return net;
}

Embedding embed(const FaceChip& chip, const NetworkDef& net, const WeightStore& weights) {
  const HeadMap heads = net_forward(net, weights, chip.pixels);
  auto it = heads.find("embedding");
  if (it == heads.end()) throw ConfigError("network '" + net.name + "' has no 'embedding' head");
  if (it->second.size() != kEmbeddingDim) {
    throw ConfigError("embedding head has " + std::to_string(it->second.size()) + " values, expected " +
                      std::to_string(kEmbeddingDim));
  }
  return Embedding::from_unit(it->second.data(), 1e-5);
}

Embedder::Embedder(WeightStore weights) : net_(embedder_from_weights(weights)), weights_(std::move(weights)) {}

Embedder::Embedder(NetworkDef net, WeightStore weights) : net_(std::move(net)), weights_(std::move(weights)) {
  net_.validate(weights_);
}

}  // namespace edgeguard
