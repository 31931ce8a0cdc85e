#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "edgeguard/tensor.hpp"

namespace edgeguard {

// Named parameter tensors. Names are unique; iteration is sorted by name,
// which also fixes the on-disk order of a saved store.
class WeightStore {
 public:
  using Map = std::map<std::string, Tensor>;

  // Throws DuplicateNameError if `name` is already present.
  void add(const std::string& name, Tensor tensor);
  // Inserts or replaces.
  void set(const std::string& name, Tensor tensor);
  // Throws ConfigError naming the missing entry.
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.contains(name); }
  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }

  // Copies every entry of `other` into this store; clashes are DuplicateNameError.
  void merge(const WeightStore& other);

  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  Map tensors_;
};

bool bit_identical(const WeightStore& a, const WeightStore& b) noexcept;

struct Conv2DSpec {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
};
struct PReLUSpec {
  std::size_t channels = 0;
};
struct MaxPool2DSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};
struct FullyConnectedSpec {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
};
struct SoftmaxSpec {
  std::size_t axis = 0;
};
struct L2NormalizeSpec {};

using LayerKind = std::variant<Conv2DSpec, PReLUSpec, MaxPool2DSpec, FullyConnectedSpec, SoftmaxSpec, L2NormalizeSpec>;

std::string kind_name(const LayerKind& kind);

// One layer of a network. `output` names the activation this layer produces;
// `input` names the activation it consumes ("input" is the network input).
// Parameter names are WeightStore keys: Conv2D and FullyConnected use
// {weight, bias}; PReLU uses {slope}; the rest take none.
struct LayerSpec {
  std::string output;
  std::string input;
  LayerKind kind;
  std::vector<std::string> params;
};

// Ordered list of layers plus the named activations exposed as outputs.
// A layer may branch off any earlier activation, which is how the cascade
// nets share a trunk between their score, box and landmark heads.
struct NetworkDef {
  std::string name;
  Tensor::Shape input_shape;  // [C,H,W]; minimum H,W when fully convolutional
  bool fully_convolutional = false;
  std::vector<LayerSpec> layers;
  std::vector<std::pair<std::string, std::string>> heads;  // head name -> activation

  // Builder helpers. Parameter names are "<name>.<output>.weight" and so on.
  // An empty `from` chains onto the previous layer.
  NetworkDef& conv(const std::string& output, Conv2DSpec spec, const std::string& from = "");
  NetworkDef& prelu(const std::string& output, std::size_t channels, const std::string& from = "");
  NetworkDef& maxpool(const std::string& output, std::size_t kernel, std::size_t stride, const std::string& from = "");
  NetworkDef& fc(const std::string& output, std::size_t in_features, std::size_t out_features,
                 const std::string& from = "");
  NetworkDef& softmax(const std::string& output, std::size_t axis, const std::string& from = "");
  NetworkDef& l2norm(const std::string& output, const std::string& from = "");
  NetworkDef& head(const std::string& head_name, const std::string& activation);

  // Shape of every activation for the given input; throws ConfigError naming
  // the first incompatible layer.
  std::map<std::string, Tensor::Shape> infer_shapes(const Tensor::Shape& input) const;

  // Checks layer wiring, shape compatibility at the declared input, and that
  // every parameter exists in `weights` with the expected shape.
  void validate(const WeightStore& weights) const;

  // All parameter names with their expected shapes.
  std::vector<std::pair<std::string, Tensor::Shape>> parameter_shapes() const;

  void check_input(const Tensor& input) const;

 private:
  NetworkDef& push(const std::string& output, const std::string& from, LayerKind kind,
                   std::vector<std::string> params);
};

// Fresh parameters for `net`: Kaiming-uniform conv/FC weights, zero biases,
// PReLU slopes of 0.25. Deterministic in `seed`.
WeightStore random_weights(const NetworkDef& net, std::uint64_t seed);

using HeadMap = std::map<std::string, Tensor>;

// Every activation of one forward pass, keyed by activation name. Private to
// the call that produced it.
struct ForwardTrace {
  std::map<std::string, Tensor> activations;
};

struct BackwardResult {
  WeightStore parameter_grads;
  Tensor input_grad;
};

HeadMap net_forward(const NetworkDef& net, const WeightStore& weights, const Tensor& input);
ForwardTrace net_forward_traced(const NetworkDef& net, const WeightStore& weights, const Tensor& input);

// Gradients of a scalar loss with respect to every parameter (and the input),
// given d(loss)/d(head) for some heads. Heads absent from `upstream` get zero
// gradient.
BackwardResult net_backward(const NetworkDef& net, const WeightStore& weights, const ForwardTrace& trace,
                            const HeadMap& upstream);
WeightStore net_backward(const NetworkDef& net, const WeightStore& weights, const Tensor& input,
                         const HeadMap& upstream);

}  // namespace edgeguard
