#include "edgeguard/network.hpp"

#include <cmath>
#include <random>
#include <set>

#include "edgeguard/errors.hpp"
#include "edgeguard/layers.hpp"

namespace edgeguard {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr const char* kInputName = "input";

[[noreturn]] void rethrow_for_layer(const LayerSpec& layer, const std::exception& e) {
  throw ConfigError("layer '" + layer.output + "' (" + kind_name(layer.kind) + "): " + e.what());
}

}  // namespace

void WeightStore::add(const std::string& name, Tensor tensor) {
  if (!tensors_.emplace(name, std::move(tensor)).second) throw DuplicateNameError("duplicate weight name '" + name + "'");
}

void WeightStore::set(const std::string& name, Tensor tensor) { tensors_.insert_or_assign(name, std::move(tensor)); }

const Tensor& WeightStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing weight '" + name + "'");
  return it->second;
}

Tensor& WeightStore::get_mut(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing weight '" + name + "'");
  return it->second;
}

void WeightStore::merge(const WeightStore& other) {
  for (const auto& [name, t] : other) add(name, t);
}

bool bit_identical(const WeightStore& a, const WeightStore& b) noexcept {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  for (auto ib = b.begin(); ib != b.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bit_identical(ia->second, ib->second)) return false;
  }
  return true;
}

std::string kind_name(const LayerKind& kind) {
  return std::visit(Overloaded{
                        [](const Conv2DSpec&) { return std::string("Conv2D"); },
                        [](const PReLUSpec&) { return std::string("PReLU"); },
                        [](const MaxPool2DSpec&) { return std::string("MaxPool2D"); },
                        [](const FullyConnectedSpec&) { return std::string("FullyConnected"); },
                        [](const SoftmaxSpec&) { return std::string("Softmax"); },
                        [](const L2NormalizeSpec&) { return std::string("L2Normalize"); },
                    },
                    kind);
}

NetworkDef& NetworkDef::push(const std::string& output, const std::string& from, LayerKind kind,
                             std::vector<std::string> params) {
  std::string input = from;
  if (input.empty()) input = layers.empty() ? kInputName : layers.back().output;
  layers.push_back(LayerSpec{output, input, std::move(kind), std::move(params)});
  return *this;
}

NetworkDef& NetworkDef::conv(const std::string& output, Conv2DSpec spec, const std::string& from) {
  const std::string p = name + "." + output;
  return push(output, from, spec, {p + ".weight", p + ".bias"});
}

NetworkDef& NetworkDef::prelu(const std::string& output, std::size_t channels, const std::string& from) {
  return push(output, from, PReLUSpec{channels}, {name + "." + output + ".slope"});
}

NetworkDef& NetworkDef::maxpool(const std::string& output, std::size_t kernel, std::size_t stride,
                                const std::string& from) {
  return push(output, from, MaxPool2DSpec{kernel, stride}, {});
}

NetworkDef& NetworkDef::fc(const std::string& output, std::size_t in_features, std::size_t out_features,
                           const std::string& from) {
  const std::string p = name + "." + output;
  return push(output, from, FullyConnectedSpec{in_features, out_features}, {p + ".weight", p + ".bias"});
}

NetworkDef& NetworkDef::softmax(const std::string& output, std::size_t axis, const std::string& from) {
  return push(output, from, SoftmaxSpec{axis}, {});
}

NetworkDef& NetworkDef::l2norm(const std::string& output, const std::string& from) {
  return push(output, from, L2NormalizeSpec{}, {});
}

NetworkDef& NetworkDef::head(const std::string& head_name, const std::string& activation) {
  heads.emplace_back(head_name, activation);
  return *this;
}

std::vector<std::pair<std::string, Tensor::Shape>> NetworkDef::parameter_shapes() const {
  std::vector<std::pair<std::string, Tensor::Shape>> out;
  for (const LayerSpec& l : layers) {
    std::visit(Overloaded{
                   [&](const Conv2DSpec& s) {
                     out.emplace_back(l.params.at(0),
                                      Tensor::Shape{s.out_channels, s.in_channels, s.kernel_h, s.kernel_w});
                     out.emplace_back(l.params.at(1), Tensor::Shape{s.out_channels});
                   },
                   [&](const PReLUSpec& s) { out.emplace_back(l.params.at(0), Tensor::Shape{s.channels}); },
                   [&](const FullyConnectedSpec& s) {
                     out.emplace_back(l.params.at(0), Tensor::Shape{s.out_features, s.in_features});
                     out.emplace_back(l.params.at(1), Tensor::Shape{s.out_features});
                   },
                   [](const auto&) {},
               },
               l.kind);
  }
  return out;
}

std::map<std::string, Tensor::Shape> NetworkDef::infer_shapes(const Tensor::Shape& input) const {
  std::map<std::string, Tensor::Shape> shapes;
  shapes[kInputName] = input;
  auto fail = [](const LayerSpec& l, const std::string& msg) {
    throw ConfigError("network layer '" + l.output + "' (" + kind_name(l.kind) + "): " + msg);
  };
  for (const LayerSpec& l : layers) {
    auto it = shapes.find(l.input);
    if (it == shapes.end()) fail(l, "consumes unknown activation '" + l.input + "'");
    if (shapes.contains(l.output)) fail(l, "activation name reused");
    const Tensor::Shape in = it->second;
    Tensor::Shape out;
    try {
      out = std::visit(
          Overloaded{
              [&](const Conv2DSpec& s) -> Tensor::Shape {
                if (in.size() != 3) fail(l, "expects [C,H,W] input, got " + shape_string(in));
                if (in[0] != s.in_channels)
                  fail(l, "expects " + std::to_string(s.in_channels) + " channels, got " + std::to_string(in[0]));
                return {s.out_channels, nn::conv_extent(in[1], s.kernel_h, s.stride, s.padding),
                        nn::conv_extent(in[2], s.kernel_w, s.stride, s.padding)};
              },
              [&](const PReLUSpec& s) -> Tensor::Shape {
                if (in.empty() || in[0] != s.channels)
                  fail(l, "expects " + std::to_string(s.channels) + " channels, got shape " + shape_string(in));
                return in;
              },
              [&](const MaxPool2DSpec& s) -> Tensor::Shape {
                if (in.size() != 3) fail(l, "expects [C,H,W] input, got " + shape_string(in));
                return {in[0], nn::pooled_extent(in[1], s.kernel, s.stride), nn::pooled_extent(in[2], s.kernel, s.stride)};
              },
              [&](const FullyConnectedSpec& s) -> Tensor::Shape {
                if (shape_product(in) != s.in_features)
                  fail(l, "expects " + std::to_string(s.in_features) + " features, got shape " + shape_string(in));
                return {s.out_features};
              },
              [&](const SoftmaxSpec& s) -> Tensor::Shape {
                if (s.axis >= in.size()) fail(l, "axis " + std::to_string(s.axis) + " invalid for " + shape_string(in));
                return in;
              },
              [&](const L2NormalizeSpec&) -> Tensor::Shape { return in; },
          },
          l.kind);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      fail(l, e.what());
    }
    shapes[l.output] = out;
  }
  for (const auto& [head_name, act] : heads) {
    if (!shapes.contains(act)) throw ConfigError("network head '" + head_name + "' refers to unknown activation '" + act + "'");
  }
  return shapes;
}

void NetworkDef::validate(const WeightStore& weights) const {
  infer_shapes(input_shape);
  std::set<std::string> seen;
  for (const auto& [pname, shape] : parameter_shapes()) {
    if (!seen.insert(pname).second) throw ConfigError("network '" + name + "' declares parameter '" + pname + "' twice");
    const Tensor& t = weights.get(pname);
    if (t.shape() != shape) {
      throw ConfigError("weight '" + pname + "' has shape " + shape_string(t.shape()) + ", network '" + name +
                        "' expects " + shape_string(shape));
    }
  }
}

void NetworkDef::check_input(const Tensor& input) const {
  const auto& s = input.shape();
  bool ok = s.size() == input_shape.size();
  if (ok && fully_convolutional) {
    ok = s[0] == input_shape[0];
    for (std::size_t i = 1; ok && i < s.size(); ++i) ok = s[i] >= input_shape[i];
  } else if (ok) {
    ok = s == input_shape;
  }
  if (!ok) {
    throw ConfigError("network '" + name + "' expects input " + std::string(fully_convolutional ? "at least " : "") +
                      shape_string(input_shape) + ", got " + shape_string(s));
  }
}

ForwardTrace net_forward_traced(const NetworkDef& net, const WeightStore& weights, const Tensor& input) {
  net.check_input(input);
  ForwardTrace trace;
  trace.activations.emplace(kInputName, input);
  for (const LayerSpec& l : net.layers) {
    auto it = trace.activations.find(l.input);
    if (it == trace.activations.end())
      throw ConfigError("layer '" + l.output + "' consumes unknown activation '" + l.input + "'");
    const Tensor& x = it->second;
    Tensor y;
    try {
      y = std::visit(Overloaded{
                         [&](const Conv2DSpec& s) {
                           return nn::conv2d(x, weights.get(l.params[0]), weights.get(l.params[1]), s.stride, s.padding);
                         },
                         [&](const PReLUSpec&) { return nn::prelu(x, weights.get(l.params[0])); },
                         [&](const MaxPool2DSpec& s) { return nn::maxpool2d(x, s.kernel, s.stride); },
                         [&](const FullyConnectedSpec&) {
                           return nn::fully_connected(x, weights.get(l.params[0]), weights.get(l.params[1]));
                         },
                         [&](const SoftmaxSpec& s) { return nn::softmax(x, s.axis); },
                         [&](const L2NormalizeSpec&) { return nn::l2_normalize(x); },
                     },
                     l.kind);
    } catch (const ConfigError& e) {
      rethrow_for_layer(l, e);
    }
    trace.activations.insert_or_assign(l.output, std::move(y));
  }
  return trace;
}

WeightStore random_weights(const NetworkDef& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightStore store;
  for (const LayerSpec& l : net.layers) {
    std::visit(Overloaded{
                   [&](const Conv2DSpec& s) {
                     const double bound = std::sqrt(6.0 / static_cast<double>(s.in_channels * s.kernel_h * s.kernel_w));
                     std::uniform_real_distribution<double> u(-bound, bound);
                     Tensor w({s.out_channels, s.in_channels, s.kernel_h, s.kernel_w});
                     for (float& v : w.data()) v = static_cast<float>(u(rng));
                     store.add(l.params[0], std::move(w));
                     store.add(l.params[1], Tensor({s.out_channels}));
                   },
                   [&](const PReLUSpec& s) { store.add(l.params[0], Tensor({s.channels}, 0.25f)); },
                   [&](const FullyConnectedSpec& s) {
                     const double bound = std::sqrt(6.0 / static_cast<double>(s.in_features));
                     std::uniform_real_distribution<double> u(-bound, bound);
                     Tensor w({s.out_features, s.in_features});
                     for (float& v : w.data()) v = static_cast<float>(u(rng));
                     store.add(l.params[0], std::move(w));
                     store.add(l.params[1], Tensor({s.out_features}));
                   },
                   [](const auto&) {},
               },
               l.kind);
  }
  return store;
}

HeadMap net_forward(const NetworkDef& net, const WeightStore& weights, const Tensor& input) {
  ForwardTrace trace = net_forward_traced(net, weights, input);
  HeadMap heads;
  for (const auto& [head_name, act] : net.heads) {
    auto it = trace.activations.find(act);
    if (it == trace.activations.end())
      throw ConfigError("network head '" + head_name + "' refers to unknown activation '" + act + "'");
    heads.emplace(head_name, it->second);
  }
  return heads;
}

namespace {

void accumulate(std::map<std::string, Tensor>& grads, const std::string& name, const Tensor& g) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, g);
    return;
  }
  if (it->second.shape() != g.shape()) throw ConfigError("gradient shape mismatch for activation '" + name + "'");
  for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
}

}  // namespace

BackwardResult net_backward(const NetworkDef& net, const WeightStore& weights, const ForwardTrace& trace,
                            const HeadMap& upstream) {
  std::map<std::string, Tensor> grads;  // d(loss)/d(activation)
  for (const auto& [head_name, act] : net.heads) {
    auto it = upstream.find(head_name);
    if (it == upstream.end()) continue;
    const Tensor& a = trace.activations.at(act);
    if (it->second.shape() != a.shape()) {
      throw ConfigError("upstream gradient for head '" + head_name + "' has shape " + shape_string(it->second.shape()) +
                        ", head is " + shape_string(a.shape()));
    }
    accumulate(grads, act, it->second);
  }

  BackwardResult result;
  for (const auto& [pname, shape] : net.parameter_shapes()) result.parameter_grads.set(pname, Tensor(shape));

  for (auto l = net.layers.rbegin(); l != net.layers.rend(); ++l) {
    auto git = grads.find(l->output);
    if (git == grads.end()) continue;
    const Tensor& gy = git->second;
    const Tensor& x = trace.activations.at(l->input);
    Tensor gx;
    try {
      std::visit(Overloaded{
                     [&](const Conv2DSpec& s) {
                       nn::Conv2dGrads g = nn::conv2d_backward(x, weights.get(l->params[0]), gy, s.stride, s.padding);
                       result.parameter_grads.set(l->params[0], std::move(g.weights));
                       result.parameter_grads.set(l->params[1], std::move(g.bias));
                       gx = std::move(g.input);
                     },
                     [&](const PReLUSpec&) {
                       nn::PreluGrads g = nn::prelu_backward(x, weights.get(l->params[0]), gy);
                       result.parameter_grads.set(l->params[0], std::move(g.slopes));
                       gx = std::move(g.input);
                     },
                     [&](const MaxPool2DSpec& s) { gx = nn::maxpool2d_backward(x, s.kernel, s.stride, gy); },
                     [&](const FullyConnectedSpec&) {
                       nn::FullyConnectedGrads g = nn::fully_connected_backward(x, weights.get(l->params[0]), gy);
                       result.parameter_grads.set(l->params[0], std::move(g.weights));
                       result.parameter_grads.set(l->params[1], std::move(g.bias));
                       gx = std::move(g.input);
                     },
                     [&](const SoftmaxSpec& s) { gx = nn::softmax_backward(trace.activations.at(l->output), s.axis, gy); },
                     [&](const L2NormalizeSpec&) { gx = nn::l2_normalize_backward(x, gy); },
                 },
                 l->kind);
    } catch (const ConfigError& e) {
      rethrow_for_layer(*l, e);
    }
    grads.erase(git);
    accumulate(grads, l->input, gx);
  }

  auto in = grads.find(kInputName);
  result.input_grad = in != grads.end() ? std::move(in->second) : Tensor(trace.activations.at(kInputName).shape());
  return result;
}

WeightStore net_backward(const NetworkDef& net, const WeightStore& weights, const Tensor& input,
                         const HeadMap& upstream) {
  return net_backward(net, weights, net_forward_traced(net, weights, input), upstream).parameter_grads;
}

}  // namespace edgeguard
