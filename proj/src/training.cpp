#include "edgeguard/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <iterator>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "edgeguard/cascade_nets.hpp"
#include "edgeguard/errors.hpp"
#include "edgeguard/image.hpp"
#include "edgeguard/layers.hpp"
#include "edgeguard/synthetic.hpp"

namespace edgeguard {

ScalarLoss loss_det(double p, int y_det) {
  if (y_det != 0 && y_det != 1) throw ConfigError("y_det must be 0 or 1");
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (y_det == 1) return {-std::log(q), -1.0 / q};
  return {-std::log(1.0 - q), 1.0 / (1.0 - q)};
}

namespace {

VectorLoss squared_error(std::span<const double> pred, std::span<const double> target, std::size_t n,
                         const char* what) {
  if (pred.size() != n || target.size() != n) {
    throw ConfigError(std::string(what) + " expects " + std::to_string(n) + " values");
  }
  VectorLoss out{0.0, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - target[i];
    out.loss += d * d;
    out.grad[i] = 2.0 * d;
  }
  return out;
}

}  // namespace

VectorLoss loss_box(std::span<const double> pred, std::span<const double> target) {
  return squared_error(pred, target, 4, "loss_box");
}

VectorLoss loss_landmark(std::span<const double> pred, std::span<const double> target) {
  return squared_error(pred, target, 10, "loss_landmark");
}

MultitaskLoss loss_multitask(const DetOutputs& out, const DetSample& sample, const LossWeights& weights) {
  if (!sample.consistent()) throw ConfigError("sample targets do not match its task mask");
  MultitaskLoss r;
  if (sample.mask.det) {
    const ScalarLoss d = loss_det(out.p, sample.y_det);
    r.det = d.loss;
    r.grad.p = weights.det * d.grad;
  } else {
    r.grad.p = 0.0;
  }
  if (sample.mask.box) {
    const VectorLoss b = loss_box(out.box, *sample.box_target);
    r.box = b.loss;
    for (std::size_t i = 0; i < 4; ++i) r.grad.box[i] = weights.box * b.grad[i];
  }
  if (sample.mask.landmark) {
    const VectorLoss l = loss_landmark(out.landmarks, *sample.landmark_target);
    r.landmark = l.loss;
    for (std::size_t i = 0; i < 10; ++i) r.grad.landmarks[i] = weights.landmark * l.grad[i];
  }
  r.loss = weights.det * r.det + weights.box * r.box + weights.landmark * r.landmark;
  return r;
}

TripletLoss loss_triplet(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                         double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw ConfigError("triplet members differ in length");
  const std::size_t d = a.size();
  double dap = 0.0, dan = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dap += (a[i] - p[i]) * (a[i] - p[i]);
    dan += (a[i] - n[i]) * (a[i] - n[i]);
  }
  TripletLoss r{0.0, std::vector<double>(d), std::vector<double>(d), std::vector<double>(d)};
  const double inner = dap - dan + margin;
  if (inner <= 0.0) return r;
  r.loss = inner;
  for (std::size_t i = 0; i < d; ++i) {
    r.grad_anchor[i] = 2.0 * (n[i] - p[i]);
    r.grad_positive[i] = -2.0 * (a[i] - p[i]);
    r.grad_negative[i] = 2.0 * (a[i] - n[i]);
  }
  return r;
}

namespace {

std::vector<double> widen(const Embedding& e) { return {e.values().begin(), e.values().end()}; }

}  // namespace

TripletLoss loss_triplet(const Embedding& a, const Embedding& p, const Embedding& n, double margin) {
  return loss_triplet(widen(a), widen(p), widen(n), margin);
}

std::vector<TripletIndex> select_triplets(std::span<const Embedding> embeddings, std::span<const int> labels) {
  if (embeddings.size() != labels.size()) throw ConfigError("select_triplets: embeddings and labels differ in count");
  const std::size_t n = embeddings.size();
  std::vector<TripletIndex> out;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double dap = embeddings[a].squared_distance(embeddings[p]);
      std::optional<std::size_t> semi, hard;
      double semi_d = std::numeric_limits<double>::infinity(), hard_d = semi_d;
      for (std::size_t k = 0; k < n; ++k) {
        if (labels[k] == labels[a]) continue;
        const double dan = embeddings[a].squared_distance(embeddings[k]);
        if (dan < hard_d) hard_d = dan, hard = k;
        if (dap < dan && dan < semi_d) semi_d = dan, semi = k;
      }
      if (!hard) continue;
      out.push_back({a, p, semi ? *semi : *hard});
    }
  }
  return out;
}

std::vector<double> numeric_gradient(const ScalarFn& f, std::span<const double> x, double step) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ConfigError("gradient vectors differ in length");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric[i]));
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

double grad_check(const ScalarFn& f, std::span<const double> x, std::span<const double> analytic, double step) {
  return max_relative_error(analytic, numeric_gradient(f, x, step));
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Layer checks perturb float32 tensors by 2^-10 on a 2^-6 value grid, so
// every perturbed value and every linear-layer output is exact in float32.
constexpr double kLayerStep = 1.0 / 1024.0;

Tensor grid_tensor(Rng& rng, Tensor::Shape shape, bool nonzero = false, int range = 64) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) {
    int k = 0;
    do k = std::uniform_int_distribution<int>(-range, range)(rng);
    while (nonzero && k == 0);
    v = static_cast<float>(k) / 64.0f;
  }
  return t;
}

// Distinct grid values in random order, so pooling windows have a unique
// maximum that a 2^-10 perturbation cannot change.
Tensor distinct_grid_tensor(Rng& rng, Tensor::Shape shape) {
  Tensor t(std::move(shape));
  std::vector<float> vals(t.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = (static_cast<float>(i) - vals.size() / 2.0f) / 64.0f;
  std::shuffle(vals.begin(), vals.end(), rng);
  std::copy(vals.begin(), vals.end(), t.data().begin());
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * r[i];
  return s;
}

std::vector<double> as_doubles(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Numeric gradient of f over the float tensor x, dividing by the perturbation
// actually realized in float32.
std::vector<double> tensor_numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                            double step) {
  Tensor probe = x;
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float up = static_cast<float>(x[i] + step), down = static_cast<float>(x[i] - step);
    probe[i] = up;
    const double fu = f(probe);
    probe[i] = down;
    const double fd = f(probe);
    probe[i] = x[i];
    g[i] = (fu - fd) / (static_cast<double>(up) - static_cast<double>(down));
  }
  return g;
}

double tensor_check(const std::function<double(const Tensor&)>& f, const Tensor& x, const Tensor& analytic,
                    double step = kLayerStep) {
  return max_relative_error(as_doubles(analytic), tensor_numeric_gradient(f, x, step));
}

// ||a - n|| / max(1e-8, ||a|| + ||n||) over a whole tensor.
double tensor_check_normwise(const std::function<double(const Tensor&)>& f, const Tensor& x, const Tensor& analytic,
                             double step = kLayerStep) {
  const std::vector<double> n = tensor_numeric_gradient(f, x, step);
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    diff += (analytic[i] - n[i]) * (analytic[i] - n[i]);
    na += static_cast<double>(analytic[i]) * analytic[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max(1e-8, std::sqrt(na) + std::sqrt(nn));
}

struct Suite {
  std::vector<GradCheckResult> results;
  GradCheckResult& get(const std::string& name, double tol) {
    for (GradCheckResult& r : results)
      if (r.name == name) return r;
    results.push_back({name, 0.0, tol, 0});
    return results.back();
  }
  void record(const std::string& name, double tol, double err) {
    GradCheckResult& r = get(name, tol);
    r.max_error = std::max(r.max_error, std::isnan(err) ? std::numeric_limits<double>::infinity() : err);
    ++r.draws;
  }
};

std::vector<double> random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, lo, hi);
  return v;
}

std::vector<double> concat(std::initializer_list<std::vector<double>> parts) {
  std::vector<double> out;
  for (const std::vector<double>& p : parts) std::copy(p.begin(), p.end(), std::back_inserter(out));
  return out;
}

void check_losses(Suite& s, Rng& rng) {
  {
    const int y = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
    const double p = uniform(rng, 0.1, 0.9);
    const std::vector<double> x{p};
    const ScalarFn f = [&](std::span<const double> v) { return loss_det(v[0], y).loss; };
    const std::vector<double> a{loss_det(p, y).grad};
    s.record("loss_det", 1e-3, grad_check(f, x, a));
  }
  for (std::size_t n : {std::size_t{4}, std::size_t{10}}) {
    const std::vector<double> pred = random_vector(rng, n, -1.0, 1.0), target = random_vector(rng, n, -1.0, 1.0);
    auto loss = n == 4 ? loss_box : loss_landmark;
    const ScalarFn f = [&](std::span<const double> v) { return loss(v, target).loss; };
    s.record(n == 4 ? "loss_box" : "loss_landmark", 1e-6, grad_check(f, pred, loss(pred, target).grad));
  }
  {
    DetSample sample;
    sample.y_det = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
    sample.mask = {true, true, true};
    std::array<double, 4> bt{};
    std::array<double, 10> lt{};
    for (double& v : bt) v = uniform(rng, -0.3, 0.3);
    for (double& v : lt) v = uniform(rng, 0.0, 1.0);
    sample.box_target = bt;
    sample.landmark_target = lt;
    std::vector<double> x = random_vector(rng, 15, -0.5, 0.5);
    x[0] = uniform(rng, 0.1, 0.9);
    auto unpack = [](std::span<const double> v) {
      DetOutputs o;
      o.p = v[0];
      std::copy(v.begin() + 1, v.begin() + 5, o.box.begin());
      std::copy(v.begin() + 5, v.end(), o.landmarks.begin());
      return o;
    };
    const ScalarFn f = [&](std::span<const double> v) { return loss_multitask(unpack(v), sample).loss; };
    const MultitaskLoss m = loss_multitask(unpack(x), sample);
    const std::vector<double> a = concat({{m.grad.p}, {m.grad.box.begin(), m.grad.box.end()},
                                          {m.grad.landmarks.begin(), m.grad.landmarks.end()}});
    s.record("loss_multitask", 1e-3, grad_check(f, x, a));
  }
  {
    // Draws on either side of the hinge, kept away from the kink itself.
    std::vector<double> a, p, n;
    double inner = 0.0;
    const double margin = 0.2;
    do {
      a = random_vector(rng, 8, -1.0, 1.0);
      p = random_vector(rng, 8, -1.0, 1.0);
      n = random_vector(rng, 8, -1.0, 1.0);
      double dap = 0.0, dan = 0.0;
      for (std::size_t i = 0; i < 8; ++i) dap += (a[i] - p[i]) * (a[i] - p[i]), dan += (a[i] - n[i]) * (a[i] - n[i]);
      inner = dap - dan + margin;
    } while (std::abs(inner) < 0.05);
    const std::vector<double> x = concat({a, p, n});
    const ScalarFn f = [&](std::span<const double> v) {
      return loss_triplet(v.subspan(0, 8), v.subspan(8, 8), v.subspan(16, 8), margin).loss;
    };
    const TripletLoss t = loss_triplet(a, p, n, margin);
    s.record("loss_triplet", 1e-6, grad_check(f, x, concat({t.grad_anchor, t.grad_positive, t.grad_negative})));
  }
}

void check_layers(Suite& s, Rng& rng) {
  {
    const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), k = pick(rng, 1, 3);
    const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const std::size_t h = pick(rng, k, 6), w = pick(rng, k, 6);
    const Tensor x = grid_tensor(rng, {cin, h, w});
    const Tensor wt = grid_tensor(rng, {cout, cin, k, k});
    const Tensor b = grid_tensor(rng, {cout});
    const Tensor r = grid_tensor(rng, nn::conv2d(x, wt, b, stride, pad).shape());
    const nn::Conv2dGrads g = nn::conv2d_backward(x, wt, r, stride, pad);
    s.record("conv2d.input", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::conv2d(v, wt, b, stride, pad), r); }, x,
                          g.input));
    s.record("conv2d.weights", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::conv2d(x, v, b, stride, pad), r); }, wt,
                          g.weights));
    s.record("conv2d.bias", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::conv2d(x, wt, v, stride, pad), r); }, b,
                          g.bias));
  }
  {
    const std::size_t k = pick(rng, 2, 3), stride = pick(rng, 1, 2);
    const Tensor x = distinct_grid_tensor(rng, {pick(rng, 1, 3), pick(rng, k, 7), pick(rng, k, 7)});
    const Tensor r = grid_tensor(rng, nn::maxpool2d(x, k, stride).shape());
    s.record("maxpool2d.input", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::maxpool2d(v, k, stride), r); }, x,
                          nn::maxpool2d_backward(x, k, stride, r)));
  }
  {
    const std::size_t c = pick(rng, 1, 4);
    const Tensor x = grid_tensor(rng, {c, pick(rng, 1, 4), pick(rng, 1, 4)}, true);
    const Tensor slopes = grid_tensor(rng, {c});
    const Tensor r = grid_tensor(rng, x.shape());
    const nn::PreluGrads g = nn::prelu_backward(x, slopes, r);
    s.record("prelu.input", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::prelu(v, slopes), r); }, x, g.input));
    s.record("prelu.slopes", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::prelu(x, v), r); }, slopes, g.slopes));
  }
  {
    const std::size_t nin = pick(rng, 1, 12), nout = pick(rng, 1, 6);
    const Tensor x = grid_tensor(rng, {nin});
    const Tensor wt = grid_tensor(rng, {nout, nin});
    const Tensor b = grid_tensor(rng, {nout});
    const Tensor r = grid_tensor(rng, {nout});
    const nn::FullyConnectedGrads g = nn::fully_connected_backward(x, wt, r);
    s.record("fully_connected.input", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::fully_connected(v, wt, b), r); }, x, g.input));
    s.record("fully_connected.weights", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::fully_connected(x, v, b), r); }, wt,
                          g.weights));
    s.record("fully_connected.bias", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::fully_connected(x, wt, v), r); }, b,
                          g.bias));
  }
  {
    // Smooth layers are checked at well-conditioned points: balanced logits
    // and upstream weights whose gradient components are all clearly nonzero.
    const std::size_t n = pick(rng, 2, 5);
    Tensor x({n, 2, 2});
    for (float& v : x.data()) v = static_cast<float>(uniform(rng, -0.5, 0.5));
    const Tensor y = nn::softmax(x, 0);
    Tensor r(x.shape());
    for (bool ok = false; !ok;) {
      for (float& v : r.data()) v = static_cast<float>(uniform(rng, -2.0, 2.0));
      ok = true;
      for (std::size_t i = 0; i < 4; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += static_cast<double>(y[k * 4 + i]) * r[k * 4 + i];
        for (std::size_t k = 0; k < n; ++k) ok = ok && std::abs(r[k * 4 + i] - dot) >= 0.5;
      }
    }
    s.record("softmax.input", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::softmax(v, 0), r); }, x,
                          nn::softmax_backward(y, 0, r)));
  }
  {
    const std::size_t n = pick(rng, 2, 6);
    Tensor x({n});
    for (float& v : x.data()) v = static_cast<float>(uniform(rng, 0.3, 1.0) * (std::bernoulli_distribution(0.5)(rng) ? 1 : -1));
    const Tensor y = nn::l2_normalize(x);
    Tensor r({n});
    for (bool ok = false; !ok;) {
      for (float& v : r.data()) v = static_cast<float>(uniform(rng, -2.0, 2.0));
      const double dot = weighted_sum(y, r);
      ok = true;
      for (std::size_t k = 0; k < n; ++k) ok = ok && std::abs(r[k] - y[k] * dot) >= 0.5;
    }
    s.record("l2_normalize.input", 1e-3,
             tensor_check([&](const Tensor& v) { return weighted_sum(nn::l2_normalize(v), r); }, x,
                          nn::l2_normalize_backward(x, r)));
  }
}

// conv -> prelu -> strided conv -> fc, wired through net_backward. Stacked
// layers are not exact in float32, so this one compares whole tensors.
void check_network(Suite& s, Rng& rng) {
  NetworkDef net;
  net.name = "gc";
  net.input_shape = {2, 6, 6};
  net.conv("c1", {3, 2, 3, 3, 1, 1}).prelu("p1", 3).conv("c2", {2, 3, 3, 3, 2, 0}).fc("fc", 2 * 2 * 2, 3);
  net.head("out", "fc").head("mid", "p1");
  WeightStore w;
  for (const auto& [name, shape] : net.parameter_shapes()) w.add(name, grid_tensor(rng, shape, true, 32));
  // Power-of-two slopes keep every activation exact in float32.
  for (float& v : w.get_mut("gc.p1.slope").data()) v = std::bernoulli_distribution(0.5)(rng) ? 0.25f : 0.5f;
  Tensor x;
  // Keep pre-activations away from the PReLU kink.
  for (bool ok = false; !ok;) {
    x = grid_tensor(rng, net.input_shape);
    const ForwardTrace t = net_forward_traced(net, w, x);
    ok = std::all_of(t.activations.at("c1").data().begin(), t.activations.at("c1").data().end(),
                     [](float v) { return std::abs(v) > 0.05f; });
  }
  const ForwardTrace trace = net_forward_traced(net, w, x);
  const HeadMap upstream{{"out", grid_tensor(rng, {3}, true)},
                         {"mid", grid_tensor(rng, trace.activations.at("p1").shape(), true)}};
  const BackwardResult g = net_backward(net, w, trace, upstream);
  auto loss = [&](const WeightStore& ws, const Tensor& in) {
    const HeadMap h = net_forward(net, ws, in);
    return weighted_sum(h.at("out"), upstream.at("out")) + weighted_sum(h.at("mid"), upstream.at("mid"));
  };
  double worst = tensor_check_normwise([&](const Tensor& v) { return loss(w, v); }, x, g.input_grad);
  for (const auto& [name, shape] : net.parameter_shapes()) {
    WeightStore probe = w;
    worst = std::max(worst, tensor_check_normwise(
                                [&](const Tensor& v) {
                                  probe.set(name, v);
                                  return loss(probe, x);
                                },
                                w.get(name), g.parameter_grads.get(name)));
  }
  s.record("network", 1e-3, worst);
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, std::size_t draws) {
  Suite s;
  Rng rng(mix_seed(seed, 0));
  for (std::size_t d = 0; d < draws; ++d) {
    check_losses(s, rng);
    check_layers(s, rng);
    check_network(s, rng);
  }
  return s.results;
}

void TrainerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
  if (!(margin > 0.0)) throw ConfigError("triplet margin must be > 0");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (train_scenes < 1 || heldout_scenes < 1) throw ConfigError("scene counts must be >= 1");
  if (loss_weights.det < 0.0 || loss_weights.box < 0.0 || loss_weights.landmark < 0.0) {
    throw ConfigError("loss weights must be >= 0");
  }
}

double triplet_satisfaction(std::span<const Embedding> embeddings, std::span<const int> labels) {
  if (embeddings.size() != labels.size()) throw ConfigError("embeddings and labels differ in count");
  const std::size_t n = embeddings.size();
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = embeddings[i].squared_distance(embeddings[j]);
  std::size_t total = 0, good = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (labels[k] == labels[a]) continue;
        ++total;
        good += d[a * n + p] < d[a * n + k] ? 1 : 0;
      }
    }
  if (total == 0) throw DataError("held-out set has no triplets");
  return static_cast<double>(good) / static_cast<double>(total);
}

void write_metrics_csv(std::ostream& out, const StageHistory& history) {
  out << "epoch,loss,accuracy\n";
  char buf[96];
  for (const EpochMetrics& m : history.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", m.epoch, m.loss, m.accuracy);
    out << buf;
  }
}

namespace {

constexpr double kEmaFactor = 0.05;

void sgd_step(WeightStore& weights, const WeightStore& grads, double scale) {
  for (auto& [name, t] : weights) {
    if (!grads.contains(name)) continue;
    const Tensor& g = grads.get(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= static_cast<float>(scale * g[i]);
  }
}

void accumulate(WeightStore& total, const WeightStore& grads) {
  for (const auto& [name, g] : grads) {
    if (!total.contains(name)) {
      total.set(name, g);
      continue;
    }
    Tensor& t = total.get_mut(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += g[i];
  }
}

void check_finite(double loss, const std::string& stage, std::size_t epoch, std::size_t step, double lr) {
  if (std::isfinite(loss)) return;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: loss became non-finite at epoch %zu, step %zu (learning rate %g)",
                stage.c_str(), epoch, step, lr);
  throw TrainingDivergedError(buf);
}

void push_ema(StageHistory& h, double loss) {
  const double prev = h.loss_ema.empty() ? loss : h.loss_ema.back();
  h.loss_ema.push_back(h.loss_ema.empty() ? loss : (1.0 - kEmaFactor) * prev + kEmaFactor * loss);
}

struct DetStageSpec {
  std::string name;
  NetworkDef net;
  std::size_t input;
};

DetSample make_det_sample(const SynthScene& scene, const FaceBox& crop, CropKind kind, std::size_t size) {
  const SynthFace& face = scene.faces.front();
  DetSample s;
  s.patch = normalize_pixels(crop_resize(scene.image, crop, size));
  const double w = crop.width(), h = crop.height();
  if (kind != CropKind::Negative) {
    s.box_target = std::array<double, 4>{(face.box.x1 - crop.x1) / w, (face.box.y1 - crop.y1) / h,
                                         (face.box.x2 - crop.x2) / w, (face.box.y2 - crop.y2) / h};
    s.mask.box = true;
  }
  if (kind == CropKind::Positive) {
    std::array<double, 10> lm{};
    for (std::size_t k = 0; k < 5; ++k) {
      lm[2 * k] = (face.landmarks[k].x - crop.x1) / w;
      lm[2 * k + 1] = (face.landmarks[k].y - crop.y1) / h;
    }
    s.landmark_target = lm;
    s.mask.landmark = true;
  }
  s.y_det = kind == CropKind::Positive ? 1 : 0;
  s.mask.det = kind != CropKind::Part;
  return s;
}

std::vector<DetSample> det_samples(Rng& rng, std::size_t scenes, std::size_t size, bool with_parts,
                                   std::size_t negatives_per_scene) {
  const SceneSpec spec{64, 64, 16.0f, 48.0f};
  std::vector<DetSample> out;
  for (std::size_t i = 0; i < scenes; ++i) {
    const SynthScene scene = synth_scene(rng, spec);
    std::vector<CropKind> kinds{CropKind::Positive};
    if (with_parts) kinds.push_back(CropKind::Part);
    kinds.insert(kinds.end(), negatives_per_scene, CropKind::Negative);
    for (CropKind kind : kinds)
      if (const std::optional<FaceBox> crop = sample_crop(rng, scene, kind))
        out.push_back(make_det_sample(scene, *crop, kind, size));
  }
  return out;
}

DetOutputs det_outputs(const HeadMap& heads) {
  DetOutputs o;
  o.p = heads.at("face_score")[1];
  for (std::size_t k = 0; k < 4; ++k) o.box[k] = heads.at("box")[k];
  for (std::size_t k = 0; k < 10; ++k) o.landmarks[k] = heads.at("landmarks")[k];
  return o;
}

double patch_accuracy(const NetworkDef& net, const WeightStore& w, std::span<const DetSample> samples) {
  std::size_t total = 0, good = 0;
  for (const DetSample& s : samples) {
    if (!s.mask.det) continue;
    const double p = net_forward(net, w, s.patch).at("face_score")[1];
    ++total;
    good += (p >= 0.5) == (s.y_det == 1) ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(total);
}

StageHistory train_det_stage(const DetStageSpec& stage, WeightStore& weights, const TrainerConfig& cfg,
                             std::uint64_t tag) {
  Rng data_rng(mix_seed(cfg.rng_seed, tag));
  const std::vector<DetSample> train = det_samples(data_rng, cfg.train_scenes, stage.input, true, 3);
  const std::vector<DetSample> heldout = det_samples(data_rng, cfg.heldout_scenes, stage.input, false, 1);
  weights.merge(random_weights(stage.net, mix_seed(cfg.rng_seed, tag + 100)));
  Rng order_rng(mix_seed(cfg.rng_seed, tag + 200));

  StageHistory hist{stage.name, {}, {}};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      WeightStore grads;
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const DetSample& s = train[order[i]];
        const ForwardTrace trace = net_forward_traced(stage.net, weights, s.patch);
        HeadMap heads;
        for (const auto& [head, act] : stage.net.heads) heads[head] = trace.activations.at(act);
        const MultitaskLoss l = loss_multitask(det_outputs(heads), s, cfg.loss_weights);
        batch_loss += l.loss;
        HeadMap up;
        Tensor gs(heads.at("face_score").shape()), gb(heads.at("box").shape()), gl(heads.at("landmarks").shape());
        gs[1] = static_cast<float>(l.grad.p);
        for (std::size_t k = 0; k < 4; ++k) gb[k] = static_cast<float>(l.grad.box[k]);
        for (std::size_t k = 0; k < 10; ++k) gl[k] = static_cast<float>(l.grad.landmarks[k]);
        up["face_score"] = std::move(gs);
        up["box"] = std::move(gb);
        up["landmarks"] = std::move(gl);
        accumulate(grads, net_backward(stage.net, weights, trace, up).parameter_grads);
      }
      const double n = static_cast<double>(end - start);
      batch_loss /= n;
      check_finite(batch_loss, stage.name, epoch, step, cfg.learning_rate);
      sgd_step(weights, grads, cfg.learning_rate / n);
      push_ema(hist, batch_loss);
      epoch_loss += batch_loss;
      ++batches;
      ++step;
    }
    hist.epochs.push_back({epoch, epoch_loss / static_cast<double>(batches), patch_accuracy(stage.net, weights, heldout)});
  }
  return hist;
}

struct ChipSet {
  std::vector<FaceChip> chips;
  std::vector<int> labels;  // 1 = child, 0 = adult
};

ChipSet embed_chips(Rng& rng, std::size_t per_class, std::size_t size) {
  ChipSet out;
  const SceneSpec spec{64, 64, 24.0f, 48.0f};
  for (std::size_t i = 0; i < per_class; ++i) {
    for (AgeLabel label : {AgeLabel::Child, AgeLabel::Adult}) {
      const SynthScene scene = synth_scene(rng, spec, label);
      out.chips.push_back(align_crop(scene.image, jittered_face_box(rng, scene.faces.front()), size));
      out.labels.push_back(label == AgeLabel::Child ? 1 : 0);
    }
  }
  return out;
}

std::vector<Embedding> embed_all(const NetworkDef& net, const WeightStore& w, const ChipSet& set) {
  std::vector<Embedding> out;
  out.reserve(set.chips.size());
  for (const FaceChip& c : set.chips) out.push_back(embed(c, net, w));
  return out;
}

TrainResult train_embedder(const TrainerConfig& cfg) {
  const NetworkDef net = make_toy_embedder();
  Rng data_rng(mix_seed(cfg.rng_seed, 10));
  const ChipSet train = embed_chips(data_rng, cfg.train_scenes / 2, kToyChipSize);
  const ChipSet heldout = embed_chips(data_rng, cfg.heldout_scenes / 2 + 1, kToyChipSize);
  WeightStore weights = random_weights(net, mix_seed(cfg.rng_seed, 110));
  Rng order_rng(mix_seed(cfg.rng_seed, 210));

  // Batches alternate classes so every batch holds both.
  std::vector<std::size_t> child, adult;
  for (std::size_t i = 0; i < train.labels.size(); ++i) (train.labels[i] ? child : adult).push_back(i);

  StageHistory hist{"embed", {}, {}};
  std::size_t step = 0;
  const std::size_t half = cfg.batch_size / 2;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(child.begin(), child.end(), order_rng);
    std::shuffle(adult.begin(), adult.end(), order_rng);
    const std::size_t batches = std::min(child.size(), adult.size()) / half;
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<std::size_t> idx;
      for (std::size_t k = 0; k < half; ++k) idx.push_back(child[b * half + k]), idx.push_back(adult[b * half + k]);
      std::vector<ForwardTrace> traces;
      std::vector<Embedding> emb;
      std::vector<int> labels;
      for (std::size_t i : idx) {
        traces.push_back(net_forward_traced(net, weights, train.chips[i].pixels));
        emb.push_back(Embedding::from_unit(traces.back().activations.at("embedding").data(), 1e-4));
        labels.push_back(train.labels[i]);
      }
      const std::vector<TripletIndex> triplets = select_triplets(emb, labels);
      std::vector<std::vector<double>> g(idx.size(), std::vector<double>(kEmbeddingDim, 0.0));
      double loss = 0.0;
      const double inv = triplets.empty() ? 0.0 : 1.0 / static_cast<double>(triplets.size());
      for (const TripletIndex& t : triplets) {
        const TripletLoss l = loss_triplet(emb[t.anchor], emb[t.positive], emb[t.negative], cfg.margin);
        loss += l.loss * inv;
        for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
          g[t.anchor][k] += l.grad_anchor[k] * inv;
          g[t.positive][k] += l.grad_positive[k] * inv;
          g[t.negative][k] += l.grad_negative[k] * inv;
        }
      }
      check_finite(loss, "embed", epoch, step, cfg.learning_rate);
      WeightStore grads;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        Tensor up({kEmbeddingDim});
        for (std::size_t k = 0; k < kEmbeddingDim; ++k) up[k] = static_cast<float>(g[i][k]);
        accumulate(grads, net_backward(net, weights, traces[i], {{"embedding", up}}).parameter_grads);
      }
      sgd_step(weights, grads, cfg.learning_rate);
      push_ema(hist, loss);
      epoch_loss += loss;
      ++step;
    }
    const double sat = triplet_satisfaction(embed_all(net, weights, heldout), heldout.labels);
    hist.epochs.push_back({epoch, batches ? epoch_loss / static_cast<double>(batches) : 0.0, sat});
  }
  const float s = static_cast<float>(kToyChipSize);
  weights.add(kEmbedderInputShapeKey, Tensor({3}, std::vector<float>{3.0f, s, s}));
  return {std::move(weights), {std::move(hist)}};
}

}  // namespace

TrainResult train_toy(ToyTask task, const TrainerConfig& config) {
  config.validate();
  if (task == ToyTask::Embedder) return train_embedder(config);
  const CascadeWidths widths = CascadeWidths::toy();
  const std::vector<DetStageSpec> stages{{"pnet", make_pnet(widths.pnet), kPnetInput},
                                         {"rnet", make_rnet(widths.rnet), kRnetInput},
                                         {"onet", make_onet(widths.onet), kOnetInput}};
  TrainResult out;
  for (std::size_t i = 0; i < stages.size(); ++i)
    out.stages.push_back(train_det_stage(stages[i], out.weights, config, i + 1));
  return out;
}

}  // namespace edgeguard
