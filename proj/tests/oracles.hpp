#pragma once

// Slow, obviously-correct reference implementations used by the unit tests
// and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "edgeguard/detector.hpp"
#include "edgeguard/embedder.hpp"
#include "edgeguard/recognizer.hpp"
#include "edgeguard/tensor.hpp"
#include "edgeguard/training.hpp"

namespace oracle {

using edgeguard::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, Tensor::Shape shape, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = u(rng);
  return t;
}

// Six nested loops, zero padding, double accumulation.
inline Tensor conv2d(const Tensor& in, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({cout, oh, ow});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = b[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
              const long ix = static_cast<long>(x * stride + j) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              s += static_cast<double>(in.at(c, iy, ix)) * w[((o * cin + c) * kh + i) * kw + j];
            }
        out.at(o, y, x) = static_cast<float>(s);
      }
  return out;
}

// Ceil-mode windows: add another window while the last one stops short of
// the border and the next one would still start inside.
inline Tensor maxpool2d(const Tensor& in, std::size_t k, std::size_t stride) {
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  std::size_t oh = 1, ow = 1;
  while ((oh - 1) * stride + k < h && oh * stride < h) ++oh;
  while ((ow - 1) * stride + k < w && ow * stride < w) ++ow;
  Tensor out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        float m = -std::numeric_limits<float>::infinity();
        for (std::size_t i = y * stride; i < std::min(h, y * stride + k); ++i)
          for (std::size_t j = x * stride; j < std::min(w, x * stride + k); ++j) m = std::max(m, in.at(ch, i, j));
        out.at(ch, y, x) = m;
      }
  return out;
}

inline float overlap(const edgeguard::FaceBox& a, const edgeguard::FaceBox& b, edgeguard::OverlapMode mode) {
  const float iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const float ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const float inter = iw > 0.0f && ih > 0.0f ? iw * ih : 0.0f;
  const float aa = (a.x2 - a.x1) * (a.y2 - a.y1), ab = (b.x2 - b.x1) * (b.y2 - b.y1);
  const float denom = mode == edgeguard::OverlapMode::Union ? aa + ab - inter : std::min(aa, ab);
  return denom > 0.0f ? inter / denom : 0.0f;
}

// Each round scans everything still alive for the best box (highest score,
// lowest index), keeps it and kills whatever overlaps it too much.
inline std::vector<std::size_t> nms(std::span<const edgeguard::FaceBox> boxes, float threshold,
                                    edgeguard::OverlapMode mode) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<std::size_t> kept;
  for (;;) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && (best == boxes.size() || boxes[i].score > boxes[best].score)) best = i;
    if (best == boxes.size()) return kept;
    kept.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && overlap(boxes[best], boxes[i], mode) > threshold) alive[i] = false;
  }
}

inline double sqdist(const edgeguard::Embedding& a, const edgeguard::Embedding& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < edgeguard::kEmbeddingDim; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

// Lists every candidate negative for every ordered same-class pair and picks
// by (distance, index) from the semi-hard set, else from all negatives.
inline std::vector<edgeguard::TripletIndex> select_triplets(std::span<const edgeguard::Embedding> e,
                                                            std::span<const int> labels) {
  std::vector<edgeguard::TripletIndex> out;
  for (std::size_t a = 0; a < e.size(); ++a)
    for (std::size_t p = 0; p < e.size(); ++p) {
      if (a == p || labels[a] != labels[p]) continue;
      const double dap = sqdist(e[a], e[p]);
      std::vector<std::pair<double, std::size_t>> all, semi;
      for (std::size_t n = 0; n < e.size(); ++n) {
        if (labels[n] == labels[a]) continue;
        const double dan = sqdist(e[a], e[n]);
        all.emplace_back(dan, n);
        if (dap < dan) semi.emplace_back(dan, n);
      }
      if (all.empty()) continue;
      const auto& pool = semi.empty() ? all : semi;
      out.push_back({a, p, std::min_element(pool.begin(), pool.end())->second});
    }
  return out;
}

// Probability that a random child outscores a random adult, ties counted half.
inline double pairwise_auc(std::span<const double> scores, std::span<const edgeguard::AgeLabel> truth) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (truth[i] != edgeguard::AgeLabel::Child) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (truth[j] != edgeguard::AgeLabel::Adult) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) good += 1.0;
      else if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return good / pairs;
}

inline edgeguard::Embedding random_embedding(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(edgeguard::kEmbeddingDim);
  double n = 0.0;
  for (double& x : v) x = g(rng), n += x * x;
  n = std::sqrt(n);
  std::vector<float> f(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i] / n);
  return edgeguard::Embedding::from_unit(f);
}

// Random labeled batch with some repeated vectors so that distance ties occur.
inline void random_batch(std::mt19937_64& rng, std::vector<edgeguard::Embedding>& emb, std::vector<int>& labels) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 16)(rng);
  emb.clear();
  labels.clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && rng() % 5 == 0) emb.push_back(emb[rng() % i]);
    else emb.push_back(random_embedding(rng));
    labels.push_back(static_cast<int>(rng() % 2));
  }
}

}  // namespace oracle
