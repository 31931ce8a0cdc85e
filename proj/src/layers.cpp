#include "edgeguard/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "edgeguard/errors.hpp"

namespace edgeguard::nn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void require_chw(const Tensor& t, const char* op) {
  require(t.rank() == 3, std::string(op) + ": expected [C,H,W] input, got " + shape_string(t.shape()));
}

// Range of output positions o for which o*stride + k - padding lies in [0, in).
struct ValidRange {
  std::size_t begin;
  std::size_t end;
};

ValidRange valid_outputs(std::size_t out, std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
  // need o*stride + k >= padding and o*stride + k - padding <= in - 1
  const long long lo_num = static_cast<long long>(padding) - static_cast<long long>(k);
  std::size_t begin = 0;
  if (lo_num > 0) begin = static_cast<std::size_t>((lo_num + static_cast<long long>(stride) - 1) / static_cast<long long>(stride));
  const long long hi_num = static_cast<long long>(in) - 1 + static_cast<long long>(padding) - static_cast<long long>(k);
  std::size_t end = 0;
  if (hi_num >= 0) end = std::min(out, static_cast<std::size_t>(hi_num / static_cast<long long>(stride)) + 1);
  if (begin > end) begin = end;
  return {begin, end};
}

}  // namespace

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(in + 2 * padding >= kernel, "conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                                          std::to_string(in + 2 * padding));
  return (in + 2 * padding - kernel) / stride + 1;
}

std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  require(kernel >= 1 && stride >= 1, "maxpool2d: kernel and stride must be >= 1");
  const std::size_t span = in > kernel ? in - kernel : 0;
  std::size_t out = (span + stride - 1) / stride + 1;
  if ((out - 1) * stride >= in) --out;
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_chw(input, "conv2d");
  require(weights.rank() == 4, "conv2d: weights must be [C_out,C_in,KH,KW], got " + shape_string(weights.shape()));
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  require(weights.dim(1) == cin, "conv2d: weights expect " + std::to_string(weights.dim(1)) +
                                     " input channels, input has " + std::to_string(cin));
  require(bias.shape() == Tensor::Shape{cout}, "conv2d: bias shape " + shape_string(bias.shape()) +
                                                   " does not match " + std::to_string(cout) + " output channels");
  const std::size_t oh = conv_extent(h, kh, stride, padding);
  const std::size_t ow = conv_extent(w, kw, stride, padding);

  Tensor out({cout, oh, ow});
  const float* in = input.data().data();
  const float* wt = weights.data().data();
  float* o = out.data().data();
  for (std::size_t oc = 0; oc < cout; ++oc) {
    float* oplane = o + oc * oh * ow;
    std::fill(oplane, oplane + oh * ow, bias[oc]);
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const float* iplane = in + ic * h * w;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const ValidRange ry = valid_outputs(oh, h, ky, stride, padding);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const float wv = wt[((oc * cin + ic) * kh + ky) * kw + kx];
          const ValidRange rx = valid_outputs(ow, w, kx, stride, padding);
          for (std::size_t y = ry.begin; y < ry.end; ++y) {
            const float* irow = iplane + (y * stride + ky - padding) * w;
            float* orow = oplane + y * ow;
            for (std::size_t x = rx.begin; x < rx.end; ++x) orow[x] += wv * irow[x * stride + kx - padding];
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output,
                            std::size_t stride, std::size_t padding) {
  require_chw(input, "conv2d_backward");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  const std::size_t oh = conv_extent(h, kh, stride, padding);
  const std::size_t ow = conv_extent(w, kw, stride, padding);
  require(grad_output.shape() == Tensor::Shape{cout, oh, ow},
          "conv2d_backward: gradient shape " + shape_string(grad_output.shape()) + " does not match output");

  Conv2dGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({cout})};
  const float* in = input.data().data();
  const float* wt = weights.data().data();
  const float* go = grad_output.data().data();
  float* gi = g.input.data().data();
  float* gw = g.weights.data().data();

  for (std::size_t oc = 0; oc < cout; ++oc) {
    const float* gplane = go + oc * oh * ow;
    float bsum = 0.0f;
    for (std::size_t i = 0; i < oh * ow; ++i) bsum += gplane[i];
    g.bias[oc] = bsum;
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const float* iplane = in + ic * h * w;
      float* giplane = gi + ic * h * w;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const ValidRange ry = valid_outputs(oh, h, ky, stride, padding);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::size_t widx = ((oc * cin + ic) * kh + ky) * kw + kx;
          const float wv = wt[widx];
          const ValidRange rx = valid_outputs(ow, w, kx, stride, padding);
          float wsum = 0.0f;
          for (std::size_t y = ry.begin; y < ry.end; ++y) {
            const std::size_t row = (y * stride + ky - padding) * w;
            const float* grow = gplane + y * ow;
            for (std::size_t x = rx.begin; x < rx.end; ++x) {
              const std::size_t col = x * stride + kx - padding;
              wsum += grow[x] * iplane[row + col];
              giplane[row + col] += grow[x] * wv;
            }
          }
          gw[widx] += wsum;
        }
      }
    }
  }
  return g;
}

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
  require_chw(input, "maxpool2d");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = pooled_extent(h, kernel, stride);
  const std::size_t ow = pooled_extent(w, kernel, stride);
  Tensor out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      const std::size_t y0 = y * stride, y1 = std::min(y0 + kernel, h);
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t x0 = x * stride, x1 = std::min(x0 + kernel, w);
        float m = -std::numeric_limits<float>::infinity();
        for (std::size_t yy = y0; yy < y1; ++yy)
          for (std::size_t xx = x0; xx < x1; ++xx) m = std::max(m, input.at(ch, yy, xx));
        out.at(ch, y, x) = m;
      }
    }
  }
  return out;
}

Tensor maxpool2d_backward(const Tensor& input, std::size_t kernel, std::size_t stride, const Tensor& grad_output) {
  require_chw(input, "maxpool2d_backward");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = pooled_extent(h, kernel, stride);
  const std::size_t ow = pooled_extent(w, kernel, stride);
  require(grad_output.shape() == Tensor::Shape{c, oh, ow}, "maxpool2d_backward: gradient shape mismatch");
  Tensor gi(input.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      const std::size_t y0 = y * stride, y1 = std::min(y0 + kernel, h);
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t x0 = x * stride, x1 = std::min(x0 + kernel, w);
        std::size_t by = y0, bx = x0;
        float m = input.at(ch, y0, x0);
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) {
            if (input.at(ch, yy, xx) > m) {
              m = input.at(ch, yy, xx);
              by = yy;
              bx = xx;
            }
          }
        }
        gi.at(ch, by, bx) += grad_output.at(ch, y, x);
      }
    }
  }
  return gi;
}

Tensor prelu(const Tensor& input, const Tensor& slopes) {
  require(input.rank() >= 1, "prelu: input must have a channel axis");
  const std::size_t c = input.dim(0);
  require(slopes.shape() == Tensor::Shape{c}, "prelu: " + std::to_string(slopes.size()) + " slopes for " +
                                                  std::to_string(c) + " channels");
  const std::size_t plane = input.size() / c;
  Tensor out = input;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float a = slopes[ch];
    float* p = out.data().data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i)
      if (!(p[i] > 0.0f)) p[i] *= a;
  }
  return out;
}

PreluGrads prelu_backward(const Tensor& input, const Tensor& slopes, const Tensor& grad_output) {
  require(grad_output.shape() == input.shape(), "prelu_backward: gradient shape mismatch");
  const std::size_t c = input.dim(0);
  const std::size_t plane = input.size() / c;
  PreluGrads g{grad_output, Tensor(slopes.shape())};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float a = slopes[ch];
    const float* x = input.data().data() + ch * plane;
    float* gi = g.input.data().data() + ch * plane;
    float acc = 0.0f;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!(x[i] > 0.0f)) {
        acc += gi[i] * x[i];
        gi[i] *= a;
      }
    }
    g.slopes[ch] = acc;
  }
  return g;
}

namespace {

struct AxisLayout {
  std::size_t outer, n, inner;
};

AxisLayout axis_layout(const Tensor& t, std::size_t axis) {
  require(axis < t.rank(), "softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(t.shape()));
  AxisLayout l{1, t.dim(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) l.inner *= t.dim(i);
  return l;
}

}  // namespace

Tensor softmax(const Tensor& input, std::size_t axis) {
  const AxisLayout l = axis_layout(input, axis);
  Tensor out(input.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.n * l.inner + i;
      float m = input[base];
      for (std::size_t k = 1; k < l.n; ++k) m = std::max(m, input[base + k * l.inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < l.n; ++k) sum += std::exp(static_cast<double>(input[base + k * l.inner] - m));
      for (std::size_t k = 0; k < l.n; ++k)
        out[base + k * l.inner] = static_cast<float>(std::exp(static_cast<double>(input[base + k * l.inner] - m)) / sum);
    }
  }
  return out;
}

Tensor softmax_backward(const Tensor& output, std::size_t axis, const Tensor& grad_output) {
  require(grad_output.shape() == output.shape(), "softmax_backward: gradient shape mismatch");
  const AxisLayout l = axis_layout(output, axis);
  Tensor gi(output.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.n * l.inner + i;
      double dot = 0.0;
      for (std::size_t k = 0; k < l.n; ++k) dot += static_cast<double>(grad_output[base + k * l.inner]) * output[base + k * l.inner];
      for (std::size_t k = 0; k < l.n; ++k) {
        const std::size_t idx = base + k * l.inner;
        gi[idx] = static_cast<float>(output[idx] * (grad_output[idx] - dot));
      }
    }
  }
  return gi;
}

Tensor l2_normalize(const Tensor& input) {
  double sq = 0.0;
  for (float v : input.data()) sq += static_cast<double>(v) * v;
  if (!(sq > 0.0)) throw DegenerateInputError("l2_normalize: input vector is all zero");
  const double inv = 1.0 / std::sqrt(sq);
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = static_cast<float>(input[i] * inv);
  return out;
}

Tensor l2_normalize_backward(const Tensor& input, const Tensor& grad_output) {
  require(grad_output.shape() == input.shape(), "l2_normalize_backward: gradient shape mismatch");
  double sq = 0.0;
  for (float v : input.data()) sq += static_cast<double>(v) * v;
  if (!(sq > 0.0)) throw DegenerateInputError("l2_normalize: input vector is all zero");
  const double norm = std::sqrt(sq);
  double dot = 0.0;  // y . g
  for (std::size_t i = 0; i < input.size(); ++i) dot += (input[i] / norm) * grad_output[i];
  Tensor gi(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    gi[i] = static_cast<float>((grad_output[i] - (input[i] / norm) * dot) / norm);
  return gi;
}

Tensor fully_connected(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require(weights.rank() == 2, "fully_connected: weights must be [out,in], got " + shape_string(weights.shape()));
  const std::size_t nout = weights.dim(0), nin = weights.dim(1);
  require(input.size() == nin, "fully_connected: expects " + std::to_string(nin) + " input features, got " +
                                   std::to_string(input.size()) + " from shape " + shape_string(input.shape()));
  require(bias.shape() == Tensor::Shape{nout}, "fully_connected: bias shape " + shape_string(bias.shape()) +
                                                   " does not match " + std::to_string(nout) + " outputs");
  Tensor out({nout});
  const float* x = input.data().data();
  for (std::size_t o = 0; o < nout; ++o) {
    const float* row = weights.data().data() + o * nin;
    float acc = 0.0f;
    for (std::size_t i = 0; i < nin; ++i) acc += row[i] * x[i];
    out[o] = acc + bias[o];
  }
  return out;
}

FullyConnectedGrads fully_connected_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output) {
  const std::size_t nout = weights.dim(0), nin = weights.dim(1);
  require(grad_output.shape() == Tensor::Shape{nout}, "fully_connected_backward: gradient shape mismatch");
  FullyConnectedGrads g{Tensor(input.shape()), Tensor(weights.shape()), grad_output};
  const float* x = input.data().data();
  float* gi = g.input.data().data();
  for (std::size_t o = 0; o < nout; ++o) {
    const float go = grad_output[o];
    const float* row = weights.data().data() + o * nin;
    float* grow = g.weights.data().data() + o * nin;
    for (std::size_t i = 0; i < nin; ++i) {
      grow[i] = go * x[i];
      gi[i] += go * row[i];
    }
  }
  return g;
}

}  // namespace edgeguard::nn
