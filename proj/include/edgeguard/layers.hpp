#pragma once

#include <cstddef>

#include "edgeguard/tensor.hpp"

// Forward and backward kernels for the fixed layer set. Shapes must match
// exactly; there is no broadcasting. Kernels throw ConfigError on shape
// mismatch and never keep state between calls.
namespace edgeguard::nn {

// Output extent of a valid (zero padded) convolution along one axis.
std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

// Output extent of ceil-mode pooling along one axis. The last window may be
// truncated at the border but always starts inside the input.
std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride);

// Cross-correlation of input [C_in,H,W] with weights [C_out,C_in,KH,KW] plus
// bias [C_out]. Borders are zero padded.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
              std::size_t padding);

struct Conv2dGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output,
                            std::size_t stride, std::size_t padding);

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride);
// Gradient flows to the first maximum of each window in row-major scan order.
Tensor maxpool2d_backward(const Tensor& input, std::size_t kernel, std::size_t stride, const Tensor& grad_output);

// Per-channel leaky slope on axis 0: x if x > 0 else slope[c] * x.
Tensor prelu(const Tensor& input, const Tensor& slopes);

struct PreluGrads {
  Tensor input;
  Tensor slopes;
};
PreluGrads prelu_backward(const Tensor& input, const Tensor& slopes, const Tensor& grad_output);

// Numerically stable softmax along `axis` (max subtracted before exp).
Tensor softmax(const Tensor& input, std::size_t axis);
Tensor softmax_backward(const Tensor& output, std::size_t axis, const Tensor& grad_output);

// Scales the whole tensor to unit Euclidean norm. Throws DegenerateInputError
// on an all-zero input.
Tensor l2_normalize(const Tensor& input);
Tensor l2_normalize_backward(const Tensor& input, const Tensor& grad_output);

// Flattens the input and applies weights [out,in] and bias [out]; output is [out].
Tensor fully_connected(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct FullyConnectedGrads {
  Tensor input;  // same shape as the forward input
  Tensor weights;
  Tensor bias;
};
FullyConnectedGrads fully_connected_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output);

}  // namespace edgeguard::nn
