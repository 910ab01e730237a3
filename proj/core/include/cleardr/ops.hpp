#pragma once

#include <cstddef>
#include <span>
#include <utility>

#include "cleardr/tensor.hpp"

namespace cleardr {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Output extents of a convolution; throws ShapeError when the result would be
// empty or the channel counts disagree.
Shape conv2d_output_shape(const Shape& input, const KernelBank& kernels, ConvGeometry geo);

// Cross-correlation with zero padding, bias added per output channel.
Tensor conv2d(const Tensor& input, const KernelBank& kernels, ConvGeometry geo);

// Same as conv2d but without the bias term (the linear part only).
Tensor conv2d_linear(const Tensor& input, const KernelBank& kernels, ConvGeometry geo);

// Exact transpose of conv2d_linear: maps an output-space response back to an
// input of shape input_shape.
Tensor conv2d_adjoint(const Tensor& response, const KernelBank& kernels, ConvGeometry geo, const Shape& input_shape);

struct ConvGrads {
  KernelBank grad_kernels;  // weight and bias gradients
  Tensor grad_input;
};

ConvGrads conv2d_grads(const Tensor& input, const KernelBank& kernels, const Tensor& upstream, ConvGeometry geo);

std::pair<Tensor, GateMask> relu(const Tensor& input);

// Backward of relu: passes upstream where the gate was open.
Tensor relu_backward(const Tensor& upstream, const GateMask& mask);

// Non-padded max pooling. Ties resolve to the lowest flat index in the window.
std::pair<Tensor, SwitchRecord> maxpool(const Tensor& input, std::size_t window, std::size_t stride);

// Scatters each response value to its recorded switch position; the transpose
// of max-pool selection.
Tensor unpool(const Tensor& response, const SwitchRecord& switches);

Tensor global_average_pool(const Tensor& input);

// Transpose of global_average_pool: spreads each value / (h*w) over its plane.
Tensor global_average_pool_backward(const Tensor& upstream, const Shape& input_shape);

struct LossResult {
  float loss = 0.0f;
  Tensor grad;  // d(mean loss)/d(logits)
};

// logits: (n, N, 1, 1). Loss is averaged over the batch.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
LossResult softmax_cross_entropy(const Tensor& logits, std::size_t label);

// Numerically stable softmax over the channel axis of an (n, N, 1, 1) tensor.
Tensor softmax(const Tensor& logits);

}  // namespace cleardr
