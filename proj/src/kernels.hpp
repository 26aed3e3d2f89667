#pragma once

// Dense kernels for the layer types of the segmentation network. All loops
// use a fixed traversal order so results are bit-reproducible.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tta/tensor.hpp"

namespace tta::kernels {

/// Stride-1 same-padded 3-D convolution with a cubic odd kernel.
Tensor conv3d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape);
/// Accumulates in double; returns float weight and bias gradients.
void conv3d_backward_params(const Tensor& grad_out, const Tensor& input, Tensor& grad_weight, Tensor& grad_bias);

/// 2x2x2 max pooling; `argmax` receives the winning offset (0..7) per output voxel.
Tensor max_pool2_forward(const Tensor& input, std::vector<std::uint8_t>& argmax);
Tensor max_pool2_backward(const Tensor& grad_out, const std::vector<std::uint8_t>& argmax, const Shape& input_shape);

Tensor upsample2_forward(const Tensor& input);
Tensor upsample2_backward(const Tensor& grad_out);

/// Channel concatenation of two 5-D tensors with equal batch and spatial extents.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& grad, std::size_t channels_a, Tensor& grad_a, Tensor& grad_b);

Tensor softmax_channels(const Tensor& logits);
Tensor softmax_backward(const Tensor& probabilities, const Tensor& grad_out);

/// Per-channel mean and biased variance over batch and space (double accumulation).
void channel_moments(const Tensor& x, std::vector<double>& mean, std::vector<double>& var);

}  // namespace tta::kernels
