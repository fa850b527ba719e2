#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "c3d/tensor.hpp"

namespace c3d {

/// A d x k x k convolution with stride 1 and same-padding. Padding is derived
/// from the kernel extents, never set independently.
struct ConvKernelSpec {
    std::size_t out_channels = 1;
    std::size_t in_channels = 1;
    std::size_t temporal_depth = 3;  // d, odd
    std::size_t spatial_size = 3;    // k, odd

    [[nodiscard]] std::size_t temporal_pad() const noexcept { return (temporal_depth - 1) / 2; }
    [[nodiscard]] std::size_t spatial_pad() const noexcept { return (spatial_size - 1) / 2; }
    [[nodiscard]] Shape weight_shape() const;
    [[nodiscard]] Shape bias_shape() const;
    [[nodiscard]] std::size_t param_count() const noexcept;
    void validate() const;
};

/// Non-overlapping max pooling (stride = kernel) in ceiling mode.
struct PoolSpec {
    std::size_t kt = 2;
    std::size_t kh = 2;
    std::size_t kw = 2;

    /// Output shape for a 5D input; each axis becomes ceil(in / kernel).
    [[nodiscard]] Shape output_shape(const Shape& input) const;
    void validate() const;
};

/// Argmax positions recorded by max pooling, one flat input offset per
/// output element.
struct PoolSwitches {
    Shape input_shape;
    Shape output_shape;
    std::vector<std::size_t> index;
};

struct PoolResult {
    Tensor output;
    PoolSwitches switches;
};

struct ConvGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

struct LinearGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

struct SoftmaxResult {
    double loss = 0.0;
    Tensor probs;
    Tensor grad_logits;
};

// 3D convolution, computed as cross-correlation with zero padding.
[[nodiscard]] Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                                    const ConvKernelSpec& spec);
/// With need_input_grad=false the returned input gradient is left empty.
[[nodiscard]] ConvGrads conv3d_backward(const Tensor& input, const Tensor& weights,
                                        const Tensor& grad_out, const ConvKernelSpec& spec,
                                        bool need_input_grad = true);
/// Gradient with respect to the input only. Doubles as the transposed
/// convolution used when projecting activations back to pixels.
[[nodiscard]] Tensor conv3d_backward_input(const Tensor& weights, const Tensor& grad_out,
                                           const ConvKernelSpec& spec);

[[nodiscard]] PoolResult maxpool3d_forward(const Tensor& input, const PoolSpec& spec);
/// Routes each output gradient to its recorded argmax. Also serves as
/// max-unpooling.
[[nodiscard]] Tensor maxpool3d_backward(const PoolSwitches& switches, const Tensor& grad_out,
                                        const Shape& input_shape);

[[nodiscard]] Tensor relu(const Tensor& input);
[[nodiscard]] Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

[[nodiscard]] Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
[[nodiscard]] LinearGrads linear_backward(const Tensor& input, const Tensor& weights,
                                          const Tensor& grad_out);

/// Row-wise softmax with mean cross-entropy against integer labels.
[[nodiscard]] SoftmaxResult softmax_xent(const Tensor& logits, std::span<const int> labels);
/// Row-wise softmax only.
[[nodiscard]] Tensor softmax(const Tensor& logits);

}  // namespace c3d
