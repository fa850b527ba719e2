#pragma once

#include "c3d/nn_ops.hpp"

// Direct-loop serial kernels. They define the semantics the optimized kernels
// in nn_ops must reproduce, and serve as the baseline in the kernel benchmark.
namespace c3d::reference {

[[nodiscard]] Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                                    const ConvKernelSpec& spec);
[[nodiscard]] ConvGrads conv3d_backward(const Tensor& input, const Tensor& weights,
                                        const Tensor& grad_out, const ConvKernelSpec& spec);
[[nodiscard]] PoolResult maxpool3d_forward(const Tensor& input, const PoolSpec& spec);
[[nodiscard]] Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
[[nodiscard]] LinearGrads linear_backward(const Tensor& input, const Tensor& weights,
                                          const Tensor& grad_out);

}  // namespace c3d::reference
