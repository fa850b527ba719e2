#include "c3d/reference_ops.hpp"

#include <cstddef>
#include <limits>

#include "c3d/error.hpp"

namespace c3d::reference {
namespace {

using Index = std::ptrdiff_t;

// Calls fn(n, co, t, y, x, ci, dt, dy, dx, in_offset) for every in-bounds tap.
template <typename Fn>
void for_each_tap(const Shape& in, const ConvKernelSpec& spec, Fn&& fn) {
    const Index N = static_cast<Index>(in[0]), C = static_cast<Index>(in[1]);
    const Index L = static_cast<Index>(in[2]), H = static_cast<Index>(in[3]),
                W = static_cast<Index>(in[4]);
    const Index CO = static_cast<Index>(spec.out_channels);
    const Index D = static_cast<Index>(spec.temporal_depth), K = static_cast<Index>(spec.spatial_size);
    const Index pt = static_cast<Index>(spec.temporal_pad()), ps = static_cast<Index>(spec.spatial_pad());
    for (Index n = 0; n < N; ++n)
        for (Index o = 0; o < CO; ++o)
            for (Index t = 0; t < L; ++t)
                for (Index y = 0; y < H; ++y)
                    for (Index x = 0; x < W; ++x)
                        for (Index c = 0; c < C; ++c)
                            for (Index dt = 0; dt < D; ++dt) {
                                const Index st = t + dt - pt;
                                if (st < 0 || st >= L) continue;
                                for (Index dy = 0; dy < K; ++dy) {
                                    const Index sy = y + dy - ps;
                                    if (sy < 0 || sy >= H) continue;
                                    for (Index dx = 0; dx < K; ++dx) {
                                        const Index sx = x + dx - ps;
                                        if (sx < 0 || sx >= W) continue;
                                        const auto out_off = static_cast<std::size_t>(
                                            (((n * CO + o) * L + t) * H + y) * W + x);
                                        const auto in_off = static_cast<std::size_t>(
                                            (((n * C + c) * L + st) * H + sy) * W + sx);
                                        const auto w_off = static_cast<std::size_t>(
                                            (((o * C + c) * D + dt) * K + dy) * K + dx);
                                        fn(out_off, in_off, w_off);
                                    }
                                }
                            }
}

}  // namespace

Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      const ConvKernelSpec& spec) {
    spec.validate();
    if (input.shape().rank() != 5 || input.dim(1) != spec.in_channels ||
        weights.shape() != spec.weight_shape() || bias.shape() != spec.bias_shape()) {
        throw ShapeError("reference conv3d: inconsistent shapes");
    }
    const Shape& in = input.shape();
    Tensor out(Shape(std::vector<std::size_t>{in[0], spec.out_channels, in[2], in[3], in[4]}));
    const std::size_t per_channel = in[2] * in[3] * in[4];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = bias[(i / per_channel) % spec.out_channels];
    for_each_tap(in, spec, [&](std::size_t o, std::size_t i, std::size_t w) {
        out[o] += input[i] * weights[w];
    });
    return out;
}

ConvGrads conv3d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                          const ConvKernelSpec& spec) {
    const Shape& in = input.shape();
    ConvGrads g{Tensor(in), Tensor(weights.shape()), Tensor(spec.bias_shape())};
    const std::size_t per_channel = in[2] * in[3] * in[4];
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        g.bias[(i / per_channel) % spec.out_channels] += grad_out[i];
    }
    for_each_tap(in, spec, [&](std::size_t o, std::size_t i, std::size_t w) {
        g.input[i] += grad_out[o] * weights[w];
        g.weights[w] += grad_out[o] * input[i];
    });
    return g;
}

PoolResult maxpool3d_forward(const Tensor& input, const PoolSpec& spec) {
    const Shape out_shape = spec.output_shape(input.shape());
    const Shape& in = input.shape();
    PoolResult r{Tensor(out_shape, -std::numeric_limits<double>::infinity()),
                 PoolSwitches{in, out_shape, std::vector<std::size_t>(out_shape.count())}};
    std::vector<bool> seen(out_shape.count(), false);
    // Visit inputs in flat order; each joins exactly one window.
    for (std::size_t n = 0; n < in[0]; ++n)
        for (std::size_t c = 0; c < in[1]; ++c)
            for (std::size_t t = 0; t < in[2]; ++t)
                for (std::size_t y = 0; y < in[3]; ++y)
                    for (std::size_t x = 0; x < in[4]; ++x) {
                        const std::size_t i = input.offset(n, c, t, y, x);
                        const std::size_t o =
                            r.output.offset(n, c, t / spec.kt, y / spec.kh, x / spec.kw);
                        if (!seen[o] || input[i] > r.output[o]) {
                            seen[o] = true;
                            r.output[o] = input[i];
                            r.switches.index[o] = i;
                        }
                    }
    return r;
}

Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    const std::size_t n = input.dim(0), din = input.dim(1), dout = weights.dim(0);
    if (weights.dim(1) != din) throw ShapeError("reference linear: width mismatch");
    Tensor out(Shape(std::vector<std::size_t>{n, dout}));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dout; ++j) {
            double acc = bias[j];
            for (std::size_t k = 0; k < din; ++k) acc += weights[j * din + k] * input[i * din + k];
            out[i * dout + j] = acc;
        }
    return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
    const std::size_t n = input.dim(0), din = input.dim(1), dout = weights.dim(0);
    LinearGrads g{Tensor(input.shape()), Tensor(weights.shape()),
                  Tensor(Shape(std::vector<std::size_t>{dout}))};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dout; ++j) {
            const double gy = grad_out[i * dout + j];
            g.bias[j] += gy;
            for (std::size_t k = 0; k < din; ++k) {
                g.input[i * din + k] += gy * weights[j * din + k];
                g.weights[j * din + k] += gy * input[i * din + k];
            }
        }
    return g;
}

}  // namespace c3d::reference
