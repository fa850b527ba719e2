#include "c3d/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

#include "c3d/error.hpp"
#include "c3d/parallel.hpp"

namespace c3d {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.shape().rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         t.shape().str());
    }
}

struct ConvGeometry {
    std::size_t n, ci, co, len, h, w, d, k, pt, ps;
    [[nodiscard]] std::size_t rows() const { return ci * d * k * k; }
    [[nodiscard]] std::size_t plane() const { return h * w; }
};

ConvGeometry conv_geometry(const Shape& in, const ConvKernelSpec& spec) {
    return {in[0], in[1], spec.out_channels, in[2], in[3], in[4], spec.temporal_depth,
            spec.spatial_size, spec.temporal_pad(), spec.spatial_pad()};
}

void check_conv_args(const Tensor& input, const Tensor& weights, const ConvKernelSpec& spec) {
    spec.validate();
    require_rank(input, 5, "conv3d input");
    if (input.dim(1) != spec.in_channels) {
        throw ShapeError("conv3d: input has " + std::to_string(input.dim(1)) +
                         " channels, kernel expects " + std::to_string(spec.in_channels));
    }
    if (weights.shape() != spec.weight_shape()) {
        throw ShapeError("conv3d: weights " + weights.shape().str() + " do not match " +
                         spec.weight_shape().str());
    }
}

// Gathers the receptive fields of every output pixel of one output frame into
// a (ci*d*k*k) x (h*w) matrix. Out-of-range taps read as zero.
void im2col_frame(const double* sample, const ConvGeometry& g, std::size_t t, double* col) {
    const std::size_t hw = g.plane();
    for (std::size_t c = 0; c < g.ci; ++c) {
        for (std::size_t dt = 0; dt < g.d; ++dt) {
            const auto src_t = static_cast<std::ptrdiff_t>(t + dt) - static_cast<std::ptrdiff_t>(g.pt);
            const bool t_ok = src_t >= 0 && src_t < static_cast<std::ptrdiff_t>(g.len);
            const double* frame = sample + (c * g.len + (t_ok ? src_t : 0)) * hw;
            for (std::size_t dy = 0; dy < g.k; ++dy) {
                for (std::size_t dx = 0; dx < g.k; ++dx) {
                    double* row = col + (((c * g.d + dt) * g.k + dy) * g.k + dx) * hw;
                    if (!t_ok) {
                        std::fill(row, row + hw, 0.0);
                        continue;
                    }
                    const auto off_x = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(g.ps);
                    const std::ptrdiff_t x_lo =
                        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.w), std::max<std::ptrdiff_t>(0, -off_x));
                    const std::ptrdiff_t x_hi =
                        std::max<std::ptrdiff_t>(x_lo, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.w),
                                                                 static_cast<std::ptrdiff_t>(g.w) - off_x));
                    for (std::size_t y = 0; y < g.h; ++y) {
                        const auto sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(g.ps);
                        double* dst = row + y * g.w;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.h)) {
                            std::fill(dst, dst + g.w, 0.0);
                            continue;
                        }
                        const double* src = frame + static_cast<std::size_t>(sy) * g.w;
                        std::fill(dst, dst + x_lo, 0.0);
                        for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) dst[x] = src[x + off_x];
                        std::fill(dst + x_hi, dst + g.w, 0.0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col_frame: scatters a column matrix back into the sample.
void col2im_frame(const double* col, const ConvGeometry& g, std::size_t t, double* sample) {
    const std::size_t hw = g.plane();
    for (std::size_t c = 0; c < g.ci; ++c) {
        for (std::size_t dt = 0; dt < g.d; ++dt) {
            const auto src_t = static_cast<std::ptrdiff_t>(t + dt) - static_cast<std::ptrdiff_t>(g.pt);
            if (src_t < 0 || src_t >= static_cast<std::ptrdiff_t>(g.len)) continue;
            double* frame = sample + (c * g.len + static_cast<std::size_t>(src_t)) * hw;
            for (std::size_t dy = 0; dy < g.k; ++dy) {
                for (std::size_t dx = 0; dx < g.k; ++dx) {
                    const double* row = col + (((c * g.d + dt) * g.k + dy) * g.k + dx) * hw;
                    const auto off_x = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(g.ps);
                    const std::ptrdiff_t x_lo =
                        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.w), std::max<std::ptrdiff_t>(0, -off_x));
                    const std::ptrdiff_t x_hi =
                        std::max<std::ptrdiff_t>(x_lo, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.w),
                                                                 static_cast<std::ptrdiff_t>(g.w) - off_x));
                    for (std::size_t y = 0; y < g.h; ++y) {
                        const auto sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(g.ps);
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                        double* dst = frame + static_cast<std::size_t>(sy) * g.w;
                        const double* src = row + y * g.w;
                        for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) dst[x + off_x] += src[x];
                    }
                }
            }
        }
    }
}

// Input gradient for one sample; frames accumulate in increasing t.
void backward_input_sample(const ConvGeometry& g, const Eigen::Map<const RowMat>& wm,
                           const double* grad_out_sample, double* grad_in_sample, RowMat& dcol) {
    const std::size_t hw = g.plane();
    for (std::size_t t = 0; t < g.len; ++t) {
        ConstStridedMap go(grad_out_sample + t * hw, static_cast<Eigen::Index>(g.co),
                           static_cast<Eigen::Index>(hw),
                           Eigen::OuterStride<>(static_cast<Eigen::Index>(g.len * hw)));
        dcol.noalias() = wm.transpose() * go;
        col2im_frame(dcol.data(), g, t, grad_in_sample);
    }
}

}  // namespace

Shape ConvKernelSpec::weight_shape() const {
    return Shape({static_cast<std::int64_t>(out_channels), static_cast<std::int64_t>(in_channels),
                  static_cast<std::int64_t>(temporal_depth), static_cast<std::int64_t>(spatial_size),
                  static_cast<std::int64_t>(spatial_size)});
}

Shape ConvKernelSpec::bias_shape() const {
    return Shape({static_cast<std::int64_t>(out_channels)});
}

std::size_t ConvKernelSpec::param_count() const noexcept {
    return out_channels * in_channels * temporal_depth * spatial_size * spatial_size + out_channels;
}

void ConvKernelSpec::validate() const {
    if (out_channels == 0 || in_channels == 0) throw ShapeError("conv3d: zero channel count");
    if (temporal_depth % 2 == 0 || spatial_size % 2 == 0) {
        throw ShapeError("conv3d: kernel extents must be odd, got d=" +
                         std::to_string(temporal_depth) + " k=" + std::to_string(spatial_size));
    }
}

void PoolSpec::validate() const {
    if (kt == 0 || kh == 0 || kw == 0) throw ShapeError("maxpool3d: zero kernel extent");
}

Shape PoolSpec::output_shape(const Shape& in) const {
    validate();
    if (in.rank() != 5) throw ShapeError("maxpool3d: expected 5D input, got " + in.str());
    auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
    return Shape(std::vector<std::size_t>{in[0], in[1], ceil_div(in[2], kt), ceil_div(in[3], kh),
                                          ceil_div(in[4], kw)});
}

Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      const ConvKernelSpec& spec) {
    check_conv_args(input, weights, spec);
    if (bias.shape() != spec.bias_shape()) {
        throw ShapeError("conv3d: bias " + bias.shape().str() + " does not match " +
                         spec.bias_shape().str());
    }
    const ConvGeometry g = conv_geometry(input.shape(), spec);
    Tensor out(Shape(std::vector<std::size_t>{g.n, g.co, g.len, g.h, g.w}));
    const std::size_t hw = g.plane();
    const Eigen::Map<const RowMat> wm(weights.data(), static_cast<Eigen::Index>(g.co),
                                      static_cast<Eigen::Index>(g.rows()));
    const auto jobs = static_cast<std::ptrdiff_t>(g.n * g.len);

#pragma omp parallel
    {
        RowMat col(static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(hw));
#pragma omp for schedule(static)
        for (std::ptrdiff_t job = 0; job < jobs; ++job) {
            const std::size_t s = static_cast<std::size_t>(job) / g.len;
            const std::size_t t = static_cast<std::size_t>(job) % g.len;
            im2col_frame(input.data() + s * g.ci * g.len * hw, g, t, col.data());
            StridedMap dst(out.data() + (s * g.co * g.len + t) * hw, static_cast<Eigen::Index>(g.co),
                           static_cast<Eigen::Index>(hw),
                           Eigen::OuterStride<>(static_cast<Eigen::Index>(g.len * hw)));
            dst.noalias() = wm * col;
            for (std::size_t o = 0; o < g.co; ++o) {
                dst.row(static_cast<Eigen::Index>(o)).array() += bias[o];
            }
        }
    }
    return out;
}

ConvGrads conv3d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                          const ConvKernelSpec& spec, bool need_input_grad) {
    check_conv_args(input, weights, spec);
    const ConvGeometry g = conv_geometry(input.shape(), spec);
    const Shape out_shape(std::vector<std::size_t>{g.n, g.co, g.len, g.h, g.w});
    if (grad_out.shape() != out_shape) {
        throw ShapeError("conv3d backward: grad_out " + grad_out.shape().str() + " expected " +
                         out_shape.str());
    }
    const std::size_t hw = g.plane();
    const auto rows = static_cast<Eigen::Index>(g.rows());
    const auto co = static_cast<Eigen::Index>(g.co);
    const Eigen::Map<const RowMat> wm(weights.data(), co, rows);

    ConvGrads grads{need_input_grad ? Tensor(input.shape()) : Tensor(), Tensor(weights.shape()),
                    Tensor(spec.bias_shape())};

    // Per-sample weight gradients are reduced in sample order afterwards so the
    // result does not depend on the thread count.
    const bool threaded = max_threads() > 1 && g.n > 1;
    std::vector<RowMat> partials(threaded ? g.n : 1, RowMat::Zero(co, rows));
    Eigen::Map<RowMat> gw(grads.weights.data(), co, rows);
    const auto samples = static_cast<std::ptrdiff_t>(g.n);

#pragma omp parallel if (threaded)
    {
        RowMat col(rows, static_cast<Eigen::Index>(hw));
        RowMat dcol(rows, static_cast<Eigen::Index>(hw));
#pragma omp for schedule(static)
        for (std::ptrdiff_t si = 0; si < samples; ++si) {
            const auto s = static_cast<std::size_t>(si);
            RowMat& part = partials[threaded ? s : 0];
            part.setZero();
            const double* in_s = input.data() + s * g.ci * g.len * hw;
            const double* go_s = grad_out.data() + s * g.co * g.len * hw;
            for (std::size_t t = 0; t < g.len; ++t) {
                im2col_frame(in_s, g, t, col.data());
                ConstStridedMap go(go_s + t * hw, co, static_cast<Eigen::Index>(hw),
                                   Eigen::OuterStride<>(static_cast<Eigen::Index>(g.len * hw)));
                part.noalias() += go * col.transpose();
            }
            if (need_input_grad) {
                backward_input_sample(g, wm, go_s, grads.input.data() + s * g.ci * g.len * hw, dcol);
            }
            if (!threaded) gw += part;
        }
    }
    if (threaded) {
        for (const RowMat& part : partials) gw += part;
    }

    for (std::size_t s = 0; s < g.n; ++s) {
        for (std::size_t o = 0; o < g.co; ++o) {
            const double* p = grad_out.data() + (s * g.co + o) * g.len * hw;
            double acc = 0.0;
            for (std::size_t i = 0; i < g.len * hw; ++i) acc += p[i];
            grads.bias[o] += acc;
        }
    }
    return grads;
}

Tensor conv3d_backward_input(const Tensor& weights, const Tensor& grad_out,
                             const ConvKernelSpec& spec) {
    spec.validate();
    require_rank(grad_out, 5, "conv3d transpose input");
    if (weights.shape() != spec.weight_shape()) {
        throw ShapeError("conv3d: weights " + weights.shape().str() + " do not match " +
                         spec.weight_shape().str());
    }
    if (grad_out.dim(1) != spec.out_channels) {
        throw ShapeError("conv3d transpose: signal has " + std::to_string(grad_out.dim(1)) +
                         " channels, kernel produces " + std::to_string(spec.out_channels));
    }
    const Shape& gs = grad_out.shape();
    const Shape in_shape(std::vector<std::size_t>{gs[0], spec.in_channels, gs[2], gs[3], gs[4]});
    const ConvGeometry g = conv_geometry(in_shape, spec);
    const std::size_t hw = g.plane();
    const Eigen::Map<const RowMat> wm(weights.data(), static_cast<Eigen::Index>(g.co),
                                      static_cast<Eigen::Index>(g.rows()));
    Tensor grad_in(in_shape);
    const auto samples = static_cast<std::ptrdiff_t>(g.n);
#pragma omp parallel
    {
        RowMat dcol(static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(hw));
#pragma omp for schedule(static)
        for (std::ptrdiff_t si = 0; si < samples; ++si) {
            const auto s = static_cast<std::size_t>(si);
            backward_input_sample(g, wm, grad_out.data() + s * g.co * g.len * hw,
                                  grad_in.data() + s * g.ci * g.len * hw, dcol);
        }
    }
    return grad_in;
}

PoolResult maxpool3d_forward(const Tensor& input, const PoolSpec& spec) {
    const Shape out_shape = spec.output_shape(input.shape());
    const Shape& in = input.shape();
    PoolResult r{Tensor(out_shape), PoolSwitches{in, out_shape, std::vector<std::size_t>(out_shape.count())}};
    const std::size_t L = in[2], H = in[3], W = in[4];
    const std::size_t oL = out_shape[2], oH = out_shape[3], oW = out_shape[4];
    const auto planes = static_cast<std::ptrdiff_t>(in[0] * in[1]);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pi = 0; pi < planes; ++pi) {
        const auto p = static_cast<std::size_t>(pi);
        const std::size_t in_base = p * L * H * W;
        std::size_t out_i = p * oL * oH * oW;
        for (std::size_t ot = 0; ot < oL; ++ot) {
            const std::size_t t1 = std::min(L, (ot + 1) * spec.kt);
            for (std::size_t oy = 0; oy < oH; ++oy) {
                const std::size_t y1 = std::min(H, (oy + 1) * spec.kh);
                for (std::size_t ox = 0; ox < oW; ++ox, ++out_i) {
                    const std::size_t x1 = std::min(W, (ox + 1) * spec.kw);
                    std::size_t best = in_base + ((ot * spec.kt) * H + oy * spec.kh) * W + ox * spec.kw;
                    double best_v = input[best];
                    // Scan in increasing flat offset; strict > keeps the lowest index on ties.
                    for (std::size_t t = ot * spec.kt; t < t1; ++t) {
                        for (std::size_t y = oy * spec.kh; y < y1; ++y) {
                            for (std::size_t x = ox * spec.kw; x < x1; ++x) {
                                const std::size_t idx = in_base + (t * H + y) * W + x;
                                if (input[idx] > best_v) {
                                    best_v = input[idx];
                                    best = idx;
                                }
                            }
                        }
                    }
                    r.output[out_i] = best_v;
                    r.switches.index[out_i] = best;
                }
            }
        }
    }
    return r;
}

Tensor maxpool3d_backward(const PoolSwitches& switches, const Tensor& grad_out,
                          const Shape& input_shape) {
    if (grad_out.shape() != switches.output_shape) {
        throw ShapeError("maxpool3d backward: grad_out " + grad_out.shape().str() +
                         " does not match pooled shape " + switches.output_shape.str());
    }
    if (input_shape != switches.input_shape) {
        throw ShapeError("maxpool3d backward: input shape " + input_shape.str() +
                         " does not match recorded " + switches.input_shape.str());
    }
    Tensor grad_in(input_shape);
    // Windows never overlap, so each input position receives at most one value.
    for (std::size_t i = 0; i < switches.index.size(); ++i) {
        grad_in[switches.index[i]] += grad_out[i];
    }
    return grad_in;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
    if (input.shape() != grad_out.shape()) {
        throw ShapeError("relu backward: shapes " + input.shape().str() + " and " +
                         grad_out.shape().str() + " differ");
    }
    Tensor g(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
}

namespace {

void check_linear(const Tensor& input, const Tensor& weights) {
    require_rank(input, 2, "linear input");
    require_rank(weights, 2, "linear weights");
    if (input.dim(1) != weights.dim(1)) {
        throw ShapeError("linear: input width " + std::to_string(input.dim(1)) +
                         " does not match weight width " + std::to_string(weights.dim(1)));
    }
}

}  // namespace

Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    check_linear(input, weights);
    const auto n = static_cast<Eigen::Index>(input.dim(0));
    const auto din = static_cast<Eigen::Index>(input.dim(1));
    const auto dout = static_cast<Eigen::Index>(weights.dim(0));
    if (bias.shape() != Shape({dout})) {
        throw ShapeError("linear: bias " + bias.shape().str() + " expected (" +
                         std::to_string(dout) + ")");
    }
    Tensor out(Shape({n, dout}));
    const Eigen::Map<const RowMat> w(weights.data(), dout, din);
    const Eigen::Map<const Eigen::VectorXd> b(bias.data(), dout);
    // Row by row, so a sample's output does not depend on what else is in the batch.
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Map<Eigen::VectorXd> y(out.data() + i * dout, dout);
        y.noalias() = w * Eigen::Map<const Eigen::VectorXd>(input.data() + i * din, din);
        y += b;
    }
    return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
    check_linear(input, weights);
    const auto n = static_cast<Eigen::Index>(input.dim(0));
    const auto din = static_cast<Eigen::Index>(input.dim(1));
    const auto dout = static_cast<Eigen::Index>(weights.dim(0));
    if (grad_out.shape() != Shape({n, dout})) {
        throw ShapeError("linear backward: grad_out " + grad_out.shape().str() + " expected (" +
                         std::to_string(n) + "," + std::to_string(dout) + ")");
    }
    LinearGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor(Shape({dout}))};
    const Eigen::Map<const RowMat> x(input.data(), n, din);
    const Eigen::Map<const RowMat> w(weights.data(), dout, din);
    const Eigen::Map<const RowMat> gy(grad_out.data(), n, dout);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Map<Eigen::VectorXd>(g.input.data() + i * din, din).noalias() =
            w.transpose() * gy.row(i).transpose();
    }
    Eigen::Map<RowMat>(g.weights.data(), dout, din).noalias() = gy.transpose() * x;
    for (Eigen::Index j = 0; j < dout; ++j) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) acc += gy(i, j);
        g.bias[static_cast<std::size_t>(j)] = acc;
    }
    return g;
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 2, "softmax logits");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    Tensor p(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.data() + i * c;
        double* q = p.data() + i * c;
        const double m = *std::max_element(z, z + c);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += (q[j] = std::exp(z[j] - m));
        for (std::size_t j = 0; j < c; ++j) q[j] /= sum;
    }
    return p;
}

SoftmaxResult softmax_xent(const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "softmax logits");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (labels.size() != n) {
        throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw ConfigError("softmax_xent: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(c) + ")");
        }
    }
    SoftmaxResult r{0.0, Tensor(logits.shape()), Tensor(logits.shape())};
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.data() + i * c;
        const double m = *std::max_element(z, z + c);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - m);
        const double log_sum = std::log(sum);
        const auto y = static_cast<std::size_t>(labels[i]);
        r.loss -= (z[y] - m - log_sum) * inv_n;
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(z[j] - m - log_sum);
            r.probs[i * c + j] = p;
            r.grad_logits[i * c + j] = (p - (j == y ? 1.0 : 0.0)) * inv_n;
        }
    }
    return r;
}

}  // namespace c3d
