#include <cmath>
#include <numeric>
#include <random>

#include "c3d/error.hpp"
#include "c3d/gradcheck.hpp"
#include "c3d/nn_ops.hpp"
#include "c3d/parallel.hpp"
#include "c3d/reference_ops.hpp"
#include "doctest.h"

using namespace c3d;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double sum(const Tensor& t) { return std::accumulate(t.values().begin(), t.values().end(), 0.0); }

}  // namespace

TEST_CASE("conv3d scalar case") {
    const ConvKernelSpec spec{1, 1, 1, 1};
    const Tensor x(Shape{1, 1, 1, 1, 1}, 2.5);
    const Tensor w(Shape{1, 1, 1, 1, 1}, -1.5);
    const Tensor b(Shape{1}, 0.25);
    CHECK(conv3d_forward(x, w, b, spec)[0] == doctest::Approx(2.5 * -1.5 + 0.25));

    const ConvGrads g = conv3d_backward(x, w, Tensor(Shape{1, 1, 1, 1, 1}, 1.0), spec);
    CHECK(g.input[0] == doctest::Approx(-1.5));
    CHECK(g.weights[0] == doctest::Approx(2.5));
    CHECK(g.bias[0] == doctest::Approx(1.0));
}

TEST_CASE("conv3d temporal-only kernel") {
    // Hand-evaluated cross-correlation with one frame of zero padding each side.
    const ConvKernelSpec spec{1, 1, 3, 1};
    const Tensor x(Shape{1, 1, 3, 1, 1}, {1.0, 2.0, 3.0});
    const Tensor w(Shape{1, 1, 3, 1, 1}, {1.0, 0.0, -1.0});
    const Tensor out = conv3d_forward(x, w, Tensor(Shape{1}), spec);
    CHECK(out[0] == doctest::Approx(-2.0));
    CHECK(out[1] == doctest::Approx(-2.0));
    CHECK(out[2] == doctest::Approx(2.0));
    CHECK(reference::conv3d_forward(x, w, Tensor(Shape{1}), spec) == out);
}

TEST_CASE("conv3d preserves extents on the full-size first layer") {
    const ConvKernelSpec spec{64, 3, 3, 3};
    const Tensor x(Shape{1, 3, 16, 112, 112}, 0.5);
    const Tensor w = tensor_random_init(spec.weight_shape(), UniformFanIn{}, 1);
    const Tensor out = conv3d_forward(x, w, Tensor(spec.bias_shape()), spec);
    CHECK(out.shape() == Shape{1, 64, 16, 112, 112});
}

TEST_CASE("conv3d rejects channel and kernel mismatches") {
    const ConvKernelSpec spec{2, 3, 3, 3};
    const Tensor w(spec.weight_shape());
    CHECK_THROWS_AS((void)conv3d_forward(Tensor(Shape{1, 2, 4, 4, 4}), w, Tensor(spec.bias_shape()), spec), ShapeError);
    const ConvKernelSpec even{2, 3, 2, 3};
    CHECK_THROWS_AS(even.validate(), ShapeError);
    CHECK_THROWS_AS((void)conv3d_backward(Tensor(Shape{1, 3, 4, 4, 4}), w, Tensor(Shape{1, 2, 4, 4, 3}), spec),
                    ShapeError);
}

TEST_CASE("optimized conv3d matches the direct-loop reference") {
    std::mt19937_64 rng(7);
    struct Case {
        Shape in;
        ConvKernelSpec spec;
    };
    const Case cases[] = {
        {Shape{2, 3, 5, 6, 7}, {4, 3, 3, 3}},  {Shape{1, 2, 4, 5, 5}, {3, 2, 1, 3}},
        {Shape{1, 1, 3, 2, 2}, {2, 1, 5, 5}},  {Shape{3, 2, 2, 1, 9}, {2, 2, 7, 3}},
        {Shape{1, 4, 6, 3, 4}, {5, 4, 3, 1}},  {Shape{2, 1, 1, 1, 1}, {1, 1, 3, 7}},
    };
    for (const auto& c : cases) {
        CAPTURE(c.in.str());
        const Tensor x = random_tensor(c.in, rng);
        const Tensor w = random_tensor(c.spec.weight_shape(), rng);
        const Tensor b = random_tensor(c.spec.bias_shape(), rng);
        CHECK(max_abs_diff(conv3d_forward(x, w, b, c.spec), reference::conv3d_forward(x, w, b, c.spec)) < 1e-12);

        const Tensor go = random_tensor(Shape(std::vector<std::size_t>{c.in[0], c.spec.out_channels, c.in[2],
                                                                       c.in[3], c.in[4]}),
                                        rng);
        const ConvGrads fast = conv3d_backward(x, w, go, c.spec);
        const ConvGrads slow = reference::conv3d_backward(x, w, go, c.spec);
        CHECK(max_abs_diff(fast.input, slow.input) < 1e-12);
        CHECK(max_abs_diff(fast.weights, slow.weights) < 1e-12);
        CHECK(max_abs_diff(fast.bias, slow.bias) < 1e-12);
        CHECK(max_abs_diff(conv3d_backward_input(w, go, c.spec), slow.input) < 1e-12);
    }
}

TEST_CASE("conv3d backward: zero upstream gradient gives zero gradients") {
    std::mt19937_64 rng(3);
    const ConvKernelSpec spec{3, 2, 3, 3};
    const Tensor x = random_tensor(Shape{2, 2, 4, 5, 5}, rng);
    const Tensor w = random_tensor(spec.weight_shape(), rng);
    const ConvGrads g = conv3d_backward(x, w, Tensor(Shape{2, 3, 4, 5, 5}), spec);
    for (const Tensor* t : {&g.input, &g.weights, &g.bias}) {
        for (double v : t->values()) CHECK(v == 0.0);
    }
}

TEST_CASE("conv3d is linear in its input when bias is zero") {
    std::mt19937_64 rng(5);
    const ConvKernelSpec spec{3, 2, 3, 3};
    const Tensor w = random_tensor(spec.weight_shape(), rng);
    const Tensor b(spec.bias_shape());
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor(Shape{1, 2, 4, 5, 6}, rng);
        const Tensor y = random_tensor(x.shape(), rng);
        const double alpha = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
        Tensor ax = x, xy = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            ax[i] *= alpha;
            xy[i] += y[i];
        }
        const Tensor fx = conv3d_forward(x, w, b, spec), fy = conv3d_forward(y, w, b, spec);
        const Tensor fax = conv3d_forward(ax, w, b, spec), fxy = conv3d_forward(xy, w, b, spec);
        for (std::size_t i = 0; i < fx.size(); ++i) {
            CHECK(fax[i] == doctest::Approx(alpha * fx[i]).epsilon(1e-12));
            CHECK(fxy[i] == doctest::Approx(fx[i] + fy[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("temporal receptive field of conv3d") {
    std::mt19937_64 rng(9);
    for (std::size_t d : {1u, 3u, 5u, 7u}) {
        const ConvKernelSpec spec{2, 2, d, 3};
        const Tensor w = random_tensor(spec.weight_shape(), rng);
        const Tensor b = random_tensor(spec.bias_shape(), rng);
        const Tensor x = random_tensor(Shape{1, 2, 10, 4, 4}, rng);
        const Tensor base = conv3d_forward(x, w, b, spec);
        for (std::size_t t = 0; t < 10; ++t) {
            Tensor xp = x;
            for (std::size_t c = 0; c < 2; ++c)
                for (std::size_t y = 0; y < 4; ++y)
                    for (std::size_t z = 0; z < 4; ++z) xp.at(0, c, t, y, z) += 1.0;
            const Tensor moved = conv3d_forward(xp, w, b, spec);
            const auto half = static_cast<std::ptrdiff_t>((d - 1) / 2);
            for (std::size_t o = 0; o < 10; ++o) {
                bool changed = false;
                for (std::size_t c = 0; c < 2; ++c)
                    for (std::size_t y = 0; y < 4; ++y)
                        for (std::size_t z = 0; z < 4; ++z)
                            changed |= moved.at(0, c, o, y, z) != base.at(0, c, o, y, z);
                const auto dist = std::abs(static_cast<std::ptrdiff_t>(o) - static_cast<std::ptrdiff_t>(t));
                if (dist > half) CHECK_FALSE(changed);
                if (d == 1) CHECK(changed == (o == t));
            }
        }
    }
}

TEST_CASE("maxpool3d shapes use ceiling mode") {
    const PoolSpec pool1{1, 2, 2};
    CHECK(pool1.output_shape(Shape{1, 64, 16, 112, 112}) == Shape{1, 64, 16, 56, 56});
    const PoolSpec pool{2, 2, 2};
    CHECK(pool.output_shape(Shape{1, 1, 2, 7, 7}) == Shape{1, 1, 1, 4, 4});
    CHECK(pool.output_shape(Shape{1, 1, 1, 1, 1}) == Shape{1, 1, 1, 1, 1});
}

TEST_CASE("maxpool3d ties resolve to the lowest flat index") {
    const Tensor x(Shape{1, 1, 2, 3, 3}, 4.0);
    const PoolResult r = maxpool3d_forward(x, PoolSpec{2, 2, 2});
    for (double v : r.output.values()) CHECK(v == 4.0);
    // Window starts: (0,0,0), (0,0,2), (0,2,0), (0,2,2) in (t,y,x).
    CHECK(r.switches.index == std::vector<std::size_t>{0, 2, 6, 8});
    CHECK(reference::maxpool3d_forward(x, PoolSpec{2, 2, 2}).switches.index == r.switches.index);
}

TEST_CASE("maxpool3d matches reference and conserves routed gradient") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const Shape s(std::vector<std::size_t>{2, 3, 1 + rng() % 6, 1 + rng() % 9, 1 + rng() % 9});
        const Tensor x = random_tensor(s, rng);
        const PoolSpec spec{1 + rng() % 3, 1 + rng() % 3, 1 + rng() % 3};
        const PoolResult fast = maxpool3d_forward(x, spec);
        const PoolResult slow = reference::maxpool3d_forward(x, spec);
        CHECK(fast.output == slow.output);
        CHECK(fast.switches.index == slow.switches.index);

        const Tensor go = random_tensor(fast.output.shape(), rng);
        const Tensor gi = maxpool3d_backward(fast.switches, go, s);
        CHECK(sum(gi) == doctest::Approx(sum(go)).epsilon(1e-12));
        std::size_t nonzero = 0;
        for (double v : gi.values()) nonzero += v != 0.0;
        CHECK(nonzero <= go.size());
    }
}

TEST_CASE("maxpool3d backward with unit gradient marks each argmax once") {
    const Tensor x(Shape{1, 1, 2, 2, 2}, {0.1, 0.9, 0.3, 0.2, 0.5, 0.4, 0.8, 0.7});
    const PoolResult r = maxpool3d_forward(x, PoolSpec{2, 2, 2});
    const Tensor g = maxpool3d_backward(r.switches, Tensor(r.output.shape(), 1.0), x.shape());
    CHECK(g == Tensor(x.shape(), {0, 1, 0, 0, 0, 0, 0, 0}));
    CHECK_THROWS_AS((void)maxpool3d_backward(r.switches, Tensor(Shape{1, 1, 1, 1, 2}), x.shape()), ShapeError);
}

TEST_CASE("relu forward and backward") {
    const Tensor x(Shape{3}, {-1.0, 0.0, 2.0});
    CHECK(relu(x) == Tensor(Shape{3}, {0.0, 0.0, 2.0}));
    const Tensor g = relu_backward(x, Tensor(Shape{3}, {5.0, 5.0, 5.0}));
    CHECK(g == Tensor(Shape{3}, {0.0, 0.0, 5.0}));
}

TEST_CASE("linear layer") {
    std::mt19937_64 rng(13);
    const Tensor x = random_tensor(Shape{4, 5}, rng);
    Tensor eye(Shape{5, 5});
    for (std::size_t i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0;
    CHECK(max_abs_diff(linear_forward(x, eye, Tensor(Shape{5})), x) == 0.0);

    const Tensor w = random_tensor(Shape{3, 5}, rng);
    const Tensor b = random_tensor(Shape{3}, rng);
    CHECK(max_abs_diff(linear_forward(x, w, b), reference::linear_forward(x, w, b)) < 1e-12);
    const Tensor go = random_tensor(Shape{4, 3}, rng);
    const LinearGrads fast = linear_backward(x, w, go);
    const LinearGrads slow = reference::linear_backward(x, w, go);
    CHECK(max_abs_diff(fast.input, slow.input) < 1e-12);
    CHECK(max_abs_diff(fast.weights, slow.weights) < 1e-12);
    CHECK(max_abs_diff(fast.bias, slow.bias) < 1e-12);

    CHECK_THROWS_AS((void)linear_forward(Tensor(Shape{2, 4}), w, b), ShapeError);
}

TEST_CASE("linear output of a row does not depend on the rest of the batch") {
    std::mt19937_64 rng(17);
    const Tensor w = random_tensor(Shape{64, 300}, rng);
    const Tensor b = random_tensor(Shape{64}, rng);
    const Tensor batch = random_tensor(Shape{7, 300}, rng);
    const Tensor all = linear_forward(batch, w, b);
    for (std::size_t i = 0; i < 7; ++i) {
        std::vector<double> row(batch.values().begin() + i * 300, batch.values().begin() + (i + 1) * 300);
        const Tensor one = linear_forward(Tensor(Shape{1, 300}, row), w, b);
        for (std::size_t j = 0; j < 64; ++j) CHECK(one[j] == all[i * 64 + j]);
    }
}

TEST_CASE("softmax cross-entropy") {
    const std::vector<int> labels{0, 2};
    const SoftmaxResult uniform = softmax_xent(Tensor(Shape{2, 5}), labels);
    for (double p : uniform.probs.values()) CHECK(p == doctest::Approx(0.2));
    CHECK(uniform.loss == doctest::Approx(std::log(5.0)));

    std::mt19937_64 rng(19);
    const Tensor z = random_tensor(Shape{6, 4}, rng, -50.0, 50.0);
    const std::vector<int> ys{0, 1, 2, 3, 0, 1};
    const SoftmaxResult r = softmax_xent(z, ys);
    for (std::size_t i = 0; i < 6; ++i) {
        double row = 0.0, grad_row = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            const double p = r.probs[i * 4 + j];
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
            row += p;
            grad_row += r.grad_logits[i * 4 + j];
        }
        CHECK(std::abs(row - 1.0) < 1e-12);
        CHECK(std::abs(grad_row) < 1e-12);
    }
    CHECK(std::isfinite(r.loss));
    CHECK_THROWS_AS((void)softmax_xent(z, std::vector<int>{0, 1, 2, 3, 0, 4}), ConfigError);
}

TEST_CASE("finite-difference suite covers every op") {
    const auto reports = gradcheck::run_suite(2024);
    REQUIRE(reports.size() == 6);
    for (const auto& r : reports) {
        CAPTURE(r.op);
        CHECK(r.checked > 0);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("kernels are bit-identical across thread counts") {
    std::mt19937_64 rng(23);
    const ConvKernelSpec spec{4, 3, 3, 3};
    const Tensor x = random_tensor(Shape{5, 3, 4, 6, 6}, rng);
    const Tensor w = random_tensor(spec.weight_shape(), rng);
    const Tensor b = random_tensor(spec.bias_shape(), rng);
    const Tensor go = random_tensor(Shape{5, 4, 4, 6, 6}, rng);

    set_threads(1);
    const Tensor f1 = conv3d_forward(x, w, b, spec);
    const ConvGrads g1 = conv3d_backward(x, w, go, spec);
    set_threads(3);
    const Tensor f3 = conv3d_forward(x, w, b, spec);
    const ConvGrads g3 = conv3d_backward(x, w, go, spec);
    set_threads(1);
    CHECK(f1 == f3);
    CHECK(g1.input == g3.input);
    CHECK(g1.weights == g3.weights);
    CHECK(g1.bias == g3.bias);
}
