#include "c3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "c3d/nn_ops.hpp"
#include "c3d/rng.hpp"

namespace c3d::gradcheck {
namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

OpReport merge(std::string op, std::initializer_list<std::pair<const Tensor*, const Tensor*>> pairs) {
    OpReport r{std::move(op)};
    for (const auto& [a, n] : pairs) {
        r.max_rel_error = std::max(r.max_rel_error, max_relative_error(*a, *n));
        r.checked += a->size();
    }
    return r;
}

// Sign pattern of every ReLU input plus every pool switch; equal patterns
// mean the network is the same linear piece.
std::vector<std::size_t> activation_pattern(const Network& net, const ForwardResult& fwd) {
    std::vector<std::size_t> pattern;
    const auto& layers = net.spec().layers;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (std::holds_alternative<ReluLayer>(layers[i].kind)) {
            const Tensor& in = i == 0 ? fwd.input : fwd.activations[i - 1];
            for (double v : in.values()) pattern.push_back(v > 0.0);
        } else if (fwd.switches[i]) {
            pattern.insert(pattern.end(), fwd.switches[i]->index.begin(), fwd.switches[i]->index.end());
        }
    }
    return pattern;
}

}  // namespace

double relative_error(double analytic, double numeric) noexcept {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), kScaleFloor});
    return std::abs(analytic - numeric) / scale;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, relative_error(analytic[i], numeric[i]));
    }
    return worst;
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double step) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double up = f(x);
        x[i] = orig - step;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

NetworkSpec tiny_network_spec(std::size_t class_count) {
    NetworkSpec spec{"tiny", ClipGeometry{3, 4, 8, 8}, {}, class_count};
    spec.layers = {
        {"conv1", ConvLayer{{4, 3, 3, 3}}},
        {"relu1", ReluLayer{}},
        {"conv2", ConvLayer{{4, 4, 3, 3}}},
        {"relu2", ReluLayer{}},
        {"pool1", PoolLayer{{2, 2, 2}}},
        {"flatten", FlattenLayer{}},
        {"fc", LinearLayer{4 * 2 * 4 * 4, class_count}},
        {"prob", SoftmaxLayer{}},
    };
    return spec;
}

OpReport check_network(const Network& net, const Tensor& batch, const std::vector<int>& labels, double step) {
    const LossAndGrads analytic = loss_and_gradients(net, batch, labels);
    const std::vector<std::size_t> base = activation_pattern(net, forward(net, batch));
    Network probe = net;
    OpReport r{"network"};
    auto eval = [&](std::vector<std::size_t>& pattern) {
        ForwardResult fwd = forward(probe, batch);
        pattern = activation_pattern(probe, fwd);
        return softmax_xent(fwd.activations[logits_layer(probe.spec())], labels).loss;
    };
    std::vector<std::size_t> up_pattern, down_pattern;
    for (std::size_t p = 0; p < probe.params().size(); ++p) {
        Tensor& value = probe.params()[p].value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double orig = value[i];
            value[i] = orig + step;
            const double up = eval(up_pattern);
            value[i] = orig - step;
            const double down = eval(down_pattern);
            value[i] = orig;
            if (up_pattern != base || down_pattern != base) {
                ++r.skipped;
                continue;
            }
            r.max_rel_error =
                std::max(r.max_rel_error, relative_error(analytic.grads[p][i], (up - down) / (2.0 * step)));
            ++r.checked;
        }
    }
    return r;
}

std::vector<OpReport> run_suite(std::uint64_t seed) {
    std::vector<OpReport> reports;
    std::mt19937_64 rng(derive_seed(seed, 0));

    {
        const ConvKernelSpec spec{3, 2, 3, 3};
        const Tensor x = random_tensor(Shape{1, 2, 4, 5, 5}, rng);
        const Tensor w = random_tensor(spec.weight_shape(), rng);
        const Tensor b = random_tensor(spec.bias_shape(), rng);
        const Tensor r = random_tensor(Shape{1, 3, 4, 5, 5}, rng);
        const ConvGrads g = conv3d_backward(x, w, r, spec);
        const Tensor nx = numeric_gradient([&](const Tensor& v) { return dot(conv3d_forward(v, w, b, spec), r); }, x);
        const Tensor nw = numeric_gradient([&](const Tensor& v) { return dot(conv3d_forward(x, v, b, spec), r); }, w);
        const Tensor nb = numeric_gradient([&](const Tensor& v) { return dot(conv3d_forward(x, w, v, spec), r); }, b);
        reports.push_back(merge("conv3d", {{&g.input, &nx}, {&g.weights, &nw}, {&g.bias, &nb}}));
    }
    {
        // Distinct values on a 0.01 grid: no two entries of a window lie
        // within 2*step of each other, so no perturbation flips an argmax.
        const Shape shape{1, 2, 5, 5, 7};
        std::vector<double> values(shape.count());
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.01 * static_cast<double>(i);
        std::shuffle(values.begin(), values.end(), rng);
        const Tensor x(shape, values);
        const PoolSpec spec{2, 2, 2};
        const PoolResult fwd = maxpool3d_forward(x, spec);
        const Tensor r = random_tensor(fwd.output.shape(), rng);
        const Tensor gx = maxpool3d_backward(fwd.switches, r, shape);
        const Tensor nx =
            numeric_gradient([&](const Tensor& v) { return dot(maxpool3d_forward(v, spec).output, r); }, x);
        reports.push_back(merge("maxpool3d", {{&gx, &nx}}));
    }
    {
        Tensor x = random_tensor(Shape{3, 4, 5}, rng);
        // Keep every input at least 0.05 from the kink.
        for (double& v : x.values()) v += v >= 0.0 ? 0.05 : -0.05;
        const Tensor r = random_tensor(x.shape(), rng);
        const Tensor gx = relu_backward(x, r);
        const Tensor nx = numeric_gradient([&](const Tensor& v) { return dot(relu(v), r); }, x);
        reports.push_back(merge("relu", {{&gx, &nx}}));
    }
    {
        const Tensor x = random_tensor(Shape{3, 6}, rng);
        const Tensor w = random_tensor(Shape{4, 6}, rng);
        const Tensor b = random_tensor(Shape{4}, rng);
        const Tensor r = random_tensor(Shape{3, 4}, rng);
        const LinearGrads g = linear_backward(x, w, r);
        const Tensor nx = numeric_gradient([&](const Tensor& v) { return dot(linear_forward(v, w, b), r); }, x);
        const Tensor nw = numeric_gradient([&](const Tensor& v) { return dot(linear_forward(x, v, b), r); }, w);
        const Tensor nb = numeric_gradient([&](const Tensor& v) { return dot(linear_forward(x, w, v), r); }, b);
        reports.push_back(merge("linear", {{&g.input, &nx}, {&g.weights, &nw}, {&g.bias, &nb}}));
    }
    {
        const Tensor z = random_tensor(Shape{4, 5}, rng, -3.0, 3.0);
        const std::vector<int> labels{0, 3, 4, 1};
        const SoftmaxResult sm = softmax_xent(z, labels);
        const Tensor nz = numeric_gradient([&](const Tensor& v) { return softmax_xent(v, labels).loss; }, z);
        reports.push_back(merge("softmax_xent", {{&sm.grad_logits, &nz}}));
    }
    {
        const Network net = build(tiny_network_spec(3), derive_seed(seed, 1));
        const Tensor batch = random_tensor(Shape{1, 3, 4, 8, 8}, rng, 0.0, 1.0);
        reports.push_back(check_network(net, batch, {2}));
    }
    return reports;
}

}  // namespace c3d::gradcheck
