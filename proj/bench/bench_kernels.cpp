// Reference (direct loops, serial) against optimized (im2col + GEMM, OpenMP)
// kernels on layer shapes from the full-size and desk-scale networks.
// Thread count of the optimized kernels: --threads=N before the benchmark flags.
#include <benchmark/benchmark.h>

#include <cstring>
#include <random>

#include "c3d/nn_ops.hpp"
#include "c3d/parallel.hpp"
#include "c3d/reference_ops.hpp"

using namespace c3d;

namespace {

Tensor random_tensor(const Shape& s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t(s);
    for (double& v : t.values()) v = u(rng);
    return t;
}

struct ConvCase {
    std::size_t batch, in_c, out_c, l, hw, d;
};
// conv2 of the desk net; conv2 and conv3 of net-128 at batch 1 (conv2 at half length).
constexpr ConvCase kConv[] = {{8, 8, 16, 16, 8, 3}, {1, 64, 128, 8, 28, 3}, {1, 128, 256, 8, 14, 3}};

struct ConvData {
    ConvKernelSpec spec;
    Tensor x, w, b, g;
    explicit ConvData(const ConvCase& c)
        : spec{c.out_c, c.in_c, c.d, 3},
          x(random_tensor(Shape(std::vector<std::size_t>{c.batch, c.in_c, c.l, c.hw, c.hw}), 1)),
          w(random_tensor(spec.weight_shape(), 2)),
          b(random_tensor(spec.bias_shape(), 3)),
          g(random_tensor(Shape(std::vector<std::size_t>{c.batch, c.out_c, c.l, c.hw, c.hw}), 4)) {}
};

void label(benchmark::State& st, const ConvCase& c, double passes = 1.0) {
    st.SetLabel(std::to_string(c.batch) + "x" + std::to_string(c.in_c) + "->" + std::to_string(c.out_c) + " @" +
                std::to_string(c.l) + "x" + std::to_string(c.hw) + "x" + std::to_string(c.hw));
    const double flops = passes * 2.0 * static_cast<double>(c.batch * c.out_c * c.in_c * c.d * 9 * c.l * c.hw * c.hw);
    st.counters["GFLOP/s"] = benchmark::Counter(flops * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}

void BM_conv_fwd_reference(benchmark::State& st) {
    const ConvCase& c = kConv[st.range(0)];
    const ConvData d(c);
    for (auto _ : st) benchmark::DoNotOptimize(reference::conv3d_forward(d.x, d.w, d.b, d.spec));
    label(st, c);
}
void BM_conv_fwd_optimized(benchmark::State& st) {
    const ConvCase& c = kConv[st.range(0)];
    const ConvData d(c);
    for (auto _ : st) benchmark::DoNotOptimize(conv3d_forward(d.x, d.w, d.b, d.spec));
    label(st, c);
}
void BM_conv_bwd_reference(benchmark::State& st) {
    const ConvCase& c = kConv[st.range(0)];
    const ConvData d(c);
    for (auto _ : st) benchmark::DoNotOptimize(reference::conv3d_backward(d.x, d.w, d.g, d.spec));
    label(st, c, 2.0);  // input and weight gradients
}
void BM_conv_bwd_optimized(benchmark::State& st) {
    const ConvCase& c = kConv[st.range(0)];
    const ConvData d(c);
    for (auto _ : st) benchmark::DoNotOptimize(conv3d_backward(d.x, d.w, d.g, d.spec));
    label(st, c, 2.0);  // input and weight gradients
}

void BM_pool_reference(benchmark::State& st) {
    const Tensor x = random_tensor(Shape{2, 64, 16, 56, 56}, 5);
    for (auto _ : st) benchmark::DoNotOptimize(reference::maxpool3d_forward(x, PoolSpec{2, 2, 2}));
}
void BM_pool_optimized(benchmark::State& st) {
    const Tensor x = random_tensor(Shape{2, 64, 16, 56, 56}, 5);
    for (auto _ : st) benchmark::DoNotOptimize(maxpool3d_forward(x, PoolSpec{2, 2, 2}));
}

void BM_linear_reference(benchmark::State& st) {
    const Tensor x = random_tensor(Shape{30, 4096}, 6), w = random_tensor(Shape{2048, 4096}, 7),
                 b = random_tensor(Shape{2048}, 8);
    for (auto _ : st) benchmark::DoNotOptimize(reference::linear_forward(x, w, b));
}
void BM_linear_optimized(benchmark::State& st) {
    const Tensor x = random_tensor(Shape{30, 4096}, 6), w = random_tensor(Shape{2048, 4096}, 7),
                 b = random_tensor(Shape{2048}, 8);
    for (auto _ : st) benchmark::DoNotOptimize(linear_forward(x, w, b));
}

}  // namespace

BENCHMARK(BM_conv_fwd_reference)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_fwd_optimized)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_bwd_reference)->DenseRange(0, 1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_bwd_optimized)->DenseRange(0, 1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_pool_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_pool_optimized)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_linear_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_linear_optimized)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
    if (argc > 1 && std::strncmp(argv[1], "--threads=", 10) == 0) {
        set_threads(std::atoi(argv[1] + 10));
        argv[1] = argv[0];
        ++argv;
        --argc;
    }
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::AddCustomContext("threads_optimized", std::to_string(max_threads()));
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
