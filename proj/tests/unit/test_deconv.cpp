#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "c3d/deconv_viz.hpp"
#include "c3d/error.hpp"
#include "doctest.h"

using namespace c3d;
namespace fs = std::filesystem;

namespace {

Network net_with_depths(std::vector<std::size_t> depths, std::uint64_t seed) {
    FamilyGeometry g;
    g.input = ClipGeometry{1, 16, 8, 8};
    g.filters = {3, 4, 4, 4, 4};
    g.fc_width = 6;
    return build(depth_family_spec("viz", depths, g, 3), seed, std::sqrt(6.0));
}

Tensor random_clip(std::uint64_t seed, std::size_t c = 1, std::size_t side = 8) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor t(Shape(std::vector<std::size_t>{c, 16, side, side}));
    for (double& v : t.values()) v = u(rng);
    return t;
}

DeconvRequest req(std::string layer, std::size_t channel) {
    DeconvRequest r;
    r.layer = std::move(layer);
    r.channel = channel;
    return r;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double max_abs(const Tensor& a) {
    double m = 0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace

TEST_CASE("deconv output has the clip's shape at every layer") {
    const Network net = net_with_depths({3, 3, 3, 3, 3}, 1);
    const Tensor clip = random_clip(2);
    for (const char* layer : {"conv1", "conv2", "pool2", "conv3", "conv5", "pool5"}) {
        CAPTURE(layer);
        const Tensor out = deconv_feature_map(net, clip, req(layer, 1));
        CHECK(out.shape() == clip.shape());
        CHECK(out.all_finite());
    }
}

TEST_CASE("deconv: zero activation gives a zero clip; scaling is linear") {
    const Network net = net_with_depths({3, 3, 3, 3, 3}, 3);
    const Tensor clip = random_clip(4);
    const Tensor top = deconv_feature_map(net, clip, req("conv3", 2));
    REQUIRE(max_abs(top) > 0.0);

    DeconvRequest zero = req("conv3", 2);
    zero.scale = 0.0;
    CHECK(max_abs(deconv_feature_map(net, clip, zero)) == 0.0);

    // A position whose post-ReLU activation is exactly zero.
    const ForwardResult fwd = forward(net, clip.reshaped(Shape{1, 1, 16, 8, 8}));
    const Tensor& act = fwd.activation(net.spec(), "relu3");
    const std::size_t plane = act.size() / act.dim(1);
    for (std::size_t f = 0; f < plane; ++f) {
        if (act[2 * plane + f] == 0.0) {
            DeconvRequest r = req("conv3", 2);
            r.position = std::array<std::size_t, 3>{f / (act.dim(3) * act.dim(4)), (f / act.dim(4)) % act.dim(3),
                                                    f % act.dim(4)};
            CHECK(max_abs(deconv_feature_map(net, clip, r)) == 0.0);
            break;
        }
    }

    for (double a : {0.25, 3.0, 17.5}) {
        DeconvRequest r = req("conv3", 2);
        r.scale = a;
        const Tensor scaled = deconv_feature_map(net, clip, r);
        Tensor expected = top;
        for (double& v : expected.values()) v *= a;
        CHECK(max_abs_diff(scaled, expected) <= 1e-10 * std::max(1.0, max_abs(expected)));
    }
}

TEST_CASE("deconv with forward-mask gating is additive and linear for any sign") {
    const Network net = net_with_depths({3, 3, 3, 3, 3}, 5);
    const Tensor clip = random_clip(6);
    const ForwardResult fwd = forward(net, clip.reshaped(Shape{1, 1, 16, 8, 8}));
    const std::size_t layer = *net.spec().find("relu2");
    const Tensor& act = fwd.activations[layer];

    Tensor a(act.shape()), b(act.shape()), ab(act.shape());
    a[5] = act[5] + 1.0;
    b[act.size() - 7] = 2.0;
    ab[5] = a[5];
    ab[act.size() - 7] = b[act.size() - 7];
    const Tensor pa = deconv_project(net, fwd, layer, a, ReluGating::forward_mask);
    const Tensor pb = deconv_project(net, fwd, layer, b, ReluGating::forward_mask);
    const Tensor pab = deconv_project(net, fwd, layer, ab, ReluGating::forward_mask);
    Tensor sum = pa;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += pb[i];
    CHECK(max_abs_diff(pab, sum) <= 1e-12 * std::max(1.0, max_abs(sum)));

    Tensor neg = a;
    for (double& v : neg.values()) v = -2.0 * v;
    const Tensor pn = deconv_project(net, fwd, layer, neg, ReluGating::forward_mask);
    for (std::size_t i = 0; i < pn.size(); ++i) CHECK(std::abs(pn[i] + 2.0 * pa[i]) <= 1e-12);
}

TEST_CASE("depth-1 deconv stays inside the pooled temporal window") {
    const Network net = net_with_depths({1, 1, 1, 1, 1}, 7);
    const Tensor clip = random_clip(8);
    // relu3 sits after pool2 (temporal stride 2): frame t covers input frames 2t and 2t+1.
    for (std::size_t t = 0; t < 8; ++t) {
        for (std::size_t ch = 0; ch < 4; ++ch) {
            DeconvRequest r = req("conv3", ch);
            r.position = std::array<std::size_t, 3>{t, 1, 1};
            r.gating = ReluGating::forward_mask;
            const Tensor out = deconv_feature_map(net, clip, r);
            for (std::size_t f = 0; f < 16; ++f) {
                if (f / 2 == t) continue;
                for (std::size_t i = 0; i < 64; ++i) CHECK(out[f * 64 + i] == 0.0);
            }
        }
    }
}

TEST_CASE("deconv request validation") {
    const Network net = net_with_depths({3, 3, 3, 3, 3}, 1);
    const Tensor clip = random_clip(1);
    CHECK_THROWS_AS((void)deconv_feature_map(net, clip, req("conv9", 0)), ConfigError);
    CHECK_THROWS_AS((void)deconv_feature_map(net, clip, req("fc6", 0)), ConfigError);
    CHECK_THROWS_AS((void)deconv_feature_map(net, clip, req("conv2", 4)), ConfigError);
    DeconvRequest r = req("conv2", 0);
    r.position = std::array<std::size_t, 3>{0, 4, 0};
    CHECK_THROWS_AS((void)deconv_feature_map(net, clip, r), ConfigError);
    CHECK_THROWS_AS((void)deconv_feature_map(net, random_clip(1, 1, 9), req("conv2", 0)), ShapeError);
}

TEST_CASE("top activations equal a brute-force ranking") {
    const Network net = net_with_depths({3, 3, 3, 3, 3}, 9);
    std::vector<Tensor> clips;
    for (std::uint64_t s = 0; s < 4; ++s) clips.push_back(random_clip(20 + s));
    const auto top = top_activations(net, clips, "conv2", 1, 25);
    REQUIRE(top.size() == 25);

    struct Entry {
        double value;
        std::size_t clip, flat;
    };
    std::vector<Entry> all;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const ForwardResult fwd = forward(net, clips[c].reshaped(Shape{1, 1, 16, 8, 8}));
        const Tensor& a = fwd.activation(net.spec(), "relu2");
        const std::size_t plane = a.size() / a.dim(1);
        for (std::size_t f = 0; f < plane; ++f) all.push_back({a[plane + f], c, f});
    }
    std::sort(all.begin(), all.end(), [](const Entry& x, const Entry& y) {
        if (x.value != y.value) return x.value > y.value;
        return x.clip != y.clip ? x.clip < y.clip : x.flat < y.flat;
    });
    for (std::size_t i = 0; i < top.size(); ++i) {
        CHECK(top[i].value == all[i].value);
        CHECK(top[i].clip == all[i].clip);
        const auto& p = top[i].position;
        CHECK((p[0] * 4 + p[1]) * 4 + p[2] == all[i].flat);
    }
    CHECK(top_activations(net, clips, "conv2", 1, 100000).size() == all.size());

    Network dead = net;
    for (auto& p : dead.params()) p.value.fill(0.0);
    const auto z = top_activations(dead, clips, "conv2", 0, 5);
    for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK(z[i].value == 0.0);
        CHECK(z[i].clip == 0);
        CHECK(z[i].position == std::array<std::size_t, 3>{0, i / 4, i % 4});
    }
}

TEST_CASE("image sequences") {
    const fs::path dir = fs::temp_directory_path() / "c3d_test_frames";
    fs::remove_all(dir);
    Tensor clip = random_clip(3, 3, 5);
    const auto paths = write_image_sequence(clip, dir);
    CHECK(paths.size() == 16);
    CHECK(paths.front().filename() == "frame_0000.ppm");
    for (std::size_t t = 0; t < 16; ++t) {
        const PnmImage img = read_pnm(paths[t]);
        CHECK(img.channels == 3);
        CHECK(img.width == 5);
        CHECK(img.pixels == frame_to_bytes(clip, t));
    }
    const auto first = frame_to_bytes(clip, 0);
    CHECK(*std::min_element(first.begin(), first.end()) == 0);
    CHECK(*std::max_element(first.begin(), first.end()) == 255);

    fs::remove_all(dir);
    Tensor flat(Shape{1, 16, 4, 6}, 0.3);
    const auto gp = write_image_sequence(flat, dir);
    CHECK(gp.back().filename() == "frame_0015.pgm");
    const PnmImage g = read_pnm(gp.back());
    CHECK(g.height == 4);
    for (auto px : g.pixels) CHECK(px == 128);
    fs::remove_all(dir);
}
