#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "c3d/descriptor.hpp"
#include "c3d/error.hpp"
#include "doctest.h"

using namespace c3d;
namespace fs = std::filesystem;

namespace {

Network small_net(std::uint64_t seed = 5) {
    FamilyGeometry g;
    g.input = ClipGeometry{1, 16, 12, 12};
    g.filters = {4, 6, 6, 6, 6};
    g.fc_width = 10;
    const std::vector<std::size_t> depths{3, 3, 3, 3, 3};
    return build(depth_family_spec("small", depths, g, 4), seed, std::sqrt(6.0));
}

VideoRecord random_video(std::size_t length, std::uint64_t seed, std::size_t side = 14) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor f(Shape(std::vector<std::size_t>{1, length, side, side}));
    for (double& v : f.values()) v = u(rng);
    return {0, std::move(f)};
}

double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("feature layers resolve to post-ReLU outputs") {
    const Network net = small_net();
    const NetworkSpec& s = net.spec();
    CHECK(s.layers[feature_layer_index(s, "fc6")].name == "relu6");
    CHECK(s.layers[feature_layer_index(s, "conv3")].name == "relu3");
    CHECK(s.layers[feature_layer_index(s, "pool5")].name == "pool5");
    CHECK(s.layers[feature_layer_index(s, "prob")].name == "prob");
    CHECK(feature_width(net, "fc6") == 10);
    try {
        (void)feature_layer_index(s, "fc9");
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("fc7") != std::string::npos);
    }
}

TEST_CASE("full-size feature widths") {
    const Network c3d = build(preset_spec("c3d", 487), 1);
    CHECK(feature_width(c3d, "fc6") == 4096);
    CHECK(feature_width(c3d, "pool5") == 8192);
    const Network d3 = build(preset_spec("depth-3", 101), 1);
    CHECK(feature_width(d3, "fc6") == 2048);
}

TEST_CASE("clip features are center-cropped and non-negative after ReLU") {
    const Network net = small_net();
    const VideoRecord v = random_video(16, 1);
    const Tensor clip = slice_clip(v.frames, 0, 16);
    const auto f = extract_clip_features(net, clip, "fc6");
    CHECK(f.size() == 10);
    for (double x : f) CHECK(x >= 0.0);
    CHECK(f == extract_clip_features(net, center_crop(clip, 12, 12), "fc6"));
    CHECK_THROWS_AS((void)extract_clip_features(net, center_crop(clip, 10, 10), "fc6"), ShapeError);
    CHECK_THROWS_AS((void)extract_clip_features(net, clip, "fc9"), ConfigError);
}

TEST_CASE("descriptor: unit norm, single clip, order and duplication invariance") {
    const Network net = small_net();
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        const VideoRecord v = random_video(40, seed);
        const VideoDescriptor d = video_descriptor(net, v, "fc6", seed);
        CHECK(d.values.size() == 10);
        CHECK(d.video_id == seed);
        if (!d.degenerate) CHECK(std::abs(norm(d.values) - 1.0) < 1e-12);
    }

    const VideoRecord one = random_video(16, 9);
    const auto single = extract_clip_features(net, slice_clip(one.frames, 0, 16), "fc6");
    const VideoDescriptor d1 = video_descriptor(net, one, "fc6");
    CHECK(d1.values == l2_normalize(single));

    // Clip features in any order, or the whole set twice, give the same mean.
    const VideoRecord v = random_video(48, 3);
    std::vector<Tensor> clips;
    for (const auto& c : split_into_clips(48, 16, 8)) clips.push_back(slice_clip(v.frames, c.start, 16));
    const std::vector<std::string> layer{"fc6"};
    auto feats = extract_features(net, clips, layer)[0];
    const VideoDescriptor base = descriptor_from_clip_features("fc6", feats);
    CHECK(base.values == video_descriptor(net, v, "fc6").values);
    std::mt19937_64 rng(2);
    for (int k = 0; k < 5; ++k) {
        std::shuffle(feats.begin(), feats.end(), rng);
        CHECK(descriptor_from_clip_features("fc6", feats).values == base.values);
    }
    auto doubled = feats;
    doubled.insert(doubled.end(), feats.begin(), feats.end());
    const auto dd = descriptor_from_clip_features("fc6", doubled).values;
    for (std::size_t j = 0; j < dd.size(); ++j) CHECK(std::abs(dd[j] - base.values[j]) < 1e-15);
}

TEST_CASE("descriptor: identical clips reproduce the single-clip feature") {
    const Network net = small_net();
    const VideoRecord one = random_video(16, 4);
    Tensor frames(Shape{1, 48, 14, 14});
    for (std::size_t rep = 0; rep < 3; ++rep) {
        std::copy(one.frames.data(), one.frames.data() + one.frames.size(), frames.data() + rep * one.frames.size());
    }
    // Overlap 0 makes every clip a copy of the original 16 frames.
    const VideoDescriptor d = video_descriptor(net, {0, frames}, "fc6", 0, 0);
    const auto expected = l2_normalize(extract_clip_features(net, one.frames, "fc6"));
    for (std::size_t j = 0; j < expected.size(); ++j) CHECK(std::abs(d.values[j] - expected[j]) < 1e-15);
}

TEST_CASE("descriptor: zero activations are flagged, not divided") {
    Network net = small_net();
    for (auto& p : net.params()) p.value.fill(0.0);
    const VideoDescriptor d = video_descriptor(net, random_video(16, 1), "fc6");
    CHECK(d.degenerate);
    for (double x : d.values) CHECK(x == 0.0);
    CHECK_THROWS_AS((void)video_descriptor(net, random_video(15, 1), "fc6"), ShapeError);
}

TEST_CASE("video prediction averages clip probabilities") {
    const Network net = small_net();
    const auto p = video_predict(net, random_video(40, 2));
    CHECK(p.size() == 4);
    double s = 0;
    for (double x : p) s += x;
    CHECK(std::abs(s - 1.0) < 1e-9);
    CHECK(p == video_predict(net, random_video(40, 2)));

    // Repeated identical frames: every window is the same clip.
    Tensor frames(Shape{1, 30, 14, 14});
    const VideoRecord still = random_video(1, 8);
    for (std::size_t t = 0; t < 30; ++t) std::copy(still.frames.data(), still.frames.data() + 196, frames.data() + t * 196);
    const auto q = video_predict(net, {0, frames}, 10, 3);
    const auto one = extract_clip_features(net, slice_clip(frames, 0, 16), "prob");
    for (std::size_t j = 0; j < q.size(); ++j) CHECK(std::abs(q[j] - one[j]) < 1e-15);

    CHECK(argmax(std::vector<double>{0.2, 0.5, 0.5}) == 1);
}

TEST_CASE("descriptor export formats") {
    const Network net = small_net();
    std::vector<VideoDescriptor> ds;
    for (std::uint64_t s = 0; s < 3; ++s) ds.push_back(video_descriptor(net, random_video(24, s), "fc6", s));
    const fs::path bin = fs::temp_directory_path() / "c3d_test_desc.bin";
    const fs::path csv = fs::temp_directory_path() / "c3d_test_desc.csv";
    write_descriptors_bin(bin, ds);
    const auto back = read_descriptors_bin(bin);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 10; ++j) CHECK(back[i][j] == static_cast<float>(ds[i].values[j]));
    }
    CHECK(fs::file_size(bin) == 16 + 3 * 10 * 4);
    write_descriptors_csv(csv, ds);
    CHECK(fs::file_size(csv) > 0);
    fs::remove(bin);
    fs::remove(csv);
}
