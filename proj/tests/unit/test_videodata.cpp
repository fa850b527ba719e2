#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "c3d/error.hpp"
#include "c3d/videodata.hpp"
#include "doctest.h"

using namespace c3d;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("c3d_test_" + name); }

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

MotionBlobsConfig small_config(BlobMode mode) {
    MotionBlobsConfig c;
    c.mode = mode;
    c.classes = 4;
    c.videos_per_class = 3;
    c.length = 20;
    c.height = 18;
    c.width = 22;
    c.blob_size_min = 3;
    c.blob_size_max = 5;
    c.seed = 11;
    return c;
}

std::vector<std::size_t> starts(const std::vector<ClipIndex>& clips) {
    std::vector<std::size_t> s;
    for (const auto& c : clips) s.push_back(c.start);
    return s;
}

Tensor volume(std::size_t c, std::size_t l, std::size_t h, std::size_t w) {
    return Tensor(Shape(std::vector<std::size_t>{c, l, h, w}));
}

}  // namespace

TEST_CASE("generator: balanced, ordered and deterministic") {
    const auto cfg = small_config(BlobMode::motion);
    const auto a = generate_motionblobs(cfg);
    REQUIRE(a.size() == 12);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].label == static_cast<int>(i / 3));
        CHECK(a[i].frames.shape() == Shape{1, 20, 18, 22});
        for (double v : a[i].frames.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    const fs::path p1 = temp_file("g1.vset"), p2 = temp_file("g2.vset");
    generate_motionblobs_file(cfg, p1);
    generate_motionblobs_file(cfg, p2);
    CHECK(read_bytes(p1) == read_bytes(p2));

    auto other = cfg;
    other.seed = 12;
    generate_motionblobs_file(other, p2);
    CHECK(read_bytes(p1) != read_bytes(p2));

    // Header record count.
    const auto bytes = read_bytes(p1);
    CHECK(bytes[8] == 12);
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("generator: 8 x 50 records") {
    MotionBlobsConfig cfg;
    cfg.videos_per_class = 50;
    cfg.length = 16;
    cfg.height = 12;
    cfg.width = 12;
    cfg.blob_size_min = 2;
    cfg.blob_size_max = 3;
    CHECK(generate_motionblobs(cfg).size() == 400);
}

TEST_CASE("generator: invalid configurations") {
    auto cfg = small_config(BlobMode::motion);
    cfg.blob_size_max = 30;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(BlobMode::motion);
    cfg.classes = 5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.mode = BlobMode::appearance;
    CHECK_NOTHROW(cfg.validate());
    cfg.channels = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("generator: motion classes differ only in direction") {
    // The lit area of the first frame does not depend on the class.
    auto cfg = small_config(BlobMode::motion);
    cfg.noise = 0.0;
    cfg.videos_per_class = 60;
    cfg.blobs_min = cfg.blobs_max = 1;
    const auto data = generate_motionblobs(cfg);
    std::vector<double> lit(cfg.classes, 0.0);
    for (const auto& v : data) {
        for (std::size_t i = 0; i < v.height() * v.width(); ++i) lit[v.label] += v.frames[i] > 0;
    }
    for (double& x : lit) x /= static_cast<double>(cfg.videos_per_class);
    for (std::size_t c = 1; c < cfg.classes; ++c) CHECK(lit[c] == doctest::Approx(lit[0]).epsilon(0.25));
}

TEST_CASE("glyphs: canonical shapes and seeded extras are distinct") {
    std::set<std::vector<std::uint8_t>> seen;
    for (std::size_t g = 0; g < 40; ++g) {
        const auto m = blob_glyph(g, 10);
        CHECK(m.size() == 100);
        CHECK(std::count(m.begin(), m.end(), 1) > 0);
        seen.insert(m);
    }
    CHECK(seen.size() == 40);
    CHECK(blob_glyph(17, 7) == blob_glyph(17, 7));
}

TEST_CASE("VSET round trip, header layout and empty files") {
    auto data = generate_motionblobs(small_config(BlobMode::appearance));
    const fs::path p = temp_file("rt.vset");
    write_dataset(p, data);
    const auto back = load_dataset(p);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].label == data[i].label);
        CHECK(back[i].frames == data[i].frames);
    }
    const auto bytes = read_bytes(p);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "VSET");
    // First record: label u32, channels u8, length/height/width u16, then pixels.
    CHECK(bytes[12] == 0);
    CHECK(bytes[16] == 1);
    CHECK(bytes[17] == 20);
    CHECK(bytes[19] == 18);
    CHECK(bytes[21] == 22);
    CHECK(bytes.size() == 12 + data.size() * (11 + 20 * 18 * 22));

    write_dataset(p, {});
    CHECK(load_dataset(p).empty());
    fs::remove(p);
}

TEST_CASE("VSET errors") {
    const fs::path p = temp_file("bad.vset");
    write_dataset(p, generate_motionblobs(small_config(BlobMode::motion)));
    const auto bytes = read_bytes(p);

    auto write = [&](const std::vector<char>& b) {
        std::ofstream(p, std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
    };
    auto bad = bytes;
    bad[1] = 'X';
    write(bad);
    CHECK_THROWS_AS((void)load_dataset(p), FormatError);

    bad = bytes;
    bad.resize(bytes.size() - 5);
    write(bad);
    try {
        (void)load_dataset(p);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("record 11") != std::string::npos);
    }

    // Extents far larger than the file.
    bad = bytes;
    bad[17] = bad[18] = static_cast<char>(0xff);
    bad[19] = bad[20] = static_cast<char>(0xff);
    write(bad);
    CHECK_THROWS_AS((void)load_dataset(p), FormatError);

    CHECK_THROWS_AS((void)load_dataset(temp_file("does_not_exist.vset")), Error);
    fs::remove(p);
}

TEST_CASE("resize: constants, ramps and target extents") {
    VideoRecord v{0, volume(3, 2, 40, 50)};
    v.frames.fill(0.37);
    const auto r = resize_frames(v, 128, 171);
    CHECK(r.frames.shape() == Shape{3, 2, 128, 171});
    for (double x : r.frames.values()) CHECK(x == doctest::Approx(0.37).epsilon(1e-15));

    // Linear ramp: up to 61x77 and back to 16x20 reproduces the original.
    VideoRecord ramp{0, volume(1, 1, 16, 20)};
    for (std::size_t y = 0; y < 16; ++y) {
        for (std::size_t x = 0; x < 20; ++x) ramp.frames[y * 20 + x] = 0.01 * y + 0.02 * x + 0.05;
    }
    const auto round_trip = resize_frames(resize_frames(ramp, 61, 77), 16, 20);
    for (std::size_t i = 0; i < ramp.frames.size(); ++i) {
        CHECK(std::abs(round_trip.frames[i] - ramp.frames[i]) < 1e-6);
    }
    CHECK_THROWS_AS((void)resize_frames(v, 0, 10), ConfigError);
}

TEST_CASE("split_into_clips") {
    CHECK(starts(split_into_clips(32, 16, 8)) == std::vector<std::size_t>{0, 8, 16});
    CHECK(starts(split_into_clips(32, 16, 0)) == std::vector<std::size_t>{0, 16});
    CHECK(starts(split_into_clips(16, 16, 8)) == std::vector<std::size_t>{0});
    CHECK(starts(split_into_clips(47, 16, 0)) == std::vector<std::size_t>{0, 16});
    for (std::size_t l = 16; l < 90; ++l) {
        for (std::size_t ov : {0, 4, 8, 15}) {
            const auto clips = split_into_clips(l, 16, ov, 7);
            CHECK(clips.size() == (l - 16) / (16 - ov) + 1);
            for (std::size_t i = 0; i < clips.size(); ++i) {
                CHECK(clips[i].video == 7);
                CHECK(clips[i].start + 16 <= l);
                if (i > 0) CHECK(clips[i - 1].start + 16 - clips[i].start == ov);
            }
        }
    }
    CHECK_THROWS_AS((void)split_into_clips(32, 16, 16), ConfigError);
    CHECK_THROWS_AS((void)split_into_clips(15, 16, 0), ShapeError);
}

TEST_CASE("center crop and slicing") {
    Tensor t = volume(1, 1, 128, 171);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    const Tensor c = center_crop(t, 112, 112);
    CHECK(c.shape() == Shape{1, 1, 112, 112});
    CHECK(c[0] == static_cast<double>(8 * 171 + 29));
    CHECK(center_crop(t, 128, 171) == t);
    CHECK_THROWS_AS((void)center_crop(volume(3, 16, 100, 100), 112, 112), ShapeError);

    Tensor v = volume(2, 5, 2, 2);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    const Tensor s = slice_clip(v, 1, 3);
    CHECK(s.shape() == Shape{2, 3, 2, 2});
    CHECK(s[0] == 4.0);
    CHECK(s[12] == 24.0);
    CHECK_THROWS_AS((void)slice_clip(v, 3, 3), ShapeError);
}

TEST_CASE("stratified split") {
    auto cfg = small_config(BlobMode::motion);
    cfg.videos_per_class = 10;
    const auto data = generate_motionblobs(cfg);
    const auto a = split_dataset(data, 0.2, 5);
    CHECK(a.train.size() == 32);
    CHECK(a.heldout.size() == 8);
    std::vector<int> per_class(4, 0);
    for (const auto& v : a.heldout) ++per_class[v.label];
    CHECK(per_class == std::vector<int>{2, 2, 2, 2});
    const auto b = split_dataset(data, 0.2, 5);
    for (std::size_t i = 0; i < a.heldout.size(); ++i) CHECK(a.heldout[i].frames == b.heldout[i].frames);
}

TEST_CASE("generator: angle_offset rotates motion classes only") {
    auto cfg = small_config(BlobMode::motion);
    cfg.noise = 0.0;
    const auto base = generate_motionblobs(cfg);
    cfg.angle_offset = 0.5;
    const auto rotated = generate_motionblobs(cfg);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(rotated[i].label == base[i].label);
        const auto r = rotated[i].frames.values(), b = base[i].frames.values();
        const std::size_t plane = base[i].height() * base[i].width();
        CHECK(std::equal(r.begin(), r.begin() + plane, b.begin()));  // frame 0 precedes any motion
        changed += std::equal(r.begin(), r.end(), b.begin()) ? 0 : 1;
    }
    CHECK(changed == base.size());

    auto app = small_config(BlobMode::appearance);
    const auto a0 = generate_motionblobs(app);
    app.angle_offset = 0.5;
    const auto a1 = generate_motionblobs(app);
    for (std::size_t i = 0; i < a0.size(); ++i) {
        const auto x = a0[i].frames.values(), y = a1[i].frames.values();
        CHECK(std::equal(x.begin(), x.end(), y.begin()));
    }

    cfg.angle_offset = std::nan("");
    CHECK_THROWS_AS((void)generate_motionblobs(cfg), ConfigError);
}
