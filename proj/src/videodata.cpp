#include "c3d/videodata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <string>

#include "c3d/binary_io.hpp"
#include "c3d/error.hpp"
#include "c3d/rng.hpp"

namespace c3d {

namespace {

constexpr std::uint32_t kVsetVersion = 1;
constexpr std::size_t kCanonicalGlyphs = 8;
constexpr std::size_t kRandomGlyphGrid = 5;

bool canonical_glyph(std::size_t index, double u, double v) {
    const double r2 = u * u + v * v;
    switch (index) {
        case 0: return r2 <= 1.0;                                            // disk
        case 1: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;             // square
        case 2: return std::abs(u) <= 0.34 || std::abs(v) <= 0.34;           // plus
        case 3: return v >= -0.9 && std::abs(u) <= (v + 1.0) * 0.5;          // triangle
        case 4: return r2 <= 1.0 && r2 >= 0.3;                               // ring
        case 5: return std::abs(u - v) <= 0.45 || std::abs(u + v) <= 0.45;   // cross
        case 6: return std::abs(v) <= 0.4;                                   // horizontal bar
        default: return std::abs(u) <= 0.4;                                  // vertical bar
    }
}

// Seeded 5x5 mask with at least 8 cells set; the seed depends only on index.
std::vector<std::uint8_t> random_glyph_grid(std::size_t index) {
    std::mt19937_64 rng(derive_seed(0x67'6c'79'70'68ULL, index));
    std::bernoulli_distribution on(0.55);
    std::vector<std::uint8_t> grid(kRandomGlyphGrid * kRandomGlyphGrid);
    do {
        for (auto& g : grid) g = on(rng) ? 1 : 0;
    } while (std::count(grid.begin(), grid.end(), 1) < 8);
    return grid;
}

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct Blob {
    std::vector<std::uint8_t> mask;
    std::size_t size = 0;
    std::vector<double> intensity;  // per channel
    double y0 = 0, x0 = 0, vy = 0, vx = 0;
};

std::size_t wrap(long long v, std::size_t n) {
    const long long m = static_cast<long long>(n);
    return static_cast<std::size_t>(((v % m) + m) % m);
}

VideoRecord render_video(const MotionBlobsConfig& cfg, std::size_t label, std::size_t video_index) {
    std::mt19937_64 rng(derive_seed(cfg.seed, video_index));
    std::uniform_int_distribution<std::size_t> n_blobs(cfg.blobs_min, cfg.blobs_max);
    std::uniform_int_distribution<std::size_t> blob_size(cfg.blob_size_min, cfg.blob_size_max);
    std::uniform_int_distribution<std::size_t> any_glyph(0, kCanonicalGlyphs - 1);
    std::uniform_real_distribution<double> intensity(0.5, 1.0);
    std::uniform_real_distribution<double> speed(cfg.speed_min, cfg.speed_max);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> ypos(0.0, static_cast<double>(cfg.height));
    std::uniform_real_distribution<double> xpos(0.0, static_cast<double>(cfg.width));

    std::vector<Blob> blobs(n_blobs(rng));
    for (Blob& b : blobs) {
        b.size = blob_size(rng);
        const std::size_t glyph = cfg.mode == BlobMode::appearance ? cfg.first_glyph + label : any_glyph(rng);
        b.mask = blob_glyph(glyph, b.size);
        b.intensity.resize(cfg.channels);
        for (double& v : b.intensity) v = intensity(rng);
        b.y0 = ypos(rng);
        b.x0 = xpos(rng);
        const double s = speed(rng);
        const double a = cfg.mode == BlobMode::motion
                             ? 2.0 * std::numbers::pi * (static_cast<double>(label) + cfg.angle_offset) / static_cast<double>(cfg.classes)
                             : angle(rng);
        b.vx = s * std::cos(a);
        b.vy = -s * std::sin(a);  // image rows grow downwards
    }

    Tensor frames(Shape(std::vector<std::size_t>{cfg.channels, cfg.length, cfg.height, cfg.width}));
    const std::size_t plane = cfg.height * cfg.width;
    for (std::size_t t = 0; t < cfg.length; ++t) {
        for (const Blob& b : blobs) {
            const double td = static_cast<double>(t);
            const auto top = static_cast<long long>(std::floor(b.y0 + b.vy * td));
            const auto left = static_cast<long long>(std::floor(b.x0 + b.vx * td));
            for (std::size_t i = 0; i < b.size; ++i) {
                for (std::size_t j = 0; j < b.size; ++j) {
                    if (!b.mask[i * b.size + j]) continue;
                    const std::size_t y = wrap(top + static_cast<long long>(i), cfg.height);
                    const std::size_t x = wrap(left + static_cast<long long>(j), cfg.width);
                    for (std::size_t c = 0; c < cfg.channels; ++c) {
                        double& px = frames[(c * cfg.length + t) * plane + y * cfg.width + x];
                        px = std::max(px, b.intensity[c]);
                    }
                }
            }
        }
    }
    std::normal_distribution<double> noise(0.0, cfg.noise);
    for (double& v : frames.values()) {
        const double n = cfg.noise > 0 ? noise(rng) : 0.0;
        v = quantize(v + n) / 255.0;
    }
    return VideoRecord{static_cast<int>(label), std::move(frames)};
}

void require_frames(const Tensor& frames, const char* what) {
    if (frames.shape().rank() != 4) {
        throw ShapeError(std::string(what) + ": expected a (c, l, h, w) volume, got " + frames.shape().str());
    }
}

}  // namespace

void MotionBlobsConfig::validate() const {
    if (classes < 2) throw ConfigError("motionblobs: need at least 2 classes");
    if (mode == BlobMode::motion && classes % 2 != 0) {
        throw ConfigError("motionblobs: motion mode needs an even class count so directions come in reversal pairs");
    }
    if (videos_per_class == 0) throw ConfigError("motionblobs: videos_per_class must be positive");
    if (channels != 1 && channels != 3) throw ConfigError("motionblobs: channels must be 1 or 3");
    if (length == 0 || height == 0 || width == 0) throw ConfigError("motionblobs: frame geometry must be positive");
    if (length > 0xffff || height > 0xffff || width > 0xffff) {
        throw ConfigError("motionblobs: extents must fit in 16 bits");
    }
    if (blobs_min == 0 || blobs_min > blobs_max) throw ConfigError("motionblobs: invalid blob count range");
    if (blob_size_min == 0 || blob_size_min > blob_size_max) throw ConfigError("motionblobs: invalid blob size range");
    if (blob_size_max > height || blob_size_max > width) {
        throw ConfigError("motionblobs: blob size " + std::to_string(blob_size_max) + " larger than frame " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    if (!(speed_min >= 0.0) || speed_min > speed_max) throw ConfigError("motionblobs: invalid speed range");
    if (!(noise >= 0.0)) throw ConfigError("motionblobs: noise must be non-negative");
    if (!std::isfinite(angle_offset)) throw ConfigError("motionblobs: angle_offset must be finite");
}

std::vector<std::uint8_t> blob_glyph(std::size_t index, std::size_t size) {
    if (size == 0) throw ConfigError("blob_glyph: size must be positive");
    std::vector<std::uint8_t> mask(size * size);
    const std::vector<std::uint8_t> grid =
        index < kCanonicalGlyphs ? std::vector<std::uint8_t>{} : random_glyph_grid(index);
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
            if (index < kCanonicalGlyphs) {
                const double v = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(size);
                const double u = 2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(size) - 1.0;
                mask[i * size + j] = canonical_glyph(index, u, v) ? 1 : 0;
            } else {
                const std::size_t gi = i * kRandomGlyphGrid / size, gj = j * kRandomGlyphGrid / size;
                mask[i * size + j] = grid[gi * kRandomGlyphGrid + gj];
            }
        }
    }
    return mask;
}

std::vector<VideoRecord> generate_motionblobs(const MotionBlobsConfig& config) {
    config.validate();
    std::vector<VideoRecord> out;
    out.reserve(config.classes * config.videos_per_class);
    for (std::size_t c = 0; c < config.classes; ++c) {
        for (std::size_t i = 0; i < config.videos_per_class; ++i) {
            out.push_back(render_video(config, c, c * config.videos_per_class + i));
        }
    }
    return out;
}

void generate_motionblobs_file(const MotionBlobsConfig& config, const std::filesystem::path& path) {
    write_dataset(path, generate_motionblobs(config));
}

void write_dataset(const std::filesystem::path& path, const std::vector<VideoRecord>& records) {
    io::ByteWriter w;
    w.bytes("VSET");
    w.u32(kVsetVersion);
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const VideoRecord& r : records) {
        require_frames(r.frames, "write_dataset");
        if (r.label < 0) throw ConfigError("write_dataset: negative label");
        if (r.channels() > 0xff || r.length() > 0xffff || r.height() > 0xffff || r.width() > 0xffff) {
            throw ConfigError("write_dataset: extents do not fit the VSET header fields");
        }
        w.u32(static_cast<std::uint32_t>(r.label));
        w.u8(static_cast<std::uint8_t>(r.channels()));
        w.u16(static_cast<std::uint16_t>(r.length()));
        w.u16(static_cast<std::uint16_t>(r.height()));
        w.u16(static_cast<std::uint16_t>(r.width()));
        for (double v : r.frames.values()) w.u8(quantize(v));
    }
    w.write_file(path);
}

std::vector<VideoRecord> load_dataset(const std::filesystem::path& path) {
    io::ByteReader r = io::ByteReader::from_file(path);
    r.set_context(path.string());
    r.expect_magic("VSET");
    const std::uint32_t version = r.u32();
    if (version != kVsetVersion) {
        throw FormatError(path.string() + ": unsupported VSET version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<VideoRecord> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        r.set_context(path.string() + ": record " + std::to_string(i));
        const std::uint32_t label = r.u32();
        const std::size_t c = r.u8(), l = r.u16(), h = r.u16(), w = r.u16();
        if (c != 1 && c != 3) {
            throw FormatError(path.string() + ": record " + std::to_string(i) + ": channels must be 1 or 3, got " +
                              std::to_string(c));
        }
        if (l == 0 || h == 0 || w == 0) {
            throw FormatError(path.string() + ": record " + std::to_string(i) + ": zero extent");
        }
        const std::size_t n = c * l * h * w;
        if (n > r.remaining()) {
            throw FormatError(path.string() + ": record " + std::to_string(i) + ": truncated payload (need " +
                              std::to_string(n) + " bytes, " + std::to_string(r.remaining()) + " left)");
        }
        const auto bytes = r.raw(n);
        std::vector<double> values(n);
        for (std::size_t k = 0; k < n; ++k) values[k] = bytes[k] / 255.0;
        out.push_back(VideoRecord{static_cast<int>(label),
                                  Tensor(Shape(std::vector<std::size_t>{c, l, h, w}), std::move(values))});
    }
    if (!r.at_end()) {
        throw FormatError(path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes after last record");
    }
    return out;
}

VideoRecord resize_frames(const VideoRecord& video, std::size_t out_h, std::size_t out_w) {
    require_frames(video.frames, "resize_frames");
    if (out_h == 0 || out_w == 0) throw ConfigError("resize_frames: target extents must be positive");
    const std::size_t c = video.channels(), l = video.length(), h = video.height(), w = video.width();

    // Corner-aligned source coordinate and interpolation weight per output index.
    struct Tap {
        std::size_t i0, i1;
        double f;
    };
    const auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        for (std::size_t o = 0; o < out; ++o) {
            const double s = out == 1 ? 0.5 * static_cast<double>(in - 1)
                                      : static_cast<double>(o) * static_cast<double>(in - 1) /
                                            static_cast<double>(out - 1);
            const auto i0 = std::min(static_cast<std::size_t>(std::floor(s)), in - 1);
            t[o] = Tap{i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
        }
        return t;
    };
    const auto ty = taps(h, out_h), tx = taps(w, out_w);

    Tensor out(Shape(std::vector<std::size_t>{c, l, out_h, out_w}));
    const double* src = video.frames.data();
    double* dst = out.data();
    for (std::size_t f = 0; f < c * l; ++f) {
        const double* p = src + f * h * w;
        double* q = dst + f * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const Tap& a = ty[y];
            for (std::size_t x = 0; x < out_w; ++x) {
                const Tap& b = tx[x];
                const double top = p[a.i0 * w + b.i0] + b.f * (p[a.i0 * w + b.i1] - p[a.i0 * w + b.i0]);
                const double bot = p[a.i1 * w + b.i0] + b.f * (p[a.i1 * w + b.i1] - p[a.i1 * w + b.i0]);
                q[y * out_w + x] = top + a.f * (bot - top);
            }
        }
    }
    return VideoRecord{video.label, std::move(out)};
}

std::vector<ClipIndex> split_into_clips(std::size_t video_length, std::size_t clip_len, std::size_t overlap,
                                        std::size_t video_id) {
    if (clip_len == 0) throw ConfigError("split_into_clips: clip length must be positive");
    if (overlap >= clip_len) {
        throw ConfigError("split_into_clips: overlap " + std::to_string(overlap) + " must be below clip length " +
                          std::to_string(clip_len));
    }
    if (video_length < clip_len) {
        throw ShapeError("split_into_clips: video of " + std::to_string(video_length) +
                         " frames is shorter than one clip of " + std::to_string(clip_len));
    }
    const std::size_t step = clip_len - overlap;
    std::vector<ClipIndex> clips;
    for (std::size_t s = 0; s + clip_len <= video_length; s += step) clips.push_back({video_id, s, clip_len});
    return clips;
}

Tensor slice_clip(const Tensor& frames, std::size_t start, std::size_t length) {
    require_frames(frames, "slice_clip");
    const std::size_t c = frames.dim(0), l = frames.dim(1), hw = frames.dim(2) * frames.dim(3);
    if (length == 0 || start + length > l) {
        throw ShapeError("slice_clip: frames [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside a video of " + std::to_string(l) + " frames");
    }
    Tensor out(Shape(std::vector<std::size_t>{c, length, frames.dim(2), frames.dim(3)}));
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = frames.data() + (ch * l + start) * hw;
        std::copy(src, src + length * hw, out.data() + ch * length * hw);
    }
    return out;
}

Tensor crop(const Tensor& clip, std::size_t top, std::size_t left, std::size_t crop_h, std::size_t crop_w) {
    require_frames(clip, "crop");
    const std::size_t c = clip.dim(0), l = clip.dim(1), h = clip.dim(2), w = clip.dim(3);
    if (crop_h == 0 || crop_w == 0 || top + crop_h > h || left + crop_w > w) {
        throw ShapeError("crop: window " + std::to_string(crop_h) + "x" + std::to_string(crop_w) + " at (" +
                         std::to_string(top) + ", " + std::to_string(left) + ") does not fit a " + std::to_string(h) +
                         "x" + std::to_string(w) + " frame");
    }
    Tensor out(Shape(std::vector<std::size_t>{c, l, crop_h, crop_w}));
    double* dst = out.data();
    for (std::size_t f = 0; f < c * l; ++f) {
        for (std::size_t y = 0; y < crop_h; ++y) {
            const double* src = clip.data() + (f * h + top + y) * w + left;
            std::copy(src, src + crop_w, dst);
            dst += crop_w;
        }
    }
    return out;
}

Tensor center_crop(const Tensor& clip, std::size_t crop_h, std::size_t crop_w) {
    require_frames(clip, "center_crop");
    const std::size_t h = clip.dim(2), w = clip.dim(3);
    if (crop_h > h || crop_w > w) {
        throw ShapeError("center_crop: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                         " larger than frame " + std::to_string(h) + "x" + std::to_string(w));
    }
    return crop(clip, (h - crop_h) / 2, (w - crop_w) / 2, crop_h, crop_w);
}

DatasetSplit split_dataset(const std::vector<VideoRecord>& records, double heldout_fraction, std::uint64_t seed) {
    if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) {
        throw ConfigError("split_dataset: held-out fraction must be in [0, 1)");
    }
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);

    std::vector<bool> heldout(records.size(), false);
    for (auto& [label, idx] : by_class) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = static_cast<std::size_t>(std::lround(heldout_fraction * static_cast<double>(idx.size())));
        for (std::size_t k = 0; k < n; ++k) heldout[idx[k]] = true;
    }
    DatasetSplit split;
    for (std::size_t i = 0; i < records.size(); ++i) {
        (heldout[i] ? split.heldout : split.train).push_back(records[i]);
    }
    return split;
}

}  // namespace c3d
