#include "c3d/descriptor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "c3d/binary_io.hpp"
#include "c3d/error.hpp"
#include "c3d/format.hpp"
#include "c3d/rng.hpp"
#include "c3d/trainer.hpp"

namespace c3d {

namespace {

constexpr std::uint32_t kDescVersion = 1;
constexpr std::size_t kChunk = 16;  // clips per forward pass

Tensor fit_clip(const Network& net, const Tensor& clip) {
    const ClipGeometry& g = net.spec().input;
    if (clip.shape().rank() != 4 || clip.dim(0) != g.channels || clip.dim(1) != g.length) {
        throw ShapeError("clip " + clip.shape().str() + " does not match network input " +
                         g.batch_shape(1).str());
    }
    if (clip.dim(2) == g.height && clip.dim(3) == g.width) return clip;
    return center_crop(clip, g.height, g.width);
}

}  // namespace

std::size_t feature_layer_index(const NetworkSpec& spec, std::string_view layer) {
    const auto idx = spec.find(layer);
    if (!idx) {
        std::string names;
        for (const auto& n : spec.layer_names()) names += (names.empty() ? "" : ", ") + n;
        throw ConfigError("unknown layer '" + std::string(layer) + "'; valid layers: " + names);
    }
    const auto& kind = spec.layers[*idx].kind;
    const bool has_nonlinearity = std::holds_alternative<ConvLayer>(kind) || std::holds_alternative<LinearLayer>(kind);
    if (has_nonlinearity && *idx + 1 < spec.layers.size() &&
        std::holds_alternative<ReluLayer>(spec.layers[*idx + 1].kind)) {
        return *idx + 1;
    }
    return *idx;
}

std::size_t feature_width(const Network& net, std::string_view layer) {
    return net.layer_shapes()[feature_layer_index(net.spec(), layer)].count();
}

std::vector<std::vector<std::vector<double>>> extract_features(const Network& net, std::span<const Tensor> clips,
                                                               std::span<const std::string> layers) {
    if (clips.empty()) throw ShapeError("extract_features: no clips");
    std::vector<std::size_t> idx;
    bool need_cache = false;
    for (const auto& l : layers) {
        idx.push_back(feature_layer_index(net.spec(), l));
        const auto& kind = net.spec().layers[idx.back()].kind;
        need_cache |= net.layer_shapes()[idx.back()].rank() == 5 && !std::holds_alternative<PoolLayer>(kind);
    }
    std::vector<std::vector<std::vector<double>>> out(layers.size());
    for (std::size_t b = 0; b < clips.size(); b += kChunk) {
        const std::size_t n = std::min(kChunk, clips.size() - b);
        std::vector<Tensor> fitted;
        for (std::size_t i = 0; i < n; ++i) fitted.push_back(fit_clip(net, clips[b + i]));
        const ForwardResult fwd = forward(net, stack_clips(fitted), need_cache);
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const Tensor& a = fwd.activations[idx[k]];
            const std::size_t width = a.size() / n;
            for (std::size_t i = 0; i < n; ++i) out[k].emplace_back(a.data() + i * width, a.data() + (i + 1) * width);
        }
    }
    return out;
}

std::vector<double> extract_clip_features(const Network& net, const Tensor& clip, std::string_view layer) {
    const std::string name(layer);
    return std::move(extract_features(net, std::span<const Tensor>(&clip, 1), std::span<const std::string>(&name, 1))[0][0]);
}

std::vector<double> l2_normalize(std::span<const double> v, bool* degenerate) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    std::vector<double> out(v.begin(), v.end());
    if (degenerate) *degenerate = ss == 0.0;
    if (ss == 0.0) return out;
    const double inv = 1.0 / std::sqrt(ss);
    for (double& x : out) x *= inv;
    return out;
}

VideoDescriptor descriptor_from_clip_features(std::string layer, const std::vector<std::vector<double>>& clip_features,
                                              std::size_t video_id) {
    if (clip_features.empty()) throw ShapeError("descriptor: no clip features");
    const std::size_t d = clip_features.front().size();
    for (const auto& f : clip_features) {
        if (f.size() != d) throw ShapeError("descriptor: clip features differ in width");
    }
    // Each coordinate is summed in ascending order, so the mean does not
    // depend on the order the clips arrive in, bit for bit.
    std::vector<double> mean(d, 0.0), column(clip_features.size());
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < column.size(); ++i) column[i] = clip_features[i][j];
        std::sort(column.begin(), column.end());
        for (double x : column) mean[j] += x;
        mean[j] /= static_cast<double>(column.size());
    }
    VideoDescriptor desc{std::move(layer), {}, video_id, false};
    desc.values = l2_normalize(mean, &desc.degenerate);
    return desc;
}

std::vector<VideoDescriptor> video_descriptors(const Network& net, const VideoRecord& video,
                                               std::span<const std::string> layers, std::size_t video_id,
                                               std::size_t overlap) {
    std::vector<Tensor> clips;
    for (const ClipIndex& c : split_into_clips(video.length(), kClipLength, overlap, video_id)) {
        clips.push_back(slice_clip(video.frames, c.start, c.length));
    }
    const auto feats = extract_features(net, clips, layers);
    std::vector<VideoDescriptor> out;
    for (std::size_t k = 0; k < layers.size(); ++k) out.push_back(descriptor_from_clip_features(layers[k], feats[k], video_id));
    return out;
}

VideoDescriptor video_descriptor(const Network& net, const VideoRecord& video, std::string_view layer,
                                 std::size_t video_id, std::size_t overlap) {
    const std::string name(layer);
    return std::move(video_descriptors(net, video, std::span<const std::string>(&name, 1), video_id, overlap)[0]);
}

std::vector<double> video_predict(const Network& net, const VideoRecord& video, std::size_t n_clips,
                                  std::uint64_t seed) {
    if (n_clips == 0) throw ConfigError("video_predict: n_clips must be positive");
    if (video.length() < kClipLength) {
        throw ShapeError("video_predict: video of " + std::to_string(video.length()) + " frames is shorter than " +
                         std::to_string(kClipLength));
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> start(0, video.length() - kClipLength);
    std::vector<Tensor> clips;
    for (std::size_t i = 0; i < n_clips; ++i) clips.push_back(slice_clip(video.frames, start(rng), kClipLength));
    const std::string prob = net.spec().layers.back().name;
    const auto feats = extract_features(net, clips, std::span<const std::string>(&prob, 1));
    std::vector<double> mean(feats[0][0].size(), 0.0);
    for (const auto& p : feats[0]) {
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += p[j];
    }
    for (double& x : mean) x /= static_cast<double>(n_clips);
    return mean;
}

std::size_t argmax(std::span<const double> scores) {
    if (scores.empty()) throw ShapeError("argmax of an empty vector");
    return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

void write_descriptors_csv(const std::filesystem::path& path, const std::vector<VideoDescriptor>& descriptors) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& d : descriptors) {
        out << d.video_id;
        for (double v : d.values) out << ',' << format_double(v);
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

void write_descriptors_bin(const std::filesystem::path& path, const std::vector<VideoDescriptor>& descriptors) {
    const std::size_t dim = descriptors.empty() ? 0 : descriptors.front().values.size();
    io::ByteWriter w;
    w.bytes("DESC");
    w.u32(kDescVersion);
    w.u32(static_cast<std::uint32_t>(descriptors.size()));
    w.u32(static_cast<std::uint32_t>(dim));
    for (const auto& d : descriptors) {
        if (d.values.size() != dim) throw ShapeError("write_descriptors_bin: descriptors differ in width");
        for (double v : d.values) w.f32(static_cast<float>(v));
    }
    w.write_file(path);
}

std::vector<std::vector<float>> read_descriptors_bin(const std::filesystem::path& path) {
    io::ByteReader r = io::ByteReader::from_file(path);
    r.set_context(path.string());
    r.expect_magic("DESC");
    const std::uint32_t version = r.u32();
    if (version != kDescVersion) throw FormatError(path.string() + ": unsupported DESC version " + std::to_string(version));
    const std::uint32_t count = r.u32(), dim = r.u32();
    if (static_cast<std::uint64_t>(count) * dim * 4 != r.remaining()) {
        throw FormatError(path.string() + ": payload size does not match " + std::to_string(count) + " x " +
                          std::to_string(dim) + " values");
    }
    std::vector<std::vector<float>> out(count, std::vector<float>(dim));
    for (auto& row : out) {
        for (float& v : row) v = r.f32();
    }
    return out;
}

}  // namespace c3d
