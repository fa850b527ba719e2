#include "c3d/deconv_viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "c3d/descriptor.hpp"
#include "c3d/error.hpp"
#include "c3d/trainer.hpp"

namespace c3d {

namespace {

Tensor as_batch(const Tensor& clip) {
    const Shape& s = clip.shape();
    if (s.rank() != 4) throw ShapeError("expected a (c, l, h, w) clip, got " + s.str());
    return clip.reshaped(Shape(std::vector<std::size_t>{1, s[0], s[1], s[2], s[3]}));
}

std::size_t spatial_layer(const NetworkSpec& spec, const std::vector<Shape>& shapes, std::string_view name) {
    const std::size_t idx = feature_layer_index(spec, name);
    if (shapes[idx].rank() != 5) {
        throw ConfigError("layer '" + std::string(name) + "' has no spatio-temporal feature maps");
    }
    return idx;
}

}  // namespace

Tensor deconv_project(const Network& net, const ForwardResult& fwd, std::size_t layer, const Tensor& signal,
                      ReluGating gating) {
    const NetworkSpec& spec = net.spec();
    if (!fwd.cached) throw Error("deconv_project: forward pass was run without its cache");
    if (layer >= spec.layers.size()) throw ConfigError("deconv_project: layer index out of range");
    if (signal.shape() != fwd.activations[layer].shape()) {
        throw ShapeError("deconv_project: signal " + signal.shape().str() + " does not match layer output " +
                         fwd.activations[layer].shape().str());
    }
    auto params = net.params();
    Tensor s = signal;
    for (std::size_t i = layer + 1; i-- > 0;) {
        const Tensor& input = i == 0 ? fwd.input : fwd.activations[i - 1];
        const auto& kind = spec.layers[i].kind;
        if (std::holds_alternative<ReluLayer>(kind)) {
            if (gating == ReluGating::own_sign) {
                for (double& v : s.values()) v = v > 0.0 ? v : 0.0;
            } else {
                s = relu_backward(input, s);
            }
        } else if (std::holds_alternative<PoolLayer>(kind)) {
            s = maxpool3d_backward(*fwd.switches[i], s, input.shape());
        } else if (const auto* c = std::get_if<ConvLayer>(&kind)) {
            s = conv3d_backward_input(params[*net.weight_index(i)].value, s, c->kernel);
        } else {
            throw ConfigError("deconv_project: cannot reverse layer '" + spec.layers[i].name + "'");
        }
    }
    return s;
}

Tensor deconv_feature_map(const Network& net, const Tensor& clip, const DeconvRequest& request) {
    const NetworkSpec& spec = net.spec();
    const Tensor batch = as_batch(clip);
    const std::size_t idx = spatial_layer(spec, net.layer_shapes(), request.layer);
    const Shape& ls = net.layer_shapes()[idx];
    if (request.channel >= ls[1]) {
        throw ConfigError("deconv: channel " + std::to_string(request.channel) + " outside layer '" + request.layer +
                          "' with " + std::to_string(ls[1]) + " channels");
    }
    const ForwardResult fwd = forward(net, batch, true);
    const Tensor& act = fwd.activations[idx];
    const std::size_t plane = ls[2] * ls[3] * ls[4];
    const std::size_t base = request.channel * plane;

    std::size_t flat = 0;
    if (request.position) {
        const auto [t, y, x] = *request.position;
        if (t >= ls[2] || y >= ls[3] || x >= ls[4]) {
            throw ConfigError("deconv: position (" + std::to_string(t) + ", " + std::to_string(y) + ", " +
                              std::to_string(x) + ") outside layer '" + request.layer + "' extents " + ls.str());
        }
        flat = (t * ls[3] + y) * ls[4] + x;
    } else {
        const double* p = act.data() + base;
        flat = static_cast<std::size_t>(std::max_element(p, p + plane) - p);
    }
    Tensor signal(act.shape());
    signal[base + flat] = request.scale * act[base + flat];
    Tensor out = deconv_project(net, fwd, idx, signal, request.gating);
    return std::move(out).reshaped(clip.shape());
}

std::vector<RankedActivation> top_activations(const Network& net, std::span<const Tensor> clips,
                                              std::string_view layer, std::size_t channel, std::size_t count) {
    if (clips.empty()) throw ConfigError("top_activations: no clips");
    const std::size_t idx = spatial_layer(net.spec(), net.layer_shapes(), layer);
    const Shape& ls = net.layer_shapes()[idx];
    if (channel >= ls[1]) throw ConfigError("top_activations: channel " + std::to_string(channel) + " out of range");
    const std::string name(layer);
    const auto feats = extract_features(net, clips, std::span<const std::string>(&name, 1));
    const std::size_t plane = ls[2] * ls[3] * ls[4];

    std::vector<RankedActivation> all;
    all.reserve(clips.size() * plane);
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const double* p = feats[0][c].data() + channel * plane;
        for (std::size_t f = 0; f < plane; ++f) {
            all.push_back({c, {f / (ls[3] * ls[4]), (f / ls[4]) % ls[3], f % ls[4]}, p[f]});
        }
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const RankedActivation& a, const RankedActivation& b) { return a.value > b.value; });
    all.resize(std::min(count, all.size()));
    return all;
}

std::vector<std::uint8_t> frame_to_bytes(const Tensor& clip, std::size_t t) {
    if (clip.shape().rank() != 4) throw ShapeError("frame_to_bytes: expected (c, l, h, w), got " + clip.shape().str());
    const std::size_t c = clip.dim(0), l = clip.dim(1), hw = clip.dim(2) * clip.dim(3);
    if (t >= l) throw ShapeError("frame_to_bytes: frame index out of range");
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = clip.data() + (ch * l + t) * hw;
        const auto [mn, mx] = std::minmax_element(p, p + hw);
        lo = std::min(lo, *mn);
        hi = std::max(hi, *mx);
    }
    std::vector<std::uint8_t> out(c * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = clip.data() + (ch * l + t) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            out[i * c + ch] = hi > lo ? static_cast<std::uint8_t>(std::lround(255.0 * (p[i] - lo) / (hi - lo))) : 128;
        }
    }
    return out;
}

std::vector<std::filesystem::path> write_image_sequence(const Tensor& clip, const std::filesystem::path& dir) {
    if (clip.shape().rank() != 4) throw ShapeError("write_image_sequence: expected (c, l, h, w)");
    const std::size_t c = clip.dim(0);
    if (c != 1 && c != 3) throw ShapeError("write_image_sequence: 1 or 3 channels required");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> paths;
    for (std::size_t t = 0; t < clip.dim(1); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.%s", t, c == 1 ? "pgm" : "ppm");
        const auto path = dir / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        out << (c == 1 ? "P5" : "P6") << '\n' << clip.dim(3) << ' ' << clip.dim(2) << "\n255\n";
        const auto bytes = frame_to_bytes(clip, t);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing " + path.string());
        paths.push_back(path);
    }
    return paths;
}

PnmImage read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string magic;
    std::size_t maxval = 0;
    PnmImage img;
    in >> magic >> img.width >> img.height >> maxval;
    if (!in || (magic != "P5" && magic != "P6") || maxval != 255 || img.width == 0 || img.height == 0) {
        throw FormatError(path.string() + ": unsupported PNM header");
    }
    in.get();  // single whitespace before the raster
    img.channels = magic == "P5" ? 1 : 3;
    img.pixels.resize(img.channels * img.width * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
        throw FormatError(path.string() + ": truncated raster");
    }
    return img;
}

}  // namespace c3d
