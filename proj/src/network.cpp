#include "c3d/network.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "c3d/binary_io.hpp"
#include "c3d/error.hpp"
#include "c3d/rng.hpp"

namespace c3d {
namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Shape shape_of(std::initializer_list<std::size_t> dims) { return Shape(std::vector<std::size_t>(dims)); }

std::vector<Shape> infer_layer_shapes(const NetworkSpec& spec, bool require_head);

struct ConvStage {
    std::vector<std::pair<std::string, std::size_t>> convs;  // name, filters
    std::vector<std::size_t> depths;
};

NetworkSpec stacked_spec(std::string name, const ClipGeometry& input, const std::vector<ConvStage>& stages,
                         std::size_t spatial_size, std::size_t fc_width, std::size_t class_count) {
    if (stages.size() != 5) throw ConfigError("network needs exactly five conv stages");
    if (class_count == 0) throw ConfigError("class count must be positive");
    NetworkSpec spec{std::move(name), input, {}, class_count};
    std::size_t channels = input.channels;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const ConvStage& st = stages[s];
        for (std::size_t i = 0; i < st.convs.size(); ++i) {
            const auto& [conv_name, filters] = st.convs[i];
            spec.layers.push_back({conv_name, ConvLayer{{filters, channels, st.depths[i], spatial_size}}});
            std::string relu_name = "relu" + conv_name.substr(4);
            spec.layers.push_back({relu_name, ReluLayer{}});
            channels = filters;
        }
        const PoolSpec pool = s == 0 ? PoolSpec{1, 2, 2} : PoolSpec{2, 2, 2};
        spec.layers.push_back({"pool" + std::to_string(s + 1), PoolLayer{pool}});
    }
    spec.layers.push_back({"flatten", FlattenLayer{}});
    const std::vector<Shape> shapes = infer_layer_shapes(spec, false);
    const std::size_t flat = shapes.back().count();
    spec.layers.push_back({"fc6", LinearLayer{flat, fc_width}});
    spec.layers.push_back({"relu6", ReluLayer{}});
    spec.layers.push_back({"fc7", LinearLayer{fc_width, fc_width}});
    spec.layers.push_back({"relu7", ReluLayer{}});
    spec.layers.push_back({"fc8", LinearLayer{fc_width, class_count}});
    spec.layers.push_back({"prob", SoftmaxLayer{}});
    (void)infer_shapes(spec);
    return spec;
}

std::vector<std::size_t> depths_for(std::string_view name) {
    if (name == "depth-1") return {1, 1, 1, 1, 1};
    if (name == "depth-3" || name == "net-64" || name == "net-128" || name == "net-256") return {3, 3, 3, 3, 3};
    if (name == "depth-5") return {5, 5, 5, 5, 5};
    if (name == "depth-7") return {7, 7, 7, 7, 7};
    if (name == "increase") return {3, 3, 5, 5, 7};
    if (name == "decrease") return {7, 5, 5, 3, 3};
    return {};
}

}  // namespace

Shape ClipGeometry::batch_shape(std::size_t batch) const {
    return shape_of({batch, channels, length, height, width});
}

std::optional<std::size_t> NetworkSpec::find(std::string_view layer) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].name == layer) return i;
    }
    return std::nullopt;
}

std::vector<std::string> NetworkSpec::layer_names() const {
    std::vector<std::string> names;
    names.reserve(layers.size());
    for (const auto& l : layers) names.push_back(l.name);
    return names;
}

namespace {

std::vector<Shape> infer_layer_shapes(const NetworkSpec& spec, bool require_head) {
    std::set<std::string> seen;
    std::vector<Shape> shapes;
    Shape cur = spec.input.batch_shape(1);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (!seen.insert(layer.name).second) throw ShapeError("duplicate layer name '" + layer.name + "'");
        auto fail = [&](const std::string& why) {
            throw ShapeError("layer '" + layer.name + "': " + why + " (input " + cur.str() + ")");
        };
        cur = std::visit(
            overloaded{
                [&](const ConvLayer& c) {
                    try {
                        c.kernel.validate();
                    } catch (const ShapeError& e) {
                        fail(e.what());
                    }
                    if (cur.rank() != 5) fail("convolution needs a 5D input");
                    if (cur[1] != c.kernel.in_channels) {
                        fail("expects " + std::to_string(c.kernel.in_channels) + " input channels");
                    }
                    return shape_of({cur[0], c.kernel.out_channels, cur[2], cur[3], cur[4]});
                },
                [&](const PoolLayer& p) {
                    if (cur.rank() != 5) fail("pooling needs a 5D input");
                    return p.pool.output_shape(cur);
                },
                [&](const ReluLayer&) { return cur; },
                [&](const FlattenLayer&) {
                    if (cur.rank() < 2) fail("flatten needs rank >= 2");
                    return shape_of({cur[0], cur.count() / cur[0]});
                },
                [&](const LinearLayer& l) {
                    if (cur.rank() != 2) fail("linear needs a flattened input");
                    if (cur[1] != l.in_features) fail("expects " + std::to_string(l.in_features) + " features");
                    if (l.out_features == 0) fail("zero output features");
                    return shape_of({cur[0], l.out_features});
                },
                [&](const SoftmaxLayer&) {
                    if (i + 1 != spec.layers.size()) fail("softmax must be the last layer");
                    if (cur.rank() != 2 || cur[1] != spec.class_count) {
                        fail("classifier width must equal class count " + std::to_string(spec.class_count));
                    }
                    return cur;
                },
            },
            layer.kind);
        shapes.push_back(cur);
    }
    if (require_head &&
        (spec.layers.empty() || !std::holds_alternative<SoftmaxLayer>(spec.layers.back().kind))) {
        throw ShapeError("network '" + spec.name + "' must end with a softmax classifier head");
    }
    return shapes;
}

}  // namespace

std::vector<Shape> infer_shapes(const NetworkSpec& spec) { return infer_layer_shapes(spec, true); }

NetworkSpec depth_family_spec(std::string name, std::span<const std::size_t> depths,
                              const FamilyGeometry& geometry, std::size_t class_count) {
    if (depths.size() != 5 || geometry.filters.size() != 5) {
        throw ConfigError("depth family needs five temporal depths and five filter counts");
    }
    std::vector<ConvStage> stages;
    for (std::size_t s = 0; s < 5; ++s) {
        stages.push_back({{{"conv" + std::to_string(s + 1), geometry.filters[s]}}, {depths[s]}});
    }
    return stacked_spec(std::move(name), geometry.input, stages, geometry.spatial_size, geometry.fc_width,
                        class_count);
}

std::vector<std::string> preset_names() {
    return {"depth-1", "depth-3", "depth-5", "depth-7", "increase", "decrease",
            "net-64",  "net-128", "net-256", "c3d"};
}

std::vector<std::size_t> preset_depths(std::string_view name) {
    auto d = depths_for(name);
    if (d.empty()) throw ConfigError("'" + std::string(name) + "' is not a depth-family preset");
    return d;
}

NetworkSpec preset_spec(std::string_view name, std::size_t class_count) {
    if (name == "c3d") {
        const ClipGeometry input{3, 16, 112, 112};
        std::vector<ConvStage> stages = {
            {{{"conv1a", 64}}, {3}},
            {{{"conv2a", 128}}, {3}},
            {{{"conv3a", 256}, {"conv3b", 256}}, {3, 3}},
            {{{"conv4a", 512}, {"conv4b", 512}}, {3, 3}},
            {{{"conv5a", 512}, {"conv5b", 512}}, {3, 3}},
        };
        return stacked_spec("c3d", input, stages, 3, 4096, class_count);
    }
    const std::vector<std::size_t> depths = depths_for(name);
    if (depths.empty()) {
        std::string known;
        for (const auto& n : preset_names()) known += " " + n;
        throw ConfigError("unknown preset '" + std::string(name) + "'; known:" + known);
    }
    FamilyGeometry g;
    if (name == "net-64") g.input.height = g.input.width = 64;
    // The 256-pixel network consumes 224x224 crops.
    if (name == "net-256") g.input.height = g.input.width = 224;
    return depth_family_spec(std::string(name), depths, g, class_count);
}

Network::Network(NetworkSpec spec, std::vector<Parameter> params)
    : spec_(std::move(spec)), params_(std::move(params)), shapes_(infer_shapes(spec_)) {
    weight_of_layer_.assign(spec_.layers.size(), std::nullopt);
    std::size_t p = 0;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const LayerSpec& layer = spec_.layers[i];
        std::optional<std::pair<Shape, Shape>> expected;
        if (const auto* c = std::get_if<ConvLayer>(&layer.kind)) {
            expected.emplace(c->kernel.weight_shape(), c->kernel.bias_shape());
        } else if (const auto* l = std::get_if<LinearLayer>(&layer.kind)) {
            expected.emplace(shape_of({l->out_features, l->in_features}), shape_of({l->out_features}));
        }
        if (!expected) continue;
        if (p + 2 > params_.size()) throw ShapeError("layer '" + layer.name + "': missing parameters");
        if (params_[p].value.shape() != expected->first || params_[p + 1].value.shape() != expected->second) {
            throw ShapeError("layer '" + layer.name + "': parameter shapes " + params_[p].value.shape().str() +
                             "/" + params_[p + 1].value.shape().str() + " expected " +
                             expected->first.str() + "/" + expected->second.str());
        }
        params_[p].layer = params_[p + 1].layer = i;
        weight_of_layer_[i] = p;
        p += 2;
    }
    if (p != params_.size()) throw ShapeError("network '" + spec_.name + "': too many parameter tensors");
}

std::optional<std::size_t> Network::weight_index(std::size_t layer) const {
    return weight_of_layer_.at(layer);
}

std::size_t Network::element_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

Network build(const NetworkSpec& spec, std::uint64_t seed, double init_gain) {
    (void)infer_shapes(spec);
    std::vector<Parameter> params;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        Shape ws, bs;
        if (const auto* c = std::get_if<ConvLayer>(&layer.kind)) {
            ws = c->kernel.weight_shape();
            bs = c->kernel.bias_shape();
        } else if (const auto* l = std::get_if<LinearLayer>(&layer.kind)) {
            ws = shape_of({l->out_features, l->in_features});
            bs = shape_of({l->out_features});
        } else {
            continue;
        }
        params.push_back({layer.name + ".weight", i, tensor_random_init(ws, UniformFanIn{init_gain}, derive_seed(seed, i))});
        params.push_back({layer.name + ".bias", i, tensor_random_init(bs, ConstantFill{0.0}, 0)});
    }
    return Network(spec, std::move(params));
}

const Tensor& ForwardResult::activation(const NetworkSpec& spec, std::string_view layer) const {
    const auto idx = spec.find(layer);
    if (!idx) throw ConfigError("no layer named '" + std::string(layer) + "'");
    const Tensor& t = activations.at(*idx);
    if (t.size() == 0) throw Error("activation '" + std::string(layer) + "' was not retained");
    return t;
}

ForwardResult forward(const Network& net, const Tensor& batch, bool keep_cache) {
    const NetworkSpec& spec = net.spec();
    const Shape& bs = batch.shape();
    if (bs.rank() != 5 || spec.input.batch_shape(bs[0]) != bs) {
        throw ShapeError("forward: batch " + bs.str() + " does not match network input " +
                         spec.input.batch_shape(bs.rank() == 5 ? bs[0] : 1).str());
    }
    ForwardResult r;
    r.cached = keep_cache;
    if (keep_cache) r.input = batch;
    r.activations.resize(spec.layers.size());
    r.switches.resize(spec.layers.size());
    auto params = net.params();
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const Tensor& in = i == 0 ? batch : r.activations[i - 1];
        const auto wi = net.weight_index(i);
        std::visit(overloaded{
                       [&](const ConvLayer& c) {
                           r.activations[i] =
                               conv3d_forward(in, params[*wi].value, params[*wi + 1].value, c.kernel);
                       },
                       [&](const PoolLayer& p) {
                           PoolResult pr = maxpool3d_forward(in, p.pool);
                           r.activations[i] = std::move(pr.output);
                           if (keep_cache) r.switches[i] = std::move(pr.switches);
                       },
                       [&](const ReluLayer&) { r.activations[i] = relu(in); },
                       [&](const FlattenLayer&) {
                           r.activations[i] = in.reshaped(shape_of({in.dim(0), in.size() / in.dim(0)}));
                       },
                       [&](const LinearLayer&) {
                           r.activations[i] = linear_forward(in, params[*wi].value, params[*wi + 1].value);
                       },
                       [&](const SoftmaxLayer&) { r.activations[i] = softmax(in); },
                   },
                   spec.layers[i].kind);
        if (!keep_cache && i > 0 && r.activations[i - 1].shape().rank() == 5 &&
            !std::holds_alternative<PoolLayer>(spec.layers[i - 1].kind)) {
            r.activations[i - 1] = Tensor();
        }
    }
    return r;
}

std::size_t logits_layer(const NetworkSpec& spec) {
    if (spec.layers.size() < 2) throw ShapeError("network has no classifier");
    return spec.layers.size() - 2;
}

std::vector<Tensor> backward(const Network& net, const ForwardResult& fwd, const Tensor& grad_logits) {
    if (!fwd.cached) throw Error("backward: forward pass was run without a cache");
    const NetworkSpec& spec = net.spec();
    const std::size_t last = logits_layer(spec);
    if (grad_logits.shape() != fwd.activations[last].shape()) {
        throw ShapeError("backward: gradient " + grad_logits.shape().str() + " does not match logits " +
                         fwd.activations[last].shape().str());
    }
    auto params = net.params();
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const auto& p : params) grads.emplace_back(p.value.shape());

    Tensor g = grad_logits;
    for (std::size_t step = 0; step <= last; ++step) {
        const std::size_t i = last - step;
        const Tensor& in = i == 0 ? fwd.input : fwd.activations[i - 1];
        const auto wi = net.weight_index(i);
        std::visit(overloaded{
                       [&](const ConvLayer& c) {
                           ConvGrads cg = conv3d_backward(in, params[*wi].value, g, c.kernel, i > 0);
                           grads[*wi] = std::move(cg.weights);
                           grads[*wi + 1] = std::move(cg.bias);
                           g = std::move(cg.input);
                       },
                       [&](const PoolLayer&) {
                           g = maxpool3d_backward(*fwd.switches[i], g, in.shape());
                       },
                       [&](const ReluLayer&) { g = relu_backward(in, g); },
                       [&](const FlattenLayer&) { g = std::move(g).reshaped(in.shape()); },
                       [&](const LinearLayer&) {
                           LinearGrads lg = linear_backward(in, params[*wi].value, g);
                           grads[*wi] = std::move(lg.weights);
                           grads[*wi + 1] = std::move(lg.bias);
                           g = std::move(lg.input);
                       },
                       [&](const SoftmaxLayer&) {},
                   },
                   spec.layers[i].kind);
    }
    return grads;
}

LossAndGrads loss_and_gradients(const Network& net, const Tensor& batch, std::span<const int> labels) {
    ForwardResult fwd = forward(net, batch, true);
    SoftmaxResult sm = softmax_xent(fwd.activations[logits_layer(net.spec())], labels);
    return {sm.loss, std::move(sm.probs), backward(net, fwd, sm.grad_logits)};
}

ParamCount count_params(const NetworkSpec& spec) {
    (void)infer_shapes(spec);
    ParamCount pc;
    for (const LayerSpec& layer : spec.layers) {
        if (const auto* c = std::get_if<ConvLayer>(&layer.kind)) {
            const auto& k = c->kernel;
            pc.layers.push_back({layer.name,
                                 static_cast<std::uint64_t>(k.out_channels) * k.in_channels * k.temporal_depth *
                                     k.spatial_size * k.spatial_size,
                                 k.out_channels});
        } else if (const auto* l = std::get_if<LinearLayer>(&layer.kind)) {
            pc.layers.push_back(
                {layer.name, static_cast<std::uint64_t>(l->out_features) * l->in_features, l->out_features});
        }
    }
    for (const auto& l : pc.layers) pc.total += l.weights + l.biases;
    return pc;
}

namespace {
constexpr std::uint32_t kWeightVersion = 1;
}

void save_weights(const Network& net, const std::filesystem::path& path) {
    io::ByteWriter w;
    w.bytes("C3DW");
    w.u32(kWeightVersion);
    w.u32(static_cast<std::uint32_t>(net.params().size()));
    for (const Parameter& p : net.params()) {
        w.u32(static_cast<std::uint32_t>(p.name.size()));
        w.bytes(p.name);
        const auto& dims = p.value.shape().dims();
        w.u32(static_cast<std::uint32_t>(dims.size()));
        for (std::size_t d : dims) w.u32(static_cast<std::uint32_t>(d));
        for (double v : p.value.values()) w.f32(static_cast<float>(v));
    }
    w.write_file(path);
}

Network load_weights(const NetworkSpec& spec, const std::filesystem::path& path) {
    io::ByteReader r = io::ByteReader::from_file(path);
    r.expect_magic("C3DW");
    if (const std::uint32_t v = r.u32(); v != kWeightVersion) {
        throw FormatError(path.string() + ": unsupported weight file version " + std::to_string(v));
    }
    // Expected parameter layout comes from a freshly validated spec.
    const ParamCount pc = count_params(spec);
    const std::uint32_t records = r.u32();
    if (records != pc.layers.size() * 2) {
        throw ShapeError(path.string() + ": " + std::to_string(records) + " records, network '" + spec.name +
                         "' has " + std::to_string(pc.layers.size() * 2) + " parameter tensors");
    }
    std::vector<Parameter> params;
    for (std::uint32_t rec = 0; rec < records; ++rec) {
        r.set_context(path.string() + " record " + std::to_string(rec));
        const std::uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        const std::uint32_t ndim = r.u32();
        if (ndim == 0 || ndim > Shape::kMaxRank) throw FormatError(name + ": invalid rank " + std::to_string(ndim));
        std::vector<std::size_t> dims(ndim);
        for (auto& d : dims) d = r.u32();
        Shape shape(dims);
        const std::string& layer = pc.layers[rec / 2].layer;
        const std::string expected_name = layer + (rec % 2 == 0 ? ".weight" : ".bias");
        if (name != expected_name) {
            throw ShapeError("layer '" + layer + "': record named '" + name + "', expected '" + expected_name + "'");
        }
        const std::uint64_t expected_count = rec % 2 == 0 ? pc.layers[rec / 2].weights : pc.layers[rec / 2].biases;
        if (shape.count() != expected_count) {
            throw ShapeError("layer '" + layer + "': stored " + name + " has shape " + shape.str() +
                             " which does not fit the network");
        }
        Tensor t(shape);
        for (double& v : t.values()) v = static_cast<double>(r.f32());
        params.push_back({std::move(name), 0, std::move(t)});
    }
    if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after last record");
    return Network(spec, std::move(params));
}

}  // namespace c3d
