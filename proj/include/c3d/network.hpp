#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "c3d/nn_ops.hpp"
#include "c3d/tensor.hpp"

namespace c3d {

struct ConvLayer {
    ConvKernelSpec kernel;
};
struct PoolLayer {
    PoolSpec pool;
};
struct ReluLayer {};
struct FlattenLayer {};
struct LinearLayer {
    std::size_t in_features = 0;
    std::size_t out_features = 0;
};
/// Classifier head: turns logits into probabilities. Training pairs it with
/// cross-entropy.
struct SoftmaxLayer {};

using LayerKind = std::variant<ConvLayer, PoolLayer, ReluLayer, FlattenLayer, LinearLayer, SoftmaxLayer>;

struct LayerSpec {
    std::string name;
    LayerKind kind;
};

/// Input geometry of a clip: channels, frames, height, width.
struct ClipGeometry {
    std::size_t channels = 3;
    std::size_t length = 16;
    std::size_t height = 112;
    std::size_t width = 112;

    [[nodiscard]] Shape batch_shape(std::size_t batch) const;
    friend bool operator==(const ClipGeometry&, const ClipGeometry&) = default;
};

struct NetworkSpec {
    std::string name;
    ClipGeometry input;
    std::vector<LayerSpec> layers;
    std::size_t class_count = 0;

    [[nodiscard]] std::optional<std::size_t> find(std::string_view layer) const;
    [[nodiscard]] std::vector<std::string> layer_names() const;
};

/// Output shape (batch 1) of every layer. Throws ShapeError naming the first
/// layer whose input does not compose.
[[nodiscard]] std::vector<Shape> infer_shapes(const NetworkSpec& spec);

/// Knobs of the five-conv family. The defaults are the full-size settings;
/// shrinking them gives desk-scale networks with the same layer structure.
struct FamilyGeometry {
    ClipGeometry input{};
    std::vector<std::size_t> filters{64, 128, 256, 256, 256};
    std::size_t fc_width = 2048;
    std::size_t spatial_size = 3;
};

/// Five conv+pool stages with per-stage temporal depths, two fc layers and a
/// classifier. pool1 is 1x2x2, the rest 2x2x2.
[[nodiscard]] NetworkSpec depth_family_spec(std::string name, std::span<const std::size_t> depths,
                                            const FamilyGeometry& geometry, std::size_t class_count);

/// Recognized names: depth-1, depth-3, depth-5, depth-7, increase, decrease,
/// net-64, net-128, net-256, c3d.
[[nodiscard]] NetworkSpec preset_spec(std::string_view name, std::size_t class_count);
[[nodiscard]] std::vector<std::string> preset_names();
/// Temporal depths of the conv layers of a named depth-family preset.
[[nodiscard]] std::vector<std::size_t> preset_depths(std::string_view name);

struct Parameter {
    std::string name;  // "<layer>.weight" or "<layer>.bias"
    std::size_t layer = 0;
    Tensor value;
};

class Network {
public:
    Network(NetworkSpec spec, std::vector<Parameter> params);

    [[nodiscard]] const NetworkSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] std::span<const Parameter> params() const noexcept { return params_; }
    [[nodiscard]] std::span<Parameter> params() noexcept { return params_; }
    [[nodiscard]] const std::vector<Shape>& layer_shapes() const noexcept { return shapes_; }

    /// Index of the weight parameter of a layer; its bias follows it.
    [[nodiscard]] std::optional<std::size_t> weight_index(std::size_t layer) const;
    [[nodiscard]] std::size_t element_count() const noexcept;

private:
    NetworkSpec spec_;
    std::vector<Parameter> params_;
    std::vector<Shape> shapes_;
    std::vector<std::optional<std::size_t>> weight_of_layer_;
};

/// Weights drawn uniform-fan-in (scaled by init_gain), biases zero;
/// deterministic in seed.
[[nodiscard]] Network build(const NetworkSpec& spec, std::uint64_t seed, double init_gain = 1.0);

/// Activations of one forward pass plus what backward needs.
struct ForwardResult {
    Tensor input;
    std::vector<Tensor> activations;                 // one per layer, in layer order
    std::vector<std::optional<PoolSwitches>> switches;  // set for pool layers
    bool cached = false;

    [[nodiscard]] const Tensor& activation(const NetworkSpec& spec, std::string_view layer) const;
};

/// Runs the layer chain on a (n, c, l, h, w) batch. With keep_cache=false
/// conv and ReLU outputs are released as soon as they are consumed and
/// switches are dropped, so backward and deconvolution are unavailable.
[[nodiscard]] ForwardResult forward(const Network& net, const Tensor& batch, bool keep_cache = true);

/// Parameter gradients given dLoss/dlogits (the classifier layer output).
/// One tensor per parameter, same order and shapes as Network::params().
[[nodiscard]] std::vector<Tensor> backward(const Network& net, const ForwardResult& fwd,
                                           const Tensor& grad_logits);

struct LossAndGrads {
    double loss = 0.0;
    Tensor probs;
    std::vector<Tensor> grads;
};
[[nodiscard]] LossAndGrads loss_and_gradients(const Network& net, const Tensor& batch,
                                              std::span<const int> labels);

/// Index of the classifier (last linear) layer.
[[nodiscard]] std::size_t logits_layer(const NetworkSpec& spec);

struct LayerParamCount {
    std::string layer;
    std::uint64_t weights = 0;
    std::uint64_t biases = 0;
};
struct ParamCount {
    std::vector<LayerParamCount> layers;
    std::uint64_t total = 0;
};
/// Closed-form count from the spec alone, biases included.
[[nodiscard]] ParamCount count_params(const NetworkSpec& spec);

/// Little-endian "C3DW" v1 file; values are stored as float32.
void save_weights(const Network& net, const std::filesystem::path& path);
[[nodiscard]] Network load_weights(const NetworkSpec& spec, const std::filesystem::path& path);

}  // namespace c3d
