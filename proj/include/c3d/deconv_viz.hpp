#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "c3d/network.hpp"

namespace c3d {

/// How the reverse pass treats ReLU layers.
enum class ReluGating {
    own_sign,     // keep positive parts of the reverse signal (deconvnet)
    forward_mask  // keep entries whose forward input was positive
};

struct DeconvRequest {
    std::string layer;    // conv names resolve to their ReLU output
    std::size_t channel = 0;
    std::optional<std::array<std::size_t, 3>> position;  // (t, y, x); empty selects the channel's top activation
    double scale = 1.0;   // multiplies the kept activation
    ReluGating gating = ReluGating::own_sign;
};

/// Projects one activation of a (c, l, h, w) clip back to pixel space.
/// Result has the clip's shape.
[[nodiscard]] Tensor deconv_feature_map(const Network& net, const Tensor& clip, const DeconvRequest& request);

/// Reverse chain from layer `layer` (inclusive) down to the input for an
/// arbitrary signal shaped like that layer's batch-1 output. fwd must come
/// from forward(..., keep_cache = true) on a batch of one clip.
[[nodiscard]] Tensor deconv_project(const Network& net, const ForwardResult& fwd, std::size_t layer,
                                    const Tensor& signal, ReluGating gating);

struct RankedActivation {
    std::size_t clip = 0;
    std::array<std::size_t, 3> position{};  // (t, y, x)
    double value = 0.0;
};

/// All activations of one channel over a clip set, descending by value, ties
/// by (clip index, flat position); at most `count` entries.
[[nodiscard]] std::vector<RankedActivation> top_activations(const Network& net, std::span<const Tensor> clips,
                                                            std::string_view layer, std::size_t channel,
                                                            std::size_t count);

/// Frame t of a (c, l, h, w) volume as 8-bit pixels, interleaved for c = 3:
/// min-max normalized to [0, 255], constant frames rendered as 128.
[[nodiscard]] std::vector<std::uint8_t> frame_to_bytes(const Tensor& clip, std::size_t t);

/// Writes frame_0000.pgm (c = 1) or .ppm (c = 3) files, one per frame.
std::vector<std::filesystem::path> write_image_sequence(const Tensor& clip, const std::filesystem::path& dir);

struct PnmImage {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;
};
[[nodiscard]] PnmImage read_pnm(const std::filesystem::path& path);

}  // namespace c3d
