#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "c3d/network.hpp"
#include "c3d/videodata.hpp"

namespace c3d {

struct VideoDescriptor {
    std::string layer;
    std::vector<double> values;
    std::size_t video_id = 0;
    bool degenerate = false;  // the clip mean was all zero; values are zero
};

/// Layer whose output is used as the feature for a requested name: a conv or
/// fc layer followed by a ReLU resolves to that ReLU ("fc6" means relu6's
/// output). Unknown names raise ConfigError listing the valid names.
[[nodiscard]] std::size_t feature_layer_index(const NetworkSpec& spec, std::string_view layer);

/// Width of a feature layer's flattened output.
[[nodiscard]] std::size_t feature_width(const Network& net, std::string_view layer);

/// Flattened feature of one (c, 16, h, w) clip; frames larger than the
/// network input are center-cropped first.
[[nodiscard]] std::vector<double> extract_clip_features(const Network& net, const Tensor& clip, std::string_view layer);

/// Per-clip features for several layers from one batched forward pass.
/// Result is indexed [layer][clip].
[[nodiscard]] std::vector<std::vector<std::vector<double>>> extract_features(const Network& net,
                                                                             std::span<const Tensor> clips,
                                                                             std::span<const std::string> layers);

/// L2 normalization; a zero vector stays zero and sets *degenerate.
[[nodiscard]] std::vector<double> l2_normalize(std::span<const double> v, bool* degenerate = nullptr);

/// Mean of clip features followed by L2 normalization.
[[nodiscard]] VideoDescriptor descriptor_from_clip_features(std::string layer,
                                                            const std::vector<std::vector<double>>& clip_features,
                                                            std::size_t video_id = 0);

/// Descriptor over the overlap-8 clips of a video.
[[nodiscard]] VideoDescriptor video_descriptor(const Network& net, const VideoRecord& video, std::string_view layer,
                                               std::size_t video_id = 0, std::size_t overlap = 8);

/// One descriptor per layer, sharing the forward passes.
[[nodiscard]] std::vector<VideoDescriptor> video_descriptors(const Network& net, const VideoRecord& video,
                                                             std::span<const std::string> layers,
                                                             std::size_t video_id = 0, std::size_t overlap = 8);

/// Mean class probabilities over n_clips seeded random 16-frame windows,
/// each center-cropped.
[[nodiscard]] std::vector<double> video_predict(const Network& net, const VideoRecord& video,
                                                std::size_t n_clips = 10, std::uint64_t seed = 1);

/// Index of the largest score; ties go to the lowest index.
[[nodiscard]] std::size_t argmax(std::span<const double> scores);

/// CSV rows: video_id, then the values.
void write_descriptors_csv(const std::filesystem::path& path, const std::vector<VideoDescriptor>& descriptors);

/// Little-endian "DESC" v1: u32 count, u32 dim, then count * dim float32.
void write_descriptors_bin(const std::filesystem::path& path, const std::vector<VideoDescriptor>& descriptors);
[[nodiscard]] std::vector<std::vector<float>> read_descriptors_bin(const std::filesystem::path& path);

}  // namespace c3d
