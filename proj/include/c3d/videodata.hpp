#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "c3d/tensor.hpp"

namespace c3d {

/// A labeled video; frames is (c, l, h, w) with values in [0, 1].
struct VideoRecord {
    int label = 0;
    Tensor frames;

    [[nodiscard]] std::size_t channels() const { return frames.dim(0); }
    [[nodiscard]] std::size_t length() const { return frames.dim(1); }
    [[nodiscard]] std::size_t height() const { return frames.dim(2); }
    [[nodiscard]] std::size_t width() const { return frames.dim(3); }
};

enum class BlobMode { motion, appearance };

/// Moving-blob videos on a toroidal canvas.
///
/// In motion mode the label is the direction of travel: class c moves at
/// angle 2*pi*c/classes, so class c and c + classes/2 are reversals of each
/// other. Shape, size, intensity and start position are drawn from the same
/// distribution for every class and wrap-around keeps each frame's position
/// uniform, so a single frame carries no label information.
///
/// In appearance mode the label is the blob shape and motion is drawn
/// identically for every class.
struct MotionBlobsConfig {
    BlobMode mode = BlobMode::motion;
    std::size_t classes = 8;
    std::size_t videos_per_class = 50;
    std::size_t channels = 1;
    std::size_t length = 32;
    std::size_t height = 128;
    std::size_t width = 171;
    std::size_t blobs_min = 1;
    std::size_t blobs_max = 2;
    std::size_t blob_size_min = 5;
    std::size_t blob_size_max = 9;
    double speed_min = 1.0;  // pixels per frame
    double speed_max = 2.0;
    double noise = 0.05;     // per-pixel Gaussian noise std, in [0,1] units
    std::size_t first_glyph = 0;  // appearance mode: class c uses glyph first_glyph + c
    double angle_offset = 0.0;    // motion mode: class c moves at 2*pi*(c + angle_offset)/classes
    std::uint64_t seed = 1;

    void validate() const;
};

/// Records ordered by class then index within class.
[[nodiscard]] std::vector<VideoRecord> generate_motionblobs(const MotionBlobsConfig& config);
void generate_motionblobs_file(const MotionBlobsConfig& config, const std::filesystem::path& path);

/// Binary mask of the blob shape used for a class in appearance mode; also the
/// pool motion mode draws from. Deterministic in the index, independent of seeds.
[[nodiscard]] std::vector<std::uint8_t> blob_glyph(std::size_t index, std::size_t size);

/// Little-endian "VSET" v1 dataset files with 8-bit pixels.
void write_dataset(const std::filesystem::path& path, const std::vector<VideoRecord>& records);
[[nodiscard]] std::vector<VideoRecord> load_dataset(const std::filesystem::path& path);

/// Bilinear resize of every frame, corner-aligned sampling.
[[nodiscard]] VideoRecord resize_frames(const VideoRecord& video, std::size_t out_h, std::size_t out_w);

struct ClipIndex {
    std::size_t video = 0;
    std::size_t start = 0;
    std::size_t length = 16;

    friend bool operator==(const ClipIndex&, const ClipIndex&) = default;
};

inline constexpr std::size_t kClipLength = 16;

/// Clip windows starting at 0 with step clip_len - overlap; trailing frames
/// that cannot fill a clip are dropped.
[[nodiscard]] std::vector<ClipIndex> split_into_clips(std::size_t video_length, std::size_t clip_len,
                                                      std::size_t overlap, std::size_t video_id = 0);

/// Frames [start, start + length) of a (c, l, h, w) volume.
[[nodiscard]] Tensor slice_clip(const Tensor& frames, std::size_t start, std::size_t length);

/// Spatial window of a (c, l, h, w) volume at offsets floor((in - crop) / 2).
[[nodiscard]] Tensor center_crop(const Tensor& clip, std::size_t crop_h, std::size_t crop_w);
/// Spatial window at explicit offsets.
[[nodiscard]] Tensor crop(const Tensor& clip, std::size_t top, std::size_t left, std::size_t crop_h,
                          std::size_t crop_w);

/// Stratified split: the first round(fraction * n_c) shuffled videos of each
/// class go to the held-out side.
struct DatasetSplit {
    std::vector<VideoRecord> train;
    std::vector<VideoRecord> heldout;
};
[[nodiscard]] DatasetSplit split_dataset(const std::vector<VideoRecord>& records, double heldout_fraction,
                                         std::uint64_t seed);

}  // namespace c3d
