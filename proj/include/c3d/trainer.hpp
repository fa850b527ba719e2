#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "c3d/network.hpp"
#include "c3d/videodata.hpp"

namespace c3d {

/// lr = initial / divisor^floor(epoch / every); training stops at stop_epoch.
struct StepEpochs {
    double divisor = 10.0;
    std::size_t every_n_epochs = 4;
    std::size_t stop_epoch = 16;
};
/// Same rule on iteration counts.
struct StepIters {
    double divisor = 2.0;
    std::size_t every_n_iters = 150'000;
    std::size_t stop_iter = 1'900'000;
};
using Schedule = std::variant<StepEpochs, StepIters>;

/// How training clips are drawn from each video.
enum class ClipSampling {
    random_window,  // one fresh random 16-frame window per video per epoch
    fixed_clips,    // every non-overlapped 16-frame clip is a dataset unit
};

struct TrainConfig {
    std::size_t batch_size = 30;
    double initial_lr = 0.003;
    Schedule schedule = StepEpochs{};
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::uint64_t seed = 1;
    bool augmentation = true;
    bool flip = true;
    ClipSampling sampling = ClipSampling::random_window;
    std::size_t crop_h = 112;
    std::size_t crop_w = 112;

    void validate() const;
};

/// Learning rate at an epoch (StepEpochs) or iteration (StepIters) index.
[[nodiscard]] double lr_at(const TrainConfig& config, std::size_t index);

struct OptimizerState {
    std::vector<Tensor> velocity;

    [[nodiscard]] static OptimizerState zeros(const Network& net);
};

/// v <- momentum * v - lr * g; p <- p + v.
void sgd_step(Network& net, std::span<const Tensor> grads, OptimizerState& state, double lr, double momentum);

/// Random crop_h x crop_w window, random 16-frame window, optional
/// horizontal flip with probability 0.5. Output is (c, 16, crop_h, crop_w).
[[nodiscard]] Tensor augment_clip(const VideoRecord& video, std::size_t crop_h, std::size_t crop_w, bool flip,
                                  std::mt19937_64& rng);

/// Reverses the width axis of a (c, l, h, w) volume.
[[nodiscard]] Tensor flip_horizontal(const Tensor& clip);

/// Stacks (c, l, h, w) clips into a (n, c, l, h, w) batch.
[[nodiscard]] Tensor stack_clips(std::span<const Tensor> clips);

/// Fraction of non-overlapped, center-cropped 16-frame clips whose argmax
/// prediction matches the video label.
[[nodiscard]] double clip_accuracy(const Network& net, const std::vector<VideoRecord>& videos,
                                   std::size_t batch_size = 32);

struct TrainRow {
    std::size_t epoch = 0;
    std::size_t iter = 0;  // iterations completed at the end of the epoch
    double lr = 0.0;
    double loss = 0.0;           // mean training loss over the epoch
    double clip_accuracy = 0.0;  // held-out; NaN when no held-out set is given
};

struct TrainReport {
    std::vector<TrainRow> rows;
    double wall_seconds = 0.0;

    [[nodiscard]] double final_accuracy() const;
};

/// Mini-batch SGD until the schedule's stop point. Throws NumericError if the
/// loss stops being finite.
TrainReport train(Network& net, const std::vector<VideoRecord>& train_set,
                  const std::vector<VideoRecord>& heldout_set, const TrainConfig& config);

/// CSV with header epoch,iter,lr,loss,clip_accuracy.
void write_train_report(const TrainReport& report, const std::filesystem::path& path);

}  // namespace c3d
