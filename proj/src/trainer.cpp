#include "c3d/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "c3d/error.hpp"
#include "c3d/format.hpp"

namespace c3d {

namespace {

struct Unit {
    std::size_t video;
    std::size_t start;  // used by fixed_clips
};

Tensor make_clip(const VideoRecord& v, const Unit& u, const TrainConfig& cfg, std::mt19937_64& rng) {
    if (cfg.sampling == ClipSampling::random_window) {
        if (cfg.augmentation) return augment_clip(v, cfg.crop_h, cfg.crop_w, cfg.flip, rng);
        const std::size_t start = (v.length() - kClipLength) / 2;
        return center_crop(slice_clip(v.frames, start, kClipLength), cfg.crop_h, cfg.crop_w);
    }
    Tensor clip = slice_clip(v.frames, u.start, kClipLength);
    if (!cfg.augmentation) return center_crop(clip, cfg.crop_h, cfg.crop_w);
    std::uniform_int_distribution<std::size_t> top(0, v.height() - cfg.crop_h);
    std::uniform_int_distribution<std::size_t> left(0, v.width() - cfg.crop_w);
    const std::size_t y = top(rng), x = left(rng);
    Tensor out = crop(clip, y, x, cfg.crop_h, cfg.crop_w);
    if (cfg.flip && std::bernoulli_distribution(0.5)(rng)) out = flip_horizontal(out);
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (!(initial_lr >= 0.0) || !std::isfinite(initial_lr)) throw ConfigError("train: learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be >= 0");
    if (crop_h == 0 || crop_w == 0) throw ConfigError("train: crop extents must be positive");
    std::visit(
        [](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if (!(s.divisor > 1.0)) throw ConfigError("train: schedule divisor must be > 1");
            if constexpr (std::is_same_v<S, StepEpochs>) {
                if (s.every_n_epochs == 0 || s.stop_epoch == 0) {
                    throw ConfigError("train: schedule step and stop epoch must be positive");
                }
            } else {
                if (s.every_n_iters == 0 || s.stop_iter == 0) {
                    throw ConfigError("train: schedule step and stop iteration must be positive");
                }
            }
        },
        schedule);
}

double lr_at(const TrainConfig& config, std::size_t index) {
    config.validate();
    return std::visit(
        [&](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            std::size_t every;
            if constexpr (std::is_same_v<S, StepEpochs>) {
                every = s.every_n_epochs;
            } else {
                every = s.every_n_iters;
            }
            return config.initial_lr / std::pow(s.divisor, static_cast<double>(index / every));
        },
        config.schedule);
}

OptimizerState OptimizerState::zeros(const Network& net) {
    OptimizerState s;
    for (const Parameter& p : net.params()) s.velocity.emplace_back(p.value.shape());
    return s;
}

void sgd_step(Network& net, std::span<const Tensor> grads, OptimizerState& state, double lr, double momentum) {
    auto params = net.params();
    if (grads.size() != params.size() || state.velocity.size() != params.size()) {
        throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients and " +
                         std::to_string(state.velocity.size()) + " velocities for " + std::to_string(params.size()) +
                         " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].value.shape() || state.velocity[i].shape() != params[i].value.shape()) {
            throw ShapeError("sgd_step: shape mismatch for " + params[i].name);
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].value.data();
        double* v = state.velocity[i].data();
        const double* g = grads[i].data();
        for (std::size_t j = 0; j < params[i].value.size(); ++j) {
            v[j] = momentum * v[j] - lr * g[j];
            p[j] += v[j];
        }
    }
}

Tensor flip_horizontal(const Tensor& clip) {
    if (clip.shape().rank() != 4) throw ShapeError("flip_horizontal: expected (c, l, h, w), got " + clip.shape().str());
    Tensor out = clip;
    const std::size_t w = clip.dim(3);
    for (std::size_t row = 0; row < clip.size() / w; ++row) std::reverse(out.data() + row * w, out.data() + (row + 1) * w);
    return out;
}

Tensor augment_clip(const VideoRecord& video, std::size_t crop_h, std::size_t crop_w, bool flip,
                    std::mt19937_64& rng) {
    if (video.frames.shape().rank() != 4) throw ShapeError("augment_clip: expected a (c, l, h, w) video");
    if (video.length() < kClipLength) {
        throw ShapeError("augment_clip: video of " + std::to_string(video.length()) + " frames is shorter than " +
                         std::to_string(kClipLength));
    }
    if (crop_h > video.height() || crop_w > video.width()) {
        throw ShapeError("augment_clip: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                         " larger than frame " + std::to_string(video.height()) + "x" +
                         std::to_string(video.width()));
    }
    std::uniform_int_distribution<std::size_t> start(0, video.length() - kClipLength);
    std::uniform_int_distribution<std::size_t> top(0, video.height() - crop_h);
    std::uniform_int_distribution<std::size_t> left(0, video.width() - crop_w);
    const std::size_t t = start(rng), y = top(rng), x = left(rng);
    Tensor out = crop(slice_clip(video.frames, t, kClipLength), y, x, crop_h, crop_w);
    if (flip && std::bernoulli_distribution(0.5)(rng)) out = flip_horizontal(out);
    return out;
}

Tensor stack_clips(std::span<const Tensor> clips) {
    if (clips.empty()) throw ShapeError("stack_clips: no clips");
    const Shape& s = clips.front().shape();
    if (s.rank() != 4) throw ShapeError("stack_clips: expected (c, l, h, w) clips, got " + s.str());
    Tensor batch(Shape(std::vector<std::size_t>{clips.size(), s[0], s[1], s[2], s[3]}));
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (clips[i].shape() != s) throw ShapeError("stack_clips: clip " + std::to_string(i) + " has shape " +
                                                    clips[i].shape().str() + ", expected " + s.str());
        std::copy(clips[i].data(), clips[i].data() + s.count(), batch.data() + i * s.count());
    }
    return batch;
}

double clip_accuracy(const Network& net, const std::vector<VideoRecord>& videos, std::size_t batch_size) {
    const ClipGeometry& g = net.spec().input;
    const std::size_t logits = logits_layer(net.spec());
    std::size_t correct = 0, total = 0;
    std::vector<Tensor> pending;
    std::vector<int> labels;
    const auto flush = [&] {
        if (pending.empty()) return;
        const ForwardResult fwd = forward(net, stack_clips(pending), false);
        const Tensor& z = fwd.activations[logits];
        const std::size_t c = z.dim(1);
        for (std::size_t i = 0; i < pending.size(); ++i) {
            const double* row = z.data() + i * c;
            const auto pred = static_cast<int>(std::max_element(row, row + c) - row);
            correct += pred == labels[i];
        }
        total += pending.size();
        pending.clear();
        labels.clear();
    };
    for (const VideoRecord& v : videos) {
        for (const ClipIndex& ci : split_into_clips(v.length(), kClipLength, 0)) {
            pending.push_back(center_crop(slice_clip(v.frames, ci.start, kClipLength), g.height, g.width));
            labels.push_back(v.label);
            if (pending.size() == batch_size) flush();
        }
    }
    flush();
    if (total == 0) throw ConfigError("clip_accuracy: no clips to evaluate");
    return static_cast<double>(correct) / static_cast<double>(total);
}

double TrainReport::final_accuracy() const {
    return rows.empty() ? std::numeric_limits<double>::quiet_NaN() : rows.back().clip_accuracy;
}

TrainReport train(Network& net, const std::vector<VideoRecord>& train_set,
                  const std::vector<VideoRecord>& heldout_set, const TrainConfig& config) {
    config.validate();
    if (train_set.empty()) throw ConfigError("train: empty training set");
    const ClipGeometry& g = net.spec().input;
    if (config.crop_h != g.height || config.crop_w != g.width) {
        throw ConfigError("train: crop " + std::to_string(config.crop_h) + "x" + std::to_string(config.crop_w) +
                          " does not match network input " + std::to_string(g.height) + "x" +
                          std::to_string(g.width));
    }
    for (const VideoRecord& v : train_set) {
        if (v.label < 0 || static_cast<std::size_t>(v.label) >= net.spec().class_count) {
            throw ConfigError("train: label " + std::to_string(v.label) + " outside the network's " +
                              std::to_string(net.spec().class_count) + " classes");
        }
        if (v.channels() != g.channels) throw ShapeError("train: video channel count does not match the network");
        if (v.length() < kClipLength) throw ShapeError("train: video shorter than one clip");
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(config.seed);
    OptimizerState state = OptimizerState::zeros(net);

    std::vector<Unit> units;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        if (config.sampling == ClipSampling::random_window) {
            units.push_back({i, 0});
        } else {
            for (const ClipIndex& c : split_into_clips(train_set[i].length(), kClipLength, 0)) units.push_back({i, c.start});
        }
    }

    const bool by_epoch = std::holds_alternative<StepEpochs>(config.schedule);
    const std::size_t stop = by_epoch ? std::get<StepEpochs>(config.schedule).stop_epoch
                                      : std::get<StepIters>(config.schedule).stop_iter;
    TrainReport report;
    std::size_t iter = 0;
    for (std::size_t epoch = 0; by_epoch ? epoch < stop : iter < stop; ++epoch) {
        std::shuffle(units.begin(), units.end(), rng);
        double loss_sum = 0.0;
        std::size_t loss_items = 0;
        double lr = lr_at(config, by_epoch ? epoch : iter);
        for (std::size_t b = 0; b < units.size() && (by_epoch || iter < stop); b += config.batch_size) {
            const std::size_t n = std::min(config.batch_size, units.size() - b);
            std::vector<Tensor> clips;
            std::vector<int> labels;
            for (std::size_t k = 0; k < n; ++k) {
                const Unit& u = units[b + k];
                clips.push_back(make_clip(train_set[u.video], u, config, rng));
                labels.push_back(train_set[u.video].label);
            }
            lr = lr_at(config, by_epoch ? epoch : iter);
            LossAndGrads lg = loss_and_gradients(net, stack_clips(clips), labels);
            if (!std::isfinite(lg.loss)) {
                throw NumericError("train: loss became " + format_double(lg.loss) + " at epoch " +
                                   std::to_string(epoch) + ", iteration " + std::to_string(iter) + " (lr " +
                                   format_double(lr) + "); lower the learning rate");
            }
            if (config.weight_decay > 0.0) {
                for (std::size_t i = 0; i < lg.grads.size(); ++i) {
                    const Tensor& p = net.params()[i].value;
                    for (std::size_t j = 0; j < p.size(); ++j) lg.grads[i][j] += config.weight_decay * p[j];
                }
            }
            sgd_step(net, lg.grads, state, lr, config.momentum);
            loss_sum += lg.loss * static_cast<double>(n);
            loss_items += n;
            ++iter;
        }
        TrainRow row{epoch, iter, lr, loss_items ? loss_sum / static_cast<double>(loss_items) : 0.0,
                     std::numeric_limits<double>::quiet_NaN()};
        if (!heldout_set.empty()) row.clip_accuracy = clip_accuracy(net, heldout_set);
        report.rows.push_back(row);
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

void write_train_report(const TrainReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,iter,lr,loss,clip_accuracy\n";
    for (const TrainRow& r : report.rows) {
        out << r.epoch << ',' << r.iter << ',' << format_double(r.lr) << ',' << format_double(r.loss) << ','
            << format_double(r.clip_accuracy) << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace c3d
