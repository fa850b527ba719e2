#include "config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace c3d::cli {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string_view group_of(std::string_view key) {
    const auto dot = key.find('.');
    return dot == std::string_view::npos ? std::string_view{} : key.substr(0, dot);
}

}  // namespace

const std::vector<KeyInfo>& all_keys() {
    static const std::vector<KeyInfo> keys = {
        {"seed", "1", "master seed for data, weights, shuffling and probes", ""},

        {"data.mode", "motion", "motion | appearance", ""},
        {"data.classes", "8", "number of classes", ""},
        {"data.videos_per_class", "50", "videos generated per class", ""},
        {"data.channels", "1", "1 or 3", ""},
        {"data.length", "32", "frames per video", ""},
        {"data.height", "128", "frame height", ""},
        {"data.width", "171", "frame width", ""},
        {"data.blobs_min", "1", "blobs per video, lower bound", ""},
        {"data.blobs_max", "2", "blobs per video, upper bound", ""},
        {"data.size_min", "5", "blob side in pixels, lower bound", ""},
        {"data.size_max", "9", "blob side in pixels, upper bound", ""},
        {"data.speed_min", "1", "pixels per frame, lower bound", ""},
        {"data.speed_max", "2", "pixels per frame, upper bound", ""},
        {"data.noise", "0.05", "Gaussian pixel noise std", ""},
        {"data.first_glyph", "0", "appearance mode: glyph index of class 0", ""},
        {"data.angle_offset", "0", "motion mode: rotates every class direction by this fraction of a class step", ""},

        {"net.preset", "depth-3", "named architecture, or 'family' for the geometry keys below", "preset"},
        {"net.classes", "0", "classifier width; 0 takes it from the data", "classes"},
        {"net.depths", "3,3,3,3,3", "family: temporal depth per conv stage (one value = all)", ""},
        {"net.filters", "64,128,256,256,256", "family: filters per conv stage", ""},
        {"net.fc", "2048", "family: fc6/fc7 width", ""},
        {"net.input", "3,16,112,112", "family: input channels,length,height,width", ""},
        {"net.init_gain", "1", "multiplies the uniform fan-in init bound", ""},

        {"train.batch_size", "30", "clips per mini-batch", ""},
        {"train.lr", "0.003", "initial learning rate", ""},
        {"train.schedule", "epochs", "epochs | iters: unit of lr_every and stop", ""},
        {"train.lr_divisor", "10", "lr is divided by this every lr_every units", ""},
        {"train.lr_every", "4", "step interval of the lr schedule", ""},
        {"train.stop", "16", "training length in schedule units", ""},
        {"train.momentum", "0.9", "SGD momentum", ""},
        {"train.weight_decay", "0", "L2 penalty on weights", ""},
        {"train.augment", "true", "random crops and windows", ""},
        {"train.flip", "true", "random horizontal flips", ""},
        {"train.sampling", "random_window", "random_window | fixed_clips", ""},
        {"train.heldout_fraction", "0.2", "stratified held-out share of the data", ""},

        {"extract.layers", "fc6", "comma-separated feature layers", "layers"},
        {"extract.overlap", "8", "frames shared by consecutive clips", ""},

        {"predict.clips", "10", "random windows averaged per video", ""},

        {"probe.lambda", "0.0001", "SVM regularization", ""},
        {"probe.epochs", "100", "SVM passes over the training fold", ""},
        {"probe.znorm", "false", "z-normalize with training-fold statistics", ""},
        {"probe.protocol", "kfold", "kfold | loo", ""},
        {"probe.folds", "10", "folds for kfold", ""},
        {"probe.pca_dims", "2,10,50,full", "probe-pca: projection sizes", ""},

        {"sim.folds", "10", "class-disjoint folds", ""},
        {"sim.pairs_per_fold", "60", "pairs per fold, half same-class", ""},
        {"sim.znorm", "true", "z-normalize pair features with training-fold statistics", ""},

        {"viz.video", "0", "dataset index of the video", ""},
        {"viz.start", "0", "first frame of the clip", ""},
        {"viz.layer", "conv5", "feature layer to project", ""},
        {"viz.channel", "0", "feature map channel", ""},
        {"viz.position", "", "t,y,x in the layer; empty picks the top activation", ""},
        {"viz.gating", "own_sign", "own_sign | forward_mask", ""},
        {"viz.top", "0", "also project the N strongest clips of the dataset", ""},

        {"bench.reps", "3", "timed repetitions; the median is reported", ""},
        {"bench.layer", "fc6", "descriptor layer", ""},
        {"bench.overlap", "8", "frames shared by consecutive clips", ""},
    };
    return keys;
}

const KeyInfo* find_key(std::string_view key) {
    for (const auto& k : all_keys()) {
        if (k.key == key) return &k;
    }
    return nullptr;
}

Config::Config(std::vector<std::string> groups) : groups_(std::move(groups)) {}

bool Config::uses(std::string_view key) const {
    const auto g = group_of(key);
    return g.empty() || std::find(groups_.begin(), groups_.end(), g) != groups_.end();
}

void Config::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path.string());
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        std::string_view s = line;
        if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        const std::string where = path.string() + ":" + std::to_string(n);
        if (eq == std::string_view::npos) throw UsageError(where + ": expected 'key = value'");
        const std::string key(trim(s.substr(0, eq)));
        if (!find_key(key)) throw UsageError(where + ": unknown key '" + key + "'");
        file_[key] = std::string(trim(s.substr(eq + 1)));
    }
}

void Config::set(std::string_view key, std::string value) {
    if (!find_key(key)) throw UsageError("unknown key '" + std::string(key) + "'");
    flags_[std::string(key)] = std::move(value);
}

const std::string& Config::str(std::string_view key) const {
    if (auto it = flags_.find(key); it != flags_.end()) return it->second;
    if (auto it = file_.find(key); it != file_.end()) return it->second;
    const KeyInfo* k = find_key(key);
    if (!k) throw Error("internal: undeclared key " + std::string(key));
    return k->default_value;
}

double Config::num(std::string_view key) const { return parse_double(str(key), key); }

std::size_t Config::size(std::string_view key) const { return parse_size(str(key), key); }

bool Config::flag(std::string_view key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError(std::string(key) + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> Config::sizes(std::string_view key) const {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(str(key))) out.push_back(parse_size(item, key));
    return out;
}

std::string Config::dump() const {
    std::ostringstream out;
    for (const auto& k : all_keys()) {
        if (uses(k.key)) out << k.key << " = " << str(k.key) << '\n';
    }
    return out.str();
}

void Config::write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << dump();
    if (!out) throw IoError("failed writing " + path.string());
}

double parse_double(std::string_view text, std::string_view what) {
    const std::string_view t = trim(text);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || end != t.data() + t.size()) {
        throw UsageError(std::string(what) + ": expected a number, got '" + std::string(text) + "'");
    }
    return v;
}

std::size_t parse_size(std::string_view text, std::string_view what) {
    const std::string_view t = trim(text);
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || end != t.data() + t.size()) {
        throw UsageError(std::string(what) + ": expected a non-negative integer, got '" + std::string(text) + "'");
    }
    return v;
}

std::vector<std::string> split_list(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto item = trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        if (!item.empty()) out.emplace_back(item);
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace c3d::cli
