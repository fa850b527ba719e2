#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "c3d/deconv_viz.hpp"
#include "c3d/descriptor.hpp"
#include "c3d/format.hpp"
#include "c3d/gradcheck.hpp"
#include "c3d/parallel.hpp"
#include "c3d/probes.hpp"
#include "c3d/rng.hpp"
#include "c3d/trainer.hpp"
#include "config.hpp"

namespace c3d::cli {

namespace fs = std::filesystem;

namespace {

struct Context {
    Config cfg;
    fs::path out_dir;
    std::string data;
    std::string model;
    std::string output;
    std::string depths = "1,3,5,7";
    std::vector<std::string> features;
    std::ostream& out;

    [[nodiscard]] std::uint64_t seed() const { return cfg.size("seed"); }
};

// ---- helpers ---------------------------------------------------------------

fs::path resolve_data(const std::string& p) {
    if (p.empty()) throw UsageError("--data is required");
    fs::path path(p);
    if (path.is_relative() && !fs::exists(path)) {
        if (const char* dir = std::getenv("C3D_DATA_DIR"); dir && *dir) {
            const fs::path alt = fs::path(dir) / path;
            if (fs::exists(alt)) return alt;
        }
    }
    return path;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    return f;
}

BlobMode parse_mode(const std::string& s) {
    if (s == "motion") return BlobMode::motion;
    if (s == "appearance") return BlobMode::appearance;
    throw UsageError("data.mode: expected motion or appearance, got '" + s + "'");
}

MotionBlobsConfig data_config(const Context& ctx) {
    const Config& c = ctx.cfg;
    MotionBlobsConfig m;
    m.mode = parse_mode(c.str("data.mode"));
    m.classes = c.size("data.classes");
    m.videos_per_class = c.size("data.videos_per_class");
    m.channels = c.size("data.channels");
    m.length = c.size("data.length");
    m.height = c.size("data.height");
    m.width = c.size("data.width");
    m.blobs_min = c.size("data.blobs_min");
    m.blobs_max = c.size("data.blobs_max");
    m.blob_size_min = c.size("data.size_min");
    m.blob_size_max = c.size("data.size_max");
    m.speed_min = c.num("data.speed_min");
    m.speed_max = c.num("data.speed_max");
    m.noise = c.num("data.noise");
    m.first_glyph = c.size("data.first_glyph");
    m.angle_offset = c.num("data.angle_offset");
    m.seed = ctx.seed();
    return m;
}

std::size_t class_count(const std::vector<VideoRecord>& records) {
    int hi = -1;
    for (const auto& r : records) hi = std::max(hi, r.label);
    return static_cast<std::size_t>(hi + 1);
}

NetworkSpec spec_from_config(const Config& c, std::size_t data_classes, std::optional<std::size_t> depth = {}) {
    std::size_t classes = c.size("net.classes");
    if (classes == 0) classes = data_classes;
    if (classes == 0) throw UsageError("net.classes is 0 and there is no dataset to take it from");
    const std::string& preset = c.str("net.preset");
    if (preset != "family") {
        if (depth) return preset_spec("depth-" + std::to_string(*depth), classes);
        return preset_spec(preset, classes);
    }
    FamilyGeometry g;
    const auto in = c.sizes("net.input");
    if (in.size() != 4) throw UsageError("net.input: expected channels,length,height,width");
    g.input = ClipGeometry{in[0], in[1], in[2], in[3]};
    g.filters = c.sizes("net.filters");
    g.fc_width = c.size("net.fc");
    std::vector<std::size_t> depths = c.sizes("net.depths");
    if (depth) depths.assign(5, *depth);
    if (depths.size() == 1) depths.assign(5, depths[0]);
    const std::string name = depth ? "family-d" + std::to_string(*depth) : "family";
    return depth_family_spec(name, depths, g, classes);
}

void check_input(const NetworkSpec& spec, const std::vector<VideoRecord>& records) {
    if (records.empty()) throw ConfigError("dataset is empty");
    const auto& r = records.front();
    const ClipGeometry& in = spec.input;
    if (r.channels() != in.channels || r.length() < in.length || r.height() < in.height || r.width() < in.width) {
        throw ShapeError("videos are " + r.frames.shape().str() + " but the network takes (" +
                         std::to_string(in.channels) + ", " + std::to_string(in.length) + ", " +
                         std::to_string(in.height) + ", " + std::to_string(in.width) + ") clips");
    }
}

TrainConfig train_config(const Context& ctx, const NetworkSpec& spec) {
    const Config& c = ctx.cfg;
    TrainConfig t;
    t.batch_size = c.size("train.batch_size");
    t.initial_lr = c.num("train.lr");
    const std::string& sched = c.str("train.schedule");
    if (sched == "epochs") {
        t.schedule = StepEpochs{c.num("train.lr_divisor"), c.size("train.lr_every"), c.size("train.stop")};
    } else if (sched == "iters") {
        t.schedule = StepIters{c.num("train.lr_divisor"), c.size("train.lr_every"), c.size("train.stop")};
    } else {
        throw UsageError("train.schedule: expected epochs or iters, got '" + sched + "'");
    }
    t.momentum = c.num("train.momentum");
    t.weight_decay = c.num("train.weight_decay");
    t.seed = ctx.seed();
    t.augmentation = c.flag("train.augment");
    t.flip = c.flag("train.flip");
    const std::string& s = c.str("train.sampling");
    if (s == "random_window") {
        t.sampling = ClipSampling::random_window;
    } else if (s == "fixed_clips") {
        t.sampling = ClipSampling::fixed_clips;
    } else {
        throw UsageError("train.sampling: expected random_window or fixed_clips, got '" + s + "'");
    }
    t.crop_h = spec.input.height;
    t.crop_w = spec.input.width;
    return t;
}

Network load_model(const fs::path& dir) {
    Config mc({"net"});
    mc.load_file(dir / "config.txt");
    return load_weights(spec_from_config(mc, 0), dir / "weights.c3dw");
}

/// The trained model in --model, or fresh seeded weights from the net.* keys.
Network model_or_fresh(const Context& ctx, std::size_t data_classes) {
    if (!ctx.model.empty()) return load_model(ctx.model);
    return build(spec_from_config(ctx.cfg, data_classes), ctx.seed(), ctx.cfg.num("net.init_gain"));
}

Tensor fit_clip(const Tensor& clip, const NetworkSpec& spec) {
    return center_crop(clip, spec.input.height, spec.input.width);
}

struct FeatureTable {
    std::vector<std::size_t> ids;
    std::vector<int> labels;
    FeatureMatrix x;
};

void write_feature_csv(const fs::path& path, const std::vector<VideoDescriptor>& ds,
                       const std::vector<VideoRecord>& records) {
    auto f = open_out(path);
    f << "video,label";
    const std::size_t dim = ds.empty() ? 0 : ds.front().values.size();
    for (std::size_t j = 0; j < dim; ++j) f << ",f" << j;
    f << '\n';
    for (const auto& d : ds) {
        f << d.video_id << ',' << records[d.video_id].label;
        for (double v : d.values) f << ',' << format_double(v);
        f << '\n';
    }
}

FeatureTable read_feature_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("video,label", 0) != 0) {
        throw FormatError(path.string() + ": expected a 'video,label,...' header");
    }
    FeatureTable t;
    for (std::size_t n = 2; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        const auto cells = split_list(line);
        const std::string where = path.string() + ":" + std::to_string(n);
        if (cells.size() < 3) throw FormatError(where + ": too few columns");
        t.ids.push_back(parse_size(cells[0], where));
        t.labels.push_back(static_cast<int>(parse_size(cells[1], where)));
        std::vector<double> row;
        for (std::size_t j = 2; j < cells.size(); ++j) row.push_back(parse_double(cells[j], where));
        if (!t.x.empty() && row.size() != t.x.front().size()) throw FormatError(where + ": row width differs");
        t.x.push_back(std::move(row));
    }
    if (t.x.empty()) throw FormatError(path.string() + ": no feature rows");
    return t;
}

ProbeConfig probe_config(const Context& ctx) {
    ProbeConfig p;
    p.svm.lambda = ctx.cfg.num("probe.lambda");
    p.svm.epochs = ctx.cfg.size("probe.epochs");
    p.svm.seed = ctx.seed();
    p.znorm = ctx.cfg.flag("probe.znorm");
    return p;
}

CvProtocol probe_protocol(const Context& ctx) {
    const std::string& p = ctx.cfg.str("probe.protocol");
    if (p == "kfold") return KFold{ctx.cfg.size("probe.folds"), ctx.seed()};
    if (p == "loo") return LeaveOneOut{};
    throw UsageError("probe.protocol: expected kfold or loo, got '" + p + "'");
}

std::string pct(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v << '%';
    return s.str();
}

// ---- commands --------------------------------------------------------------

int cmd_gen_data(Context& ctx) {
    const MotionBlobsConfig m = data_config(ctx);
    fs::path path = ctx.output.empty() ? ctx.out_dir / "data.vset" : fs::path(ctx.output);
    if (!ctx.output.empty() && path.is_relative()) {
        if (const char* dir = std::getenv("C3D_DATA_DIR"); dir && *dir) path = fs::path(dir) / path;
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    generate_motionblobs_file(m, path);
    ctx.out << "wrote " << m.classes * m.videos_per_class << " videos to " << path.string() << '\n';
    return 0;
}

void log_rows(std::ostream& out, const TrainReport& r) {
    for (const auto& row : r.rows) {
        out << "epoch " << row.epoch << "  iter " << row.iter << "  lr " << format_double(row.lr) << "  loss "
            << format_double(row.loss) << "  clip_accuracy " << format_double(row.clip_accuracy) << '\n';
    }
}

int cmd_train(Context& ctx) {
    const auto records = load_dataset(resolve_data(ctx.data));
    const std::size_t classes = class_count(records);
    const NetworkSpec spec = spec_from_config(ctx.cfg, classes);
    check_input(spec, records);
    ctx.cfg.set("net.classes", std::to_string(spec.class_count));
    const TrainConfig tc = train_config(ctx, spec);
    const auto split = split_dataset(records, ctx.cfg.num("train.heldout_fraction"), ctx.seed());
    Network net = build(spec, ctx.seed(), ctx.cfg.num("net.init_gain"));
    const TrainReport report = train(net, split.train, split.heldout, tc);

    ctx.cfg.write(ctx.out_dir / "config.txt");
    write_train_report(report, ctx.out_dir / "train.csv");
    save_weights(net, ctx.out_dir / "weights.c3dw");
    auto log = open_out(ctx.out_dir / "log.txt");
    log << "network " << spec.name << ", " << count_params(spec).total << " parameters\n"
        << "train videos " << split.train.size() << ", held-out videos " << split.heldout.size() << '\n';
    log_rows(log, report);
    log_rows(ctx.out, report);
    ctx.out << "final clip accuracy " << pct(report.final_accuracy()) << " (" << std::fixed << std::setprecision(1)
            << report.wall_seconds << " s)\n";
    return 0;
}

int cmd_arch_search(Context& ctx) {
    const auto records = load_dataset(resolve_data(ctx.data));
    const std::size_t classes = class_count(records);
    const auto split = split_dataset(records, ctx.cfg.num("train.heldout_fraction"), ctx.seed());
    std::vector<std::size_t> depths;
    for (const auto& d : split_list(ctx.depths)) depths.push_back(parse_size(d, "--depths"));
    if (depths.empty()) throw UsageError("--depths: no depths given");

    ctx.cfg.write(ctx.out_dir / "config.txt");
    auto csv = open_out(ctx.out_dir / "arch_search.csv");
    csv << "depth,params,clip_accuracy\n";
    auto log = open_out(ctx.out_dir / "log.txt");
    for (std::size_t d : depths) {
        const NetworkSpec spec = spec_from_config(ctx.cfg, classes, d);
        check_input(spec, records);
        Network net = build(spec, ctx.seed(), ctx.cfg.num("net.init_gain"));
        const TrainReport report = train(net, split.train, split.heldout, train_config(ctx, spec));
        // Each depth gets a run directory that extract/predict/visualize accept as --model.
        const fs::path dir = ctx.out_dir / ("depth" + std::to_string(d));
        fs::create_directories(dir);
        Config mc = ctx.cfg;
        if (mc.str("net.preset") == "family") {
            mc.set("net.depths", std::to_string(d));
        } else {
            mc.set("net.preset", "depth-" + std::to_string(d));
        }
        mc.set("net.classes", std::to_string(spec.class_count));
        mc.write(dir / "config.txt");
        save_weights(net, dir / "weights.c3dw");
        write_train_report(report, dir / "train.csv");
        const std::uint64_t params = count_params(spec).total;
        csv << d << ',' << params << ',' << format_double(report.final_accuracy()) << '\n';
        log << "depth " << d << '\n';
        log_rows(log, report);
        ctx.out << "depth-" << d << "  params " << params << "  clip accuracy " << pct(report.final_accuracy())
                << "  (" << std::fixed << std::setprecision(1) << report.wall_seconds << " s)\n";
    }
    return 0;
}

int cmd_count_params(Context& ctx) {
    std::size_t classes = 0;
    if (ctx.cfg.size("net.classes") == 0) classes = ctx.cfg.str("net.preset") == "c3d" ? 487 : 101;
    const NetworkSpec spec = spec_from_config(ctx.cfg, classes);
    const ParamCount pc = count_params(spec);
    auto csv = open_out(ctx.out_dir / "params.csv");
    csv << "layer,weights,biases,total\n";
    ctx.out << std::left << std::setw(10) << "layer" << std::right << std::setw(14) << "weights" << std::setw(10)
            << "biases" << std::setw(14) << "total" << '\n';
    for (const auto& l : pc.layers) {
        ctx.out << std::left << std::setw(10) << l.layer << std::right << std::setw(14) << l.weights << std::setw(10)
                << l.biases << std::setw(14) << l.weights + l.biases << '\n';
        csv << l.layer << ',' << l.weights << ',' << l.biases << ',' << l.weights + l.biases << '\n';
    }
    csv << "total,,," << pc.total << '\n';
    ctx.out << spec.name << " (" << spec.class_count << " classes) total " << pc.total << " (" << std::fixed
            << std::setprecision(2) << static_cast<double>(pc.total) / 1e6 << "M)\n";
    return 0;
}

int cmd_gradcheck(Context& ctx) {
    constexpr double kTolerance = 1e-4;
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = gradcheck::run_suite(ctx.seed());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto csv = open_out(ctx.out_dir / "gradcheck.csv");
    csv << "op,max_rel_error,checked,skipped,pass\n";
    bool ok = true;
    for (const auto& r : reports) {
        const bool pass = r.max_rel_error < kTolerance && r.checked > 0;
        ok = ok && pass;
        csv << r.op << ',' << format_double(r.max_rel_error) << ',' << r.checked << ',' << r.skipped << ','
            << (pass ? 1 : 0) << '\n';
        ctx.out << std::left << std::setw(14) << r.op << " max rel error " << std::scientific << std::setprecision(3)
                << r.max_rel_error << std::defaultfloat << "  checked " << r.checked << "  skipped " << r.skipped
                << (pass ? "  ok" : "  FAIL") << '\n';
    }
    ctx.out << (ok ? "all ops within " : "some ops exceed ") << kTolerance << " (" << std::fixed
            << std::setprecision(1) << secs << " s)\n";
    return ok ? 0 : 1;
}

int cmd_extract(Context& ctx) {
    const auto records = load_dataset(resolve_data(ctx.data));
    const Network net = model_or_fresh(ctx, class_count(records));
    check_input(net.spec(), records);
    const auto layers = split_list(ctx.cfg.str("extract.layers"));
    if (layers.empty()) throw UsageError("extract.layers: no layers given");
    for (const auto& l : layers) (void)feature_layer_index(net.spec(), l);
    const std::size_t overlap = ctx.cfg.size("extract.overlap");

    std::vector<std::vector<VideoDescriptor>> per_layer(layers.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto ds = video_descriptors(net, records[i], layers, i, overlap);
        for (std::size_t l = 0; l < layers.size(); ++l) per_layer[l].push_back(std::move(ds[l]));
    }
    ctx.cfg.write(ctx.out_dir / "config.txt");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        write_feature_csv(ctx.out_dir / ("features_" + layers[l] + ".csv"), per_layer[l], records);
        write_descriptors_bin(ctx.out_dir / ("descriptors_" + layers[l] + ".bin"), per_layer[l]);
        std::size_t degenerate = 0;
        for (const auto& d : per_layer[l]) degenerate += d.degenerate ? 1 : 0;
        ctx.out << layers[l] << ": " << records.size() << " descriptors of width " << per_layer[l].front().values.size();
        if (degenerate) ctx.out << " (" << degenerate << " all-zero)";
        ctx.out << '\n';
    }
    return 0;
}

int cmd_predict(Context& ctx) {
    const auto records = load_dataset(resolve_data(ctx.data));
    const Network net = model_or_fresh(ctx, class_count(records));
    check_input(net.spec(), records);
    const std::size_t clips = ctx.cfg.size("predict.clips");
    ctx.cfg.write(ctx.out_dir / "config.txt");
    auto csv = open_out(ctx.out_dir / "predictions.csv");
    csv << "video,label,predicted";
    for (std::size_t c = 0; c < net.spec().class_count; ++c) csv << ",p" << c;
    csv << '\n';
    std::size_t correct = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto p = video_predict(net, records[i], clips, derive_seed(ctx.seed(), i));
        const std::size_t label = argmax(p);
        correct += static_cast<int>(label) == records[i].label ? 1 : 0;
        csv << i << ',' << records[i].label << ',' << label;
        for (double v : p) csv << ',' << format_double(v);
        csv << '\n';
    }
    ctx.out << "video accuracy " << pct(static_cast<double>(correct) / static_cast<double>(records.size())) << " ("
            << correct << "/" << records.size() << ")\n";
    return 0;
}

FeatureTable single_features(const Context& ctx) {
    if (ctx.features.size() != 1) throw UsageError("--features: expected exactly one feature CSV");
    return read_feature_csv(ctx.features.front());
}

int cmd_probe_svm(Context& ctx) {
    const FeatureTable t = single_features(ctx);
    const CvResult r = cross_validate(t.x, t.labels, probe_protocol(ctx), probe_config(ctx));
    ctx.cfg.write(ctx.out_dir / "config.txt");
    write_cv_csv(ctx.out_dir / "cv.csv", r);
    ctx.out << r.folds.size() << " folds, mean accuracy " << pct(r.mean_accuracy) << '\n';
    return 0;
}

int cmd_probe_pca(Context& ctx) {
    const FeatureTable t = single_features(ctx);
    const std::size_t dim = t.x.front().size();
    const CvProtocol protocol = probe_protocol(ctx);
    ProbeConfig pc = probe_config(ctx);
    const CvResult raw = cross_validate(t.x, t.labels, protocol, pc);

    ctx.cfg.write(ctx.out_dir / "config.txt");
    auto csv = open_out(ctx.out_dir / "pca.csv");
    csv << "k,dims,mean_accuracy\n";
    for (const auto& item : split_list(ctx.cfg.str("probe.pca_dims"))) {
        const std::size_t k = item == "full" ? dim : parse_size(item, "probe.pca_dims");
        if (k == 0 || k > dim) {
            throw UsageError("probe.pca_dims: " + item + " outside [1, " + std::to_string(dim) + "]");
        }
        pc.pca_k = k;
        const CvResult r = cross_validate(t.x, t.labels, protocol, pc);
        csv << item << ',' << k << ',' << format_double(r.mean_accuracy) << '\n';
        ctx.out << "k=" << std::left << std::setw(6) << item << std::right << " accuracy " << pct(r.mean_accuracy)
                << '\n';
    }
    csv << "raw," << dim << ',' << format_double(raw.mean_accuracy) << '\n';
    ctx.out << "raw      accuracy " << pct(raw.mean_accuracy) << '\n';
    return 0;
}

int cmd_probe_sim(Context& ctx) {
    if (ctx.features.empty()) throw UsageError("--features: expected one feature CSV per feature type");
    std::vector<FeatureTable> tables;
    for (const auto& f : ctx.features) tables.push_back(read_feature_csv(f));
    for (std::size_t k = 1; k < tables.size(); ++k) {
        if (tables[k].ids != tables[0].ids || tables[k].labels != tables[0].labels) {
            throw FormatError(ctx.features[k] + ": videos differ from " + ctx.features[0]);
        }
    }
    const auto& labels = tables[0].labels;
    const auto pairs =
        make_class_disjoint_pairs(labels, ctx.cfg.size("sim.folds"), ctx.cfg.size("sim.pairs_per_fold"), ctx.seed());

    FeatureMatrix x;
    std::vector<int> y;
    ExplicitFolds folds;
    for (const auto& p : pairs) {
        std::vector<std::vector<double>> a, b;
        for (const auto& t : tables) {
            a.push_back(t.x[p.a]);
            b.push_back(t.x[p.b]);
        }
        x.push_back(pair_feature(a, b));
        y.push_back(p.same);
        folds.fold_of.push_back(p.fold);
    }
    ProbeConfig pc = probe_config(ctx);
    pc.znorm = ctx.cfg.flag("sim.znorm");
    const auto test_sets = make_folds(x.size(), folds);
    const CvResult r = cross_validate(x, y, folds, pc);

    std::vector<double> score(x.size(), 0.0);
    for (std::size_t f = 0; f < r.folds.size(); ++f) {
        for (std::size_t i = 0; i < test_sets[f].size(); ++i) score[test_sets[f][i]] = r.folds[f].scores[i];
    }
    ctx.cfg.write(ctx.out_dir / "config.txt");
    write_cv_csv(ctx.out_dir / "sim_cv.csv", r);
    write_roc_csv(ctx.out_dir / "roc.csv", roc_curve(score, y));
    auto csv = open_out(ctx.out_dir / "pairs.csv");
    csv << "a,b,same,fold,score\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        csv << tables[0].ids[pairs[i].a] << ',' << tables[0].ids[pairs[i].b] << ',' << pairs[i].same << ','
            << pairs[i].fold << ',' << format_double(score[i]) << '\n';
    }
    ctx.out << pairs.size() << " pairs of " << x.front().size() << "-dim features, " << r.folds.size()
            << " class-disjoint folds\nmean accuracy " << pct(r.mean_accuracy);
    if (r.mean_auc) ctx.out << ", mean AUC " << std::fixed << std::setprecision(4) << *r.mean_auc;
    ctx.out << '\n';
    return 0;
}

int cmd_visualize(Context& ctx) {
    const auto records = load_dataset(resolve_data(ctx.data));
    const Network net = model_or_fresh(ctx, class_count(records));
    check_input(net.spec(), records);
    const Config& c = ctx.cfg;
    const std::size_t v = c.size("viz.video");
    if (v >= records.size()) throw UsageError("viz.video: index out of range");
    const Tensor clip = fit_clip(slice_clip(records[v].frames, c.size("viz.start"), kClipLength), net.spec());

    DeconvRequest req;
    req.layer = c.str("viz.layer");
    req.channel = c.size("viz.channel");
    if (const auto pos = c.sizes("viz.position"); !pos.empty()) {
        if (pos.size() != 3) throw UsageError("viz.position: expected t,y,x");
        req.position = std::array<std::size_t, 3>{pos[0], pos[1], pos[2]};
    }
    const std::string& gating = c.str("viz.gating");
    if (gating == "forward_mask") {
        req.gating = ReluGating::forward_mask;
    } else if (gating != "own_sign") {
        throw UsageError("viz.gating: expected own_sign or forward_mask, got '" + gating + "'");
    }
    c.write(ctx.out_dir / "config.txt");
    write_image_sequence(clip, ctx.out_dir / "input");
    write_image_sequence(deconv_feature_map(net, clip, req), ctx.out_dir / "deconv");
    ctx.out << "wrote input and deconv frames of video " << v << " (" << req.layer << " channel " << req.channel
            << ")\n";

    if (const std::size_t top = c.size("viz.top"); top > 0) {
        std::vector<Tensor> clips;
        std::vector<ClipIndex> index;
        for (std::size_t i = 0; i < records.size(); ++i) {
            for (const auto& ci : split_into_clips(records[i].length(), kClipLength, 0, i)) {
                clips.push_back(fit_clip(slice_clip(records[i].frames, ci.start, kClipLength), net.spec()));
                index.push_back(ci);
            }
        }
        const auto ranked = top_activations(net, clips, req.layer, req.channel, top);
        auto csv = open_out(ctx.out_dir / "top.csv");
        csv << "rank,video,start,t,y,x,value\n";
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            const auto& a = ranked[r];
            csv << r << ',' << index[a.clip].video << ',' << index[a.clip].start << ',' << a.position[0] << ','
                << a.position[1] << ',' << a.position[2] << ',' << format_double(a.value) << '\n';
            DeconvRequest q = req;
            q.position = a.position;
            const fs::path dir = ctx.out_dir / ("top_" + std::to_string(r));
            write_image_sequence(clips[a.clip], dir / "input");
            write_image_sequence(deconv_feature_map(net, clips[a.clip], q), dir / "deconv");
        }
        ctx.out << "projected the top " << ranked.size() << " activations of " << clips.size() << " clips\n";
    }
    return 0;
}

int cmd_benchmark(Context& ctx) {
    const fs::path data = resolve_data(ctx.data);
    const std::size_t reps = ctx.cfg.size("bench.reps");
    if (reps == 0) throw UsageError("bench.reps must be positive");
    const std::string layer = ctx.cfg.str("bench.layer");
    const std::size_t overlap = ctx.cfg.size("bench.overlap");
    std::optional<Network> net;
    std::vector<double> walls;
    std::size_t clips = 0, videos = 0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto records = load_dataset(data);
        if (records.empty()) throw ConfigError("benchmark: dataset is empty");
        if (!net) {
            net.emplace(model_or_fresh(ctx, class_count(records)));
            check_input(net->spec(), records);
        }
        std::vector<VideoDescriptor> ds;
        std::size_t n = 0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            ds.push_back(video_descriptor(*net, records[i], layer, i, overlap));
            n += split_into_clips(records[i].length(), kClipLength, overlap).size();
        }
        write_descriptors_bin(ctx.out_dir / "descriptors.bin", ds);
        walls.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        clips = n;
        videos = records.size();
    }
    std::vector<double> sorted = walls;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                            : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
    const double cps = static_cast<double>(clips) / median;
    const double fps = static_cast<double>(kClipLength) * cps;

    ctx.cfg.write(ctx.out_dir / "config.txt");
    auto csv = open_out(ctx.out_dir / "benchmark.csv");
    csv << "rep,wall_seconds,videos,clips,clips_per_sec,fps\n";
    for (std::size_t r = 0; r < walls.size(); ++r) {
        const double c = static_cast<double>(clips) / walls[r];
        csv << r << ',' << format_double(walls[r]) << ',' << videos << ',' << clips << ',' << format_double(c) << ','
            << format_double(static_cast<double>(kClipLength) * c) << '\n';
    }
    csv << "median," << format_double(median) << ',' << videos << ',' << clips << ',' << format_double(cps) << ','
        << format_double(fps) << '\n';
    ctx.out << "network " << net->spec().name << ", layer " << layer << ", " << reps << " reps, threads "
            << max_threads() << '\n'
            << "videos " << videos << "\nclips " << clips << "\nwall_seconds " << format_double(median)
            << "\nclips_per_sec " << format_double(cps) << "\nfps " << format_double(fps)
            << "\n(timing includes dataset load and descriptor write)\n";
    return 0;
}

// ---- dispatch --------------------------------------------------------------

enum Extra : unsigned {
    kData = 1,
    kModel = 2,
    kOutput = 4,
    kDepths = 8,
    kFeatures = 16,
};

struct Command {
    const char* name;
    const char* help;
    std::vector<std::string> groups;
    unsigned extras;
    int (*handler)(Context&);
};

const std::vector<Command>& commands() {
    static const std::vector<Command> cmds = {
        {"gen-data", "generate a MotionBlobs dataset file", {"data"}, kOutput, cmd_gen_data},
        {"train", "train a network on a dataset", {"net", "train"}, kData, cmd_train},
        {"arch-search", "train one homogeneous-depth network per --depths entry", {"net", "train"}, kData | kDepths,
         cmd_arch_search},
        {"count-params", "per-layer parameter table of a network", {"net"}, 0, cmd_count_params},
        {"gradcheck", "finite-difference gradient suite", {}, 0, cmd_gradcheck},
        {"extract", "video descriptors for every video of a dataset", {"net", "extract"}, kData | kModel,
         cmd_extract},
        {"predict", "clip-averaged video predictions", {"net", "predict"}, kData | kModel, cmd_predict},
        {"probe-svm", "cross-validated linear SVM on a feature CSV", {"probe"}, kFeatures, cmd_probe_svm},
        {"probe-pca", "SVM accuracy after PCA projection", {"probe"}, kFeatures, cmd_probe_pca},
        {"probe-sim", "same/different pair classification with ROC", {"probe", "sim"}, kFeatures, cmd_probe_sim},
        {"visualize", "deconvolution images of a feature map", {"net", "viz"}, kData | kModel, cmd_visualize},
        {"benchmark", "descriptor extraction throughput including I/O", {"net", "bench"}, kData | kModel,
         cmd_benchmark},
    };
    return cmds;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"3D convolutional network toolkit", "c3d"};
    app.require_subcommand(1);
    app.fallthrough(false);

    struct Bound {
        const Command* cmd = nullptr;
        CLI::App* app = nullptr;
        std::string config, out_dir, data, model, output, depths = "1,3,5,7", features;
        int threads = 0;
        std::map<std::string, std::string> values;
        std::map<std::string, CLI::Option*> options;
    };
    std::vector<std::unique_ptr<Bound>> bound;
    for (const auto& cmd : commands()) {
        auto b = std::make_unique<Bound>();
        b->cmd = &cmd;
        b->app = app.add_subcommand(cmd.name, cmd.help);
        b->out_dir = std::string("runs/") + cmd.name;
        CLI::App* s = b->app;
        s->add_option("--config", b->config, "flat key = value file; flags override it");
        s->add_option("--out", b->out_dir, "run directory")->capture_default_str();
        s->add_option("--threads", b->threads, "worker cap; 0 uses every core, 1 is fully serial");
        if (cmd.extras & kData) s->add_option("--data", b->data, "dataset file (relative paths also tried under $C3D_DATA_DIR)");
        if (cmd.extras & kModel) s->add_option("--model", b->model, "run directory of `train`; omitted: fresh weights");
        if (cmd.extras & kOutput) s->add_option("--output", b->output, "dataset path (default <out>/data.vset)");
        if (cmd.extras & kDepths) s->add_option("--depths", b->depths, "temporal depths to train")->capture_default_str();
        if (cmd.extras & kFeatures) s->add_option("--features", b->features, "feature CSV(s) from `extract`, comma-separated");
        Config probe(cmd.groups);
        for (const auto& k : all_keys()) {
            if (!probe.uses(k.key)) continue;
            std::string names = "--" + k.key;
            if (!k.alias.empty()) names += ",--" + k.alias;
            const std::string help = k.help + " [" + k.default_value + "]";
            b->options[k.key] = s->add_option(names, b->values[k.key], help);
        }
        bound.push_back(std::move(b));
    }

    if (!args.empty() && !args[0].empty() && args[0][0] != '-') {
        const auto& cmds = commands();
        if (std::none_of(cmds.begin(), cmds.end(), [&](const Command& c) { return args[0] == c.name; })) {
            err << "error: unknown subcommand '" << args[0] << "'\n\n" << app.help();
            return 2;
        }
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const CLI::App* target = &app;
        for (const auto& b : bound) {
            if (b->app->parsed()) target = b->app;
        }
        out << target->help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const CLI::App* target = &app;
        for (const auto& b : bound) {
            if (b->app->parsed()) target = b->app;
        }
        err << target->help();
        return 2;
    }

    Bound* chosen = nullptr;
    for (const auto& b : bound) {
        if (b->app->parsed()) chosen = b.get();
    }
    if (!chosen) {
        err << app.help();
        return 2;
    }
    try {
        Context ctx{Config(chosen->cmd->groups), chosen->out_dir, chosen->data, chosen->model, chosen->output,
                    chosen->depths, split_list(chosen->features), out};
        if (!chosen->config.empty()) ctx.cfg.load_file(chosen->config);
        for (const auto& [key, opt] : chosen->options) {
            if (opt->count() > 0) ctx.cfg.set(key, chosen->values[key]);
        }
        if (chosen->threads < 0) throw UsageError("--threads must be >= 0");
        if (chosen->threads > 0) set_threads(chosen->threads);
        fs::create_directories(ctx.out_dir);
        return chosen->cmd->handler(ctx);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace c3d::cli
