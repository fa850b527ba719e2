#include "c3d/probes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "c3d/error.hpp"
#include "c3d/format.hpp"
#include "c3d/rng.hpp"

namespace c3d {

namespace {

constexpr double kShiftEps = 1e-12;

std::size_t check_matrix(const FeatureMatrix& m, const char* what) {
    if (m.empty()) throw ConfigError(std::string(what) + ": no samples");
    const std::size_t d = m.front().size();
    if (d == 0) throw ShapeError(std::string(what) + ": zero-width features");
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].size() != d) {
            throw ShapeError(std::string(what) + ": sample " + std::to_string(i) + " has " +
                             std::to_string(m[i].size()) + " dimensions, expected " + std::to_string(d));
        }
    }
    return d;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> shifted_normalized(std::span<const double> x) {
    const double lo = *std::min_element(x.begin(), x.end());
    std::vector<double> p(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        p[i] = x[i] - lo + kShiftEps;
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

std::vector<std::size_t> gather_indices(std::size_t n, const std::vector<std::size_t>& exclude_sorted) {
    std::vector<std::size_t> out;
    std::size_t e = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (e < exclude_sorted.size() && exclude_sorted[e] == i) {
            ++e;
        } else {
            out.push_back(i);
        }
    }
    return out;
}

}  // namespace

// ---- linear SVM ------------------------------------------------------------

SvmModel svm_train(const FeatureMatrix& features, std::span<const int> labels, const SvmConfig& config) {
    const std::size_t d = check_matrix(features, "svm_train");
    const std::size_t n = features.size();
    if (labels.size() != n) throw ShapeError("svm_train: " + std::to_string(labels.size()) + " labels for " +
                                             std::to_string(n) + " samples");
    if (!(config.lambda > 0.0)) throw ConfigError("svm_train: lambda must be positive");
    if (config.epochs == 0) throw ConfigError("svm_train: epochs must be positive");
    int max_label = 0;
    for (int y : labels) {
        if (y < 0) throw ConfigError("svm_train: negative label");
        max_label = std::max(max_label, y);
    }
    const auto distinct = [&] {
        std::vector<int> l(labels.begin(), labels.end());
        std::sort(l.begin(), l.end());
        return static_cast<std::size_t>(std::unique(l.begin(), l.end()) - l.begin());
    }();
    if (distinct < 2) throw ConfigError("svm_train: need at least two classes");
    const std::size_t classes = static_cast<std::size_t>(max_label) + 1;

    std::vector<double> mu(d, 0.0);
    for (const auto& x : features) {
        for (std::size_t j = 0; j < d; ++j) mu[j] += x[j];
    }
    for (double& m : mu) m /= static_cast<double>(n);
    // Centered rows with a trailing constant 1 for the bias.
    std::vector<std::vector<double>> rows(n, std::vector<double>(d + 1, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) rows[i][j] = features[i][j] - mu[j];
    }

    SvmModel model;
    model.lambda = config.lambda;
    model.seed = config.seed;
    std::vector<std::size_t> order(n);
    for (std::size_t c = 0; c < classes; ++c) {
        // w = scale * v keeps the shrink step O(1).
        std::vector<double> v(d + 1, 0.0);
        double scale = 1.0;
        std::mt19937_64 rng(derive_seed(config.seed, c));
        std::size_t t = 0;
        for (std::size_t e = 0; e < config.epochs; ++e) {
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t i : order) {
                ++t;
                const double eta = 1.0 / (config.lambda * static_cast<double>(t));
                const double y = labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
                const double margin = y * scale * dot(v, rows[i]);
                const double shrink = 1.0 - eta * config.lambda;
                if (shrink == 0.0) {
                    std::fill(v.begin(), v.end(), 0.0);
                    scale = 1.0;
                } else {
                    scale *= shrink;
                }
                if (margin < 1.0) {
                    const double step = eta * y / scale;
                    for (std::size_t j = 0; j <= d; ++j) v[j] += step * rows[i][j];
                }
                if (scale < 1e-100) {
                    for (double& x : v) x *= scale;
                    scale = 1.0;
                }
            }
        }
        std::vector<double> w(d);
        for (std::size_t j = 0; j < d; ++j) w[j] = scale * v[j];
        model.bias.push_back(scale * v[d] - dot(w, mu));
        model.weights.push_back(std::move(w));
    }
    return model;
}

SvmPrediction svm_predict(const SvmModel& model, std::span<const double> feature) {
    if (feature.size() != model.dim()) {
        throw ShapeError("svm_predict: feature has " + std::to_string(feature.size()) + " dimensions, model has " +
                         std::to_string(model.dim()));
    }
    SvmPrediction p;
    for (std::size_t c = 0; c < model.classes(); ++c) p.scores.push_back(dot(model.weights[c], feature) + model.bias[c]);
    p.label = static_cast<int>(std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin());
    return p;
}

double svm_objective(const SvmModel& model, const FeatureMatrix& features, std::span<const int> labels,
                     std::size_t cls) {
    const std::vector<double>& w = model.weights.at(cls);
    double hinge = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const double y = labels[i] == static_cast<int>(cls) ? 1.0 : -1.0;
        hinge += std::max(0.0, 1.0 - y * (dot(w, features[i]) + model.bias[cls]));
    }
    return 0.5 * model.lambda * dot(w, w) + hinge / static_cast<double>(features.size());
}

// ---- PCA -------------------------------------------------------------------

PcaModel pca_fit(const FeatureMatrix& features, std::size_t k) {
    const std::size_t d = check_matrix(features, "pca_fit");
    const std::size_t n = features.size();
    if (k == 0 || k > std::min(n - 1, d)) {
        throw ConfigError("pca_fit: k = " + std::to_string(k) + " outside [1, min(samples - 1, dim)] = [1, " +
                          std::to_string(n > 0 ? std::min(n - 1, d) : 0) + "]");
    }
    Eigen::MatrixXd x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x(i, j) = features[i][j];
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("pca_fit: eigendecomposition failed");

    PcaModel m;
    m.mean.assign(mean.data(), mean.data() + d);
    for (std::size_t c = 0; c < k; ++c) {
        const auto col = static_cast<Eigen::Index>(d - 1 - c);  // eigenvalues come ascending
        Eigen::VectorXd v = eig.eigenvectors().col(col);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        m.components.emplace_back(v.data(), v.data() + d);
        m.eigenvalues.push_back(std::max(0.0, eig.eigenvalues()(col)));
    }
    return m;
}

std::vector<double> pca_project(const PcaModel& model, std::span<const double> feature) {
    if (feature.size() != model.mean.size()) {
        throw ShapeError("pca_project: feature has " + std::to_string(feature.size()) + " dimensions, model has " +
                         std::to_string(model.mean.size()));
    }
    std::vector<double> centered(feature.size());
    for (std::size_t j = 0; j < feature.size(); ++j) centered[j] = feature[j] - model.mean[j];
    std::vector<double> out;
    for (const auto& c : model.components) out.push_back(dot(c, centered));
    return out;
}

FeatureMatrix pca_project(const PcaModel& model, const FeatureMatrix& features) {
    FeatureMatrix out;
    for (const auto& f : features) out.push_back(pca_project(model, f));
    return out;
}

// ---- pair similarity -------------------------------------------------------

std::array<double, kDistanceCount> pair_distances(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ShapeError("pair_distances: dimensions " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
    }
    if (x.empty()) throw ShapeError("pair_distances: empty vectors");
    const std::size_t d = x.size();
    std::array<double, kDistanceCount> r{};

    double xy = 0, xx = 0, yy = 0, l1 = 0, l2 = 0, linf = 0, canberra = 0, bc_den = 0;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = std::abs(x[i] - y[i]);
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
        l1 += diff;
        l2 += diff * diff;
        linf = std::max(linf, diff);
        const double den = std::abs(x[i]) + std::abs(y[i]);
        if (den > 0) canberra += diff / den;
        bc_den += den;
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(d);
    my /= static_cast<double>(d);
    double cov = 0, vx = 0, vy = 0;
    for (std::size_t i = 0; i < d; ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
    }
    r[0] = xy;
    r[1] = xx > 0 && yy > 0 ? xy / (std::sqrt(xx) * std::sqrt(yy)) : 0.0;
    r[2] = l1;
    r[3] = std::sqrt(l2);
    r[4] = linf;
    r[5] = canberra;
    r[6] = bc_den > 0 ? l1 / bc_den : 0.0;
    r[7] = vx > 0 && vy > 0 ? cov / (std::sqrt(vx) * std::sqrt(vy)) : 0.0;

    const std::vector<double> p = shifted_normalized(x), q = shifted_normalized(y);
    double chi2 = 0, hell = 0, inter = 0, kl_p = 0, kl_q = 0;
    for (std::size_t i = 0; i < d; ++i) {
        const double s = p[i] + q[i];
        chi2 += (p[i] - q[i]) * (p[i] - q[i]) / s;
        const double h = std::sqrt(p[i]) - std::sqrt(q[i]);
        hell += h * h;
        inter += std::min(p[i], q[i]);
        const double m = 0.5 * s;
        kl_p += p[i] * std::log(p[i] / m);
        kl_q += q[i] * std::log(q[i] / m);
    }
    r[8] = chi2;
    r[9] = std::sqrt(0.5 * hell);
    r[10] = inter;
    r[11] = std::max(0.0, 0.5 * kl_p + 0.5 * kl_q);
    return r;
}

std::vector<double> pair_feature(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    if (a.size() != b.size()) throw ShapeError("pair_feature: feature type counts differ");
    std::vector<double> out;
    for (std::size_t t = 0; t < a.size(); ++t) {
        const auto d = pair_distances(a[t], b[t]);
        out.insert(out.end(), d.begin(), d.end());
    }
    return out;
}

std::vector<VideoPair> make_class_disjoint_pairs(std::span<const int> labels, std::size_t folds,
                                                 std::size_t pairs_per_fold, std::uint64_t seed) {
    if (folds == 0) throw ConfigError("make_class_disjoint_pairs: need at least one fold");
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
    std::vector<int> classes;
    for (const auto& [c, idx] : members) {
        if (idx.size() < 2) {
            throw ConfigError("make_class_disjoint_pairs: class " + std::to_string(c) + " has fewer than 2 videos");
        }
        classes.push_back(c);
    }
    if (classes.size() < 2 * folds) {
        throw ConfigError("make_class_disjoint_pairs: " + std::to_string(classes.size()) + " classes cannot fill " +
                          std::to_string(folds) + " folds with 2 classes each");
    }
    std::mt19937_64 rng(seed);
    std::shuffle(classes.begin(), classes.end(), rng);
    std::vector<std::vector<int>> fold_classes(folds);
    for (std::size_t i = 0; i < classes.size(); ++i) fold_classes[i % folds].push_back(classes[i]);

    std::vector<VideoPair> pairs;
    pairs.reserve(folds * pairs_per_fold);
    for (std::size_t f = 0; f < folds; ++f) {
        const auto& fc = fold_classes[f];
        std::uniform_int_distribution<std::size_t> pick_class(0, fc.size() - 1);
        auto pick_video = [&](int c, std::size_t avoid) {
            const auto& m = members[c];
            std::uniform_int_distribution<std::size_t> d(0, m.size() - 1);
            std::size_t v = m[d(rng)];
            while (v == avoid) v = m[d(rng)];
            return v;
        };
        for (std::size_t p = 0; p < pairs_per_fold; ++p) {
            const int c1 = fc[pick_class(rng)];
            int c2 = c1;
            if (p % 2 == 1) {
                while (c2 == c1) c2 = fc[pick_class(rng)];
            }
            const std::size_t a = pick_video(c1, labels.size());
            const std::size_t b = pick_video(c2, a);
            pairs.push_back({a, b, c1 == c2 ? 1 : 0, f});
        }
    }
    return pairs;
}

ZNormalizer znorm_fit(const FeatureMatrix& rows) {
    const std::size_t d = check_matrix(rows, "znorm_fit");
    if (rows.size() < 2) throw ConfigError("znorm_fit: need at least two training rows");
    ZNormalizer z{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < d; ++j) z.mean[j] += r[j];
    }
    for (double& m : z.mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < d; ++j) z.stddev[j] += (r[j] - z.mean[j]) * (r[j] - z.mean[j]);
    }
    for (std::size_t j = 0; j < d; ++j) {
        const double sd = std::sqrt(z.stddev[j] / static_cast<double>(rows.size()));
        // Spread at rounding level of the mean counts as constant.
        z.stddev[j] = sd > 1e-12 * std::max(1.0, std::abs(z.mean[j])) ? sd : 0.0;
    }
    return z;
}

std::vector<double> znorm_apply(const ZNormalizer& z, std::span<const double> row) {
    if (row.size() != z.mean.size()) throw ShapeError("znorm_apply: dimension mismatch");
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = z.stddev[j] > 0 ? (row[j] - z.mean[j]) / z.stddev[j] : 0.0;
    return out;
}

FeatureMatrix znorm_apply(const ZNormalizer& z, const FeatureMatrix& rows) {
    FeatureMatrix out;
    for (const auto& r : rows) out.push_back(znorm_apply(z, r));
    return out;
}

// ---- ROC -------------------------------------------------------------------

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // 2 * wins + ties, accumulated over groups of equal score.
    std::uint64_t twice = 0, neg_below = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        std::uint64_t gp = 0, gn = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            const int l = labels[idx[j]];
            if (l != 0 && l != 1) throw ConfigError("roc_auc: labels must be 0 or 1");
            (l == 1 ? gp : gn) += 1;
            ++j;
        }
        twice += gp * (2 * neg_below + gn);
        neg_below += gn;
        pos += gp;
        neg += gn;
        i = j;
    }
    if (pos == 0 || neg == 0) throw ConfigError("roc_auc: both positive and negative samples are required");
    return static_cast<double>(twice) / static_cast<double>(2 * pos * neg);
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_curve: scores and labels differ in length");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw ConfigError("roc_curve: both positive and negative samples are required");
    std::vector<RocPoint> curve{{0.0, 0.0}};
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] == 1 ? tp : fp) += 1;
            ++j;
        }
        curve.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                         static_cast<double>(tp) / static_cast<double>(pos)});
        i = j;
    }
    return curve;
}

void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "fpr,tpr\n";
    for (const auto& p : curve) out << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

// ---- cross-validation ------------------------------------------------------

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, const CvProtocol& protocol) {
    if (n < 2) throw ConfigError("cross-validation needs at least two samples");
    std::vector<std::vector<std::size_t>> folds;
    if (const auto* kf = std::get_if<KFold>(&protocol)) {
        if (kf->k < 2 || kf->k > n) {
            throw ConfigError("k-fold: k = " + std::to_string(kf->k) + " must be in [2, " + std::to_string(n) + "]");
        }
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(kf->seed);
        std::shuffle(order.begin(), order.end(), rng);
        folds.resize(kf->k);
        for (std::size_t i = 0; i < n; ++i) folds[i % kf->k].push_back(order[i]);
    } else if (std::holds_alternative<LeaveOneOut>(protocol)) {
        for (std::size_t i = 0; i < n; ++i) folds.push_back({i});
    } else {
        const auto& ids = std::get<ExplicitFolds>(protocol).fold_of;
        if (ids.size() != n) throw ShapeError("explicit folds: one fold id per sample is required");
        const std::size_t k = *std::max_element(ids.begin(), ids.end()) + 1;
        folds.resize(k);
        for (std::size_t i = 0; i < n; ++i) folds[ids[i]].push_back(i);
        for (std::size_t f = 0; f < k; ++f) {
            if (folds[f].empty()) throw ConfigError("explicit folds: fold " + std::to_string(f) + " is empty");
        }
        if (k < 2) throw ConfigError("explicit folds: at least two folds are required");
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

FoldResult train_test_probe(const FeatureMatrix& train, std::span<const int> train_labels, const FeatureMatrix& test,
                            std::span<const int> test_labels, const ProbeConfig& config) {
    if (test.empty()) throw ConfigError("probe: empty test set");
    FeatureMatrix tr = train, te = test;
    if (config.znorm) {
        const ZNormalizer z = znorm_fit(tr);
        tr = znorm_apply(z, tr);
        te = znorm_apply(z, te);
    }
    if (config.pca_k > 0) {
        const PcaModel p = pca_fit(tr, config.pca_k);
        tr = pca_project(p, tr);
        te = pca_project(p, te);
    }
    const SvmModel model = svm_train(tr, train_labels, config.svm);
    FoldResult r;
    r.train_size = train.size();
    r.test_size = test.size();
    std::size_t correct = 0;
    const bool binary = model.classes() == 2;
    for (std::size_t i = 0; i < te.size(); ++i) {
        const SvmPrediction p = svm_predict(model, te[i]);
        correct += p.label == test_labels[i];
        if (binary) {
            r.scores.push_back(p.scores[1] - p.scores[0]);
            r.truth.push_back(test_labels[i]);
        }
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(te.size());
    if (binary) {
        const auto pos = std::count(r.truth.begin(), r.truth.end(), 1);
        if (pos > 0 && static_cast<std::size_t>(pos) < r.truth.size()) r.auc = roc_auc(r.scores, r.truth);
    }
    return r;
}

CvResult cross_validate(const FeatureMatrix& features, std::span<const int> labels, const CvProtocol& protocol,
                        const ProbeConfig& config) {
    check_matrix(features, "cross_validate");
    if (labels.size() != features.size()) throw ShapeError("cross_validate: one label per sample is required");
    const auto folds = make_folds(features.size(), protocol);
    CvResult out;
    double auc_sum = 0.0;
    std::size_t auc_n = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto train_idx = gather_indices(features.size(), folds[f]);
        FeatureMatrix tr, te;
        std::vector<int> ytr, yte;
        for (std::size_t i : train_idx) {
            tr.push_back(features[i]);
            ytr.push_back(labels[i]);
        }
        for (std::size_t i : folds[f]) {
            te.push_back(features[i]);
            yte.push_back(labels[i]);
        }
        ProbeConfig fold_cfg = config;
        fold_cfg.svm.seed = derive_seed(config.svm.seed, f);
        FoldResult r = train_test_probe(tr, ytr, te, yte, fold_cfg);
        r.fold = f;
        out.mean_accuracy += r.accuracy;
        if (r.auc) {
            auc_sum += *r.auc;
            ++auc_n;
        }
        out.folds.push_back(std::move(r));
    }
    out.mean_accuracy /= static_cast<double>(folds.size());
    if (auc_n > 0) out.mean_auc = auc_sum / static_cast<double>(auc_n);
    return out;
}

void write_cv_csv(const std::filesystem::path& path, const CvResult& result) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "fold,train_size,test_size,accuracy,auc\n";
    for (const auto& f : result.folds) {
        out << f.fold << ',' << f.train_size << ',' << f.test_size << ',' << format_double(f.accuracy) << ','
            << (f.auc ? format_double(*f.auc) : "") << '\n';
    }
    out << "mean,,," << format_double(result.mean_accuracy) << ','
        << (result.mean_auc ? format_double(*result.mean_auc) : "") << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace c3d
