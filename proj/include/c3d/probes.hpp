#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace c3d {

/// Row-per-sample feature matrix.
using FeatureMatrix = std::vector<std::vector<double>>;

// ---- linear SVM ------------------------------------------------------------

struct SvmConfig {
    double lambda = 1e-4;
    std::size_t epochs = 100;
    std::uint64_t seed = 1;
};

/// One-vs-rest linear separators; score_c(x) = weights[c] . x + bias[c].
struct SvmModel {
    std::vector<std::vector<double>> weights;
    std::vector<double> bias;
    double lambda = 0.0;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t classes() const noexcept { return weights.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return weights.empty() ? 0 : weights.front().size(); }
};

/// Pegasos stochastic subgradient descent on the regularized hinge loss, one
/// binary problem per class (labels 0..max). Features are centered with the
/// training mean and augmented with a constant 1 whose weight becomes the
/// bias; the centering is folded back into the bias of the returned model.
[[nodiscard]] SvmModel svm_train(const FeatureMatrix& features, std::span<const int> labels, const SvmConfig& config);

struct SvmPrediction {
    int label = 0;  // argmax of scores, lowest index on ties
    std::vector<double> scores;
};
[[nodiscard]] SvmPrediction svm_predict(const SvmModel& model, std::span<const double> feature);

/// Regularized hinge objective of one class's separator, averaged over samples.
[[nodiscard]] double svm_objective(const SvmModel& model, const FeatureMatrix& features, std::span<const int> labels,
                                   std::size_t cls);

// ---- PCA -------------------------------------------------------------------

struct PcaModel {
    std::vector<double> mean;
    std::vector<std::vector<double>> components;  // k rows of length d, orthonormal
    std::vector<double> eigenvalues;              // non-increasing
};

/// Top-k eigenvectors of the sample covariance (divisor n - 1). Each
/// component's largest-magnitude entry is made positive.
[[nodiscard]] PcaModel pca_fit(const FeatureMatrix& features, std::size_t k);
[[nodiscard]] std::vector<double> pca_project(const PcaModel& model, std::span<const double> feature);
[[nodiscard]] FeatureMatrix pca_project(const PcaModel& model, const FeatureMatrix& features);

// ---- pair similarity -------------------------------------------------------

inline constexpr std::size_t kDistanceCount = 12;
inline constexpr std::array<const char*, kDistanceCount> kDistanceNames = {
    "dot",        "cosine",    "l1",      "l2",        "linf",         "canberra",
    "braycurtis", "pearson",   "chi2",    "hellinger", "intersection", "jensen_shannon"};

/// The 12 measures in kDistanceNames order. The last four operate on the
/// shifted-normalized inputs (x - min(x) + 1e-12, divided by the sum).
[[nodiscard]] std::array<double, kDistanceCount> pair_distances(std::span<const double> x, std::span<const double> y);

/// Concatenates pair_distances over feature types, type-major.
[[nodiscard]] std::vector<double> pair_feature(const std::vector<std::vector<double>>& a,
                                               const std::vector<std::vector<double>>& b);

/// A video pair for same/different labeling. Pairs of one fold come from a
/// subset of classes no other fold uses.
struct VideoPair {
    std::size_t a = 0;
    std::size_t b = 0;
    int same = 0;
    std::size_t fold = 0;
};
/// Classes are dealt to `folds` groups after a seeded shuffle; each fold gets
/// pairs_per_fold pairs, half same-class and half different-class, drawn only
/// from its own classes. Needs >= 2 classes per fold and >= 2 videos per class.
[[nodiscard]] std::vector<VideoPair> make_class_disjoint_pairs(std::span<const int> labels, std::size_t folds,
                                                               std::size_t pairs_per_fold, std::uint64_t seed);

/// Per-dimension mean and population standard deviation from training rows.
struct ZNormalizer {
    std::vector<double> mean;
    std::vector<double> stddev;  // 0 marks a constant dimension, mapped to 0
};
[[nodiscard]] ZNormalizer znorm_fit(const FeatureMatrix& rows);
[[nodiscard]] std::vector<double> znorm_apply(const ZNormalizer& z, std::span<const double> row);
[[nodiscard]] FeatureMatrix znorm_apply(const ZNormalizer& z, const FeatureMatrix& rows);

// ---- ROC -------------------------------------------------------------------

/// Probability that a positive outranks a negative, ties counting 1/2.
/// Labels are 0 (negative) or 1 (positive).
[[nodiscard]] double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};
/// Curve from (0, 0) to (1, 1), one point per distinct score threshold.
[[nodiscard]] std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& curve);

// ---- cross-validation ------------------------------------------------------

struct KFold {
    std::size_t k = 10;
    std::uint64_t seed = 1;
};
struct LeaveOneOut {};
/// Caller-assigned fold id per sample, e.g. to keep classes disjoint.
struct ExplicitFolds {
    std::vector<std::size_t> fold_of;
};
using CvProtocol = std::variant<KFold, LeaveOneOut, ExplicitFolds>;

/// Test-index sets of each fold; together they partition 0..n-1.
[[nodiscard]] std::vector<std::vector<std::size_t>> make_folds(std::size_t n, const CvProtocol& protocol);

struct ProbeConfig {
    SvmConfig svm;
    bool znorm = false;       // z-normalize with train-fold statistics
    std::size_t pca_k = 0;    // 0 keeps the raw features
};

struct FoldResult {
    std::size_t fold = 0;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    double accuracy = 0.0;
    std::optional<double> auc;  // binary problems with both classes in the test fold
    std::vector<double> scores;  // binary problems: score[1] - score[0] per test sample
    std::vector<int> truth;
};

struct CvResult {
    std::vector<FoldResult> folds;
    double mean_accuracy = 0.0;
    std::optional<double> mean_auc;
};

/// Trains and evaluates the SVM probe on every fold with per-fold seeds
/// derived from config.svm.seed.
[[nodiscard]] CvResult cross_validate(const FeatureMatrix& features, std::span<const int> labels,
                                      const CvProtocol& protocol, const ProbeConfig& config);

/// Train on one set, report accuracy on another.
[[nodiscard]] FoldResult train_test_probe(const FeatureMatrix& train, std::span<const int> train_labels,
                                          const FeatureMatrix& test, std::span<const int> test_labels,
                                          const ProbeConfig& config);

/// CSV: fold,train_size,test_size,accuracy,auc rows plus a "mean" row.
void write_cv_csv(const std::filesystem::path& path, const CvResult& result);

}  // namespace c3d
