#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "ecofuse/dataset.hpp"
#include "ecofuse/matrix.hpp"
#include "ecofuse/metrics.hpp"

namespace ecofuse::stacking {

struct BlockInfo {
    std::string model_id;
    std::vector<std::string> class_names;
};

// Concatenated per-model probability rows: column block m holds model m's
// probabilities verbatim, so width is always k*C.
struct StackedFeatures {
    std::vector<std::string> sample_ids;
    Matrix matrix;
    std::vector<BlockInfo> layout;

    std::size_t n() const { return matrix.rows; }
    std::size_t width() const { return matrix.cols; }
};

enum class MetaKind { logistic, linear_svm, mlp, random_forest };

std::string to_string(MetaKind kind);
MetaKind meta_kind_from_string(const std::string& name);

// Hyperparameters for every meta-learner, recorded in each trained model.
struct MetaHyper {
    // multinomial logistic regression, full-batch GD with backtracking
    double logit_l2 = 1e-4;
    int logit_max_iter = 500;
    double logit_tol = 1e-8;  // stop when the loss decrease falls below this
    // one-vs-rest linear SVM, full-batch subgradient descent
    double svm_c = 1.0;
    int svm_max_iter = 500;
    double svm_lr0 = 0.5;
    // one-hidden-layer MLP, full-batch GD
    int mlp_hidden = 16;
    int mlp_epochs = 300;
    double mlp_lr = 0.05;
    double mlp_init_span = 0.5;  // weights drawn uniformly from [-span, span]
    // random forest, Gini impurity
    int forest_trees = 100;
    int forest_max_depth = 0;  // 0 = grow until pure
    int forest_mtry = 0;       // features per split; 0 = ceil(sqrt(width))
    bool forest_bootstrap = true;
    // stack evaluation: 0 trains on the full training features; F >= 2
    // cross-fits F fold models and averages their test probabilities
    int oof_folds = 0;
};

struct LinearParams {
    Matrix w;  // class_count x input_width
    std::vector<double> b;
};

struct MlpParams {
    Matrix w1;  // hidden x input_width
    std::vector<double> b1;
    Matrix w2;  // class_count x hidden
    std::vector<double> b2;
};

struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<double> leaf;  // class distribution; empty for interior nodes

    bool is_leaf() const { return !leaf.empty(); }
};

struct Tree {
    std::vector<TreeNode> nodes;  // node 0 is the root
};

struct ForestParams {
    std::vector<Tree> trees;
};

struct MetaModel {
    MetaKind kind = MetaKind::logistic;
    std::size_t input_width = 0;
    std::size_t class_count = 0;
    std::vector<std::string> class_names;
    MetaHyper hyper;
    std::uint64_t train_seed = 0;
    std::variant<LinearParams, MlpParams, ForestParams> params;
};

struct MetaPrediction {
    data::LabelVector labels;
    data::ProbabilityMatrix probabilities;
};

StackedFeatures build_meta_features(const data::AlignedBundle& bundle);

MetaModel train_meta_model(const StackedFeatures& features, const data::LabelVector& labels,
                           MetaKind kind, const MetaHyper& hyper = {},
                           std::uint64_t seed = 0);

// Probabilities plus argmax labels (lowest class index wins ties, the same
// rule the fusion module uses). SVM margins are mapped to probabilities by a
// softmax over the per-class scores.
MetaPrediction predict_meta(const MetaModel& model, const StackedFeatures& features);

struct StackOutcome {
    std::vector<MetaModel> models;  // one model, or oof_folds fold models
    MetaPrediction test_prediction;
    metrics::MetricsReport metrics;
};

// Trains on the train bundle's meta-features and scores the test bundle.
// With hyper.oof_folds >= 2 the training set is cross-fitted: each fold model
// is trained on the other folds and the test probabilities are their average.
StackOutcome run_stack(const data::AlignedBundle& train_bundle,
                       const data::AlignedBundle& test_bundle, MetaKind kind,
                       const MetaHyper& hyper = {}, std::uint64_t seed = 0);

metrics::MetricsReport evaluate_stack(const data::AlignedBundle& train_bundle,
                                      const data::AlignedBundle& test_bundle, MetaKind kind,
                                      const MetaHyper& hyper = {}, std::uint64_t seed = 0);

// Versioned JSON round-trip; reloading reproduces predictions bit-exactly.
std::string meta_model_to_json(const MetaModel& model);
MetaModel meta_model_from_json(const std::string& text);
void save_meta_model(const std::filesystem::path& path, const MetaModel& model);
MetaModel load_meta_model(const std::filesystem::path& path);

}  // namespace ecofuse::stacking
