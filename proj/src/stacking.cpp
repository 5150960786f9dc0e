#include "ecofuse/stacking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ecofuse/errors.hpp"
#include "ecofuse/rng.hpp"

namespace ecofuse::stacking {

namespace {

using nlohmann::json;

// Stable log-sum-exp over a score row; also writes softmax probabilities.
double softmax_row(std::span<const double> scores, std::span<double> probs) {
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double sum = 0.0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        probs[j] = std::exp(scores[j] - mx);
        sum += probs[j];
    }
    for (std::size_t j = 0; j < scores.size(); ++j) probs[j] /= sum;
    return mx + std::log(sum);
}

void linear_scores(const Matrix& w, const std::vector<double>& b,
                   std::span<const double> x, std::span<double> out) {
    for (std::size_t j = 0; j < w.rows; ++j) {
        double s = b[j];
        const double* wr = &w.data[j * w.cols];
        for (std::size_t f = 0; f < w.cols; ++f) s += wr[f] * x[f];
        out[j] = s;
    }
}

// Mean negative log-likelihood plus 0.5*l2*||w||^2. probs may be null.
double logistic_loss(const Matrix& x, const std::vector<int>& y, std::size_t c,
                     const Matrix& w, const std::vector<double>& b, double l2,
                     Matrix* probs) {
    const std::size_t n = x.rows;
    std::vector<double> scores(c), p(c);
    double nll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        linear_scores(w, b, x.row(i), scores);
        const double lse = softmax_row(scores, p);
        nll += lse - scores[static_cast<std::size_t>(y[i])];
        if (probs != nullptr) {
            for (std::size_t j = 0; j < c; ++j) (*probs)(i, j) = p[j];
        }
    }
    double reg = 0.0;
    for (double v : w.data) reg += v * v;
    return nll / static_cast<double>(n) + 0.5 * l2 * reg;
}

LinearParams train_logistic(const Matrix& x, const std::vector<int>& y, std::size_t c,
                            const MetaHyper& hyper) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    LinearParams par{Matrix(c, d), std::vector<double>(c, 0.0)};
    Matrix probs(n, c);
    Matrix gw(c, d);
    std::vector<double> gb(c);
    Matrix cand_w(c, d);
    std::vector<double> cand_b(c);

    double loss = logistic_loss(x, y, c, par.w, par.b, hyper.logit_l2, &probs);
    double step = 1.0;
    for (int iter = 0; iter < hyper.logit_max_iter; ++iter) {
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t j = 0; j < c * d; ++j) gw.data[j] = hyper.logit_l2 * par.w.data[j];
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const double diff =
                    (probs(i, j) - (static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0)) /
                    static_cast<double>(n);
                gb[j] += diff;
                double* gwr = &gw.data[j * d];
                const auto xi = x.row(i);
                for (std::size_t f = 0; f < d; ++f) gwr[f] += diff * xi[f];
            }
        }
        double gnorm2 = 0.0;
        for (double v : gw.data) gnorm2 += v * v;
        for (double v : gb) gnorm2 += v * v;
        if (gnorm2 == 0.0) break;

        // Armijo backtracking guarantees monotone loss decrease.
        double t = step;
        double cand_loss = loss;
        for (int halvings = 0; halvings < 60; ++halvings) {
            for (std::size_t j = 0; j < c * d; ++j)
                cand_w.data[j] = par.w.data[j] - t * gw.data[j];
            for (std::size_t j = 0; j < c; ++j) cand_b[j] = par.b[j] - t * gb[j];
            cand_loss = logistic_loss(x, y, c, cand_w, cand_b, hyper.logit_l2, &probs);
            if (cand_loss <= loss - 1e-4 * t * gnorm2) break;
            t *= 0.5;
        }
        if (cand_loss >= loss) break;
        par.w.data.swap(cand_w.data);
        par.b.swap(cand_b);
        const double improvement = loss - cand_loss;
        loss = cand_loss;
        step = t * 2.0;
        if (improvement < hyper.logit_tol) break;
    }
    return par;
}

LinearParams train_linear_svm(const Matrix& x, const std::vector<int>& y, std::size_t c,
                              const MetaHyper& hyper) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    LinearParams par{Matrix(c, d), std::vector<double>(c, 0.0)};
    const double lambda = 1.0 / (hyper.svm_c * static_cast<double>(n));
    std::vector<double> gw(d);

    for (std::size_t cls = 0; cls < c; ++cls) {
        double* w = &par.w.data[cls * d];
        double b = 0.0;
        for (int t = 0; t < hyper.svm_max_iter; ++t) {
            for (std::size_t f = 0; f < d; ++f) gw[f] = lambda * w[f];
            double gb = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double yi = static_cast<std::size_t>(y[i]) == cls ? 1.0 : -1.0;
                const auto xi = x.row(i);
                double s = b;
                for (std::size_t f = 0; f < d; ++f) s += w[f] * xi[f];
                if (yi * s < 1.0) {
                    const double scale = yi / static_cast<double>(n);
                    for (std::size_t f = 0; f < d; ++f) gw[f] -= scale * xi[f];
                    gb -= scale;
                }
            }
            const double eta = hyper.svm_lr0 / std::sqrt(static_cast<double>(t) + 1.0);
            for (std::size_t f = 0; f < d; ++f) w[f] -= eta * gw[f];
            b -= eta * gb;
        }
        par.b[cls] = b;
    }
    return par;
}

MlpParams train_mlp(const Matrix& x, const std::vector<int>& y, std::size_t c,
                    const MetaHyper& hyper, std::uint64_t seed) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    const std::size_t h = static_cast<std::size_t>(hyper.mlp_hidden);
    MlpParams par{Matrix(h, d), std::vector<double>(h, 0.0), Matrix(c, h),
                  std::vector<double>(c, 0.0)};
    std::mt19937_64 gen(seed);
    for (double& v : par.w1.data) v = rng::uniform(gen, -hyper.mlp_init_span, hyper.mlp_init_span);
    for (double& v : par.w2.data) v = rng::uniform(gen, -hyper.mlp_init_span, hyper.mlp_init_span);

    Matrix gw1(h, d), gw2(c, h);
    std::vector<double> gb1(h), gb2(c);
    std::vector<double> z1(h), a1(h), scores(c), p(c), dz1(h), da1(h);

    for (int epoch = 0; epoch < hyper.mlp_epochs; ++epoch) {
        std::fill(gw1.data.begin(), gw1.data.end(), 0.0);
        std::fill(gw2.data.begin(), gw2.data.end(), 0.0);
        std::fill(gb1.begin(), gb1.end(), 0.0);
        std::fill(gb2.begin(), gb2.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto xi = x.row(i);
            for (std::size_t u = 0; u < h; ++u) {
                double s = par.b1[u];
                const double* wr = &par.w1.data[u * d];
                for (std::size_t f = 0; f < d; ++f) s += wr[f] * xi[f];
                z1[u] = s;
                a1[u] = s > 0.0 ? s : 0.0;
            }
            linear_scores(par.w2, par.b2, a1, scores);
            softmax_row(scores, p);

            for (std::size_t j = 0; j < c; ++j) {
                const double dz2 =
                    (p[j] - (static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0)) /
                    static_cast<double>(n);
                gb2[j] += dz2;
                double* gr = &gw2.data[j * h];
                for (std::size_t u = 0; u < h; ++u) gr[u] += dz2 * a1[u];
            }
            for (std::size_t u = 0; u < h; ++u) {
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dz2 =
                        (p[j] - (static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0)) /
                        static_cast<double>(n);
                    s += par.w2(j, u) * dz2;
                }
                da1[u] = s;
                dz1[u] = z1[u] > 0.0 ? s : 0.0;
            }
            for (std::size_t u = 0; u < h; ++u) {
                gb1[u] += dz1[u];
                double* gr = &gw1.data[u * d];
                for (std::size_t f = 0; f < d; ++f) gr[f] += dz1[u] * xi[f];
            }
        }
        for (std::size_t j = 0; j < h * d; ++j) par.w1.data[j] -= hyper.mlp_lr * gw1.data[j];
        for (std::size_t j = 0; j < c * h; ++j) par.w2.data[j] -= hyper.mlp_lr * gw2.data[j];
        for (std::size_t u = 0; u < h; ++u) par.b1[u] -= hyper.mlp_lr * gb1[u];
        for (std::size_t j = 0; j < c; ++j) par.b2[j] -= hyper.mlp_lr * gb2[j];
    }
    return par;
}

double gini(const std::vector<std::size_t>& counts, std::size_t total) {
    double g = 1.0;
    for (std::size_t cnt : counts) {
        const double p = static_cast<double>(cnt) / static_cast<double>(total);
        g -= p * p;
    }
    return g;
}

struct TreeBuilder {
    const Matrix& x;
    const std::vector<int>& y;
    std::size_t class_count;
    int max_depth;
    std::size_t mtry;
    std::mt19937_64& gen;
    std::vector<TreeNode> nodes;
    std::vector<std::size_t> feature_pool;

    TreeBuilder(const Matrix& x_, const std::vector<int>& y_, std::size_t c, int depth,
                std::size_t mtry_, std::mt19937_64& gen_)
        : x(x_), y(y_), class_count(c), max_depth(depth), mtry(mtry_), gen(gen_) {
        feature_pool.resize(x.cols);
        std::iota(feature_pool.begin(), feature_pool.end(), 0);
    }

    int make_leaf(const std::vector<std::size_t>& counts, std::size_t total) {
        TreeNode node;
        node.leaf.resize(class_count);
        for (std::size_t j = 0; j < class_count; ++j)
            node.leaf[j] = static_cast<double>(counts[j]) / static_cast<double>(total);
        nodes.push_back(std::move(node));
        return static_cast<int>(nodes.size()) - 1;
    }

    int build(std::vector<std::size_t>& samples, int depth) {
        const std::size_t n = samples.size();
        std::vector<std::size_t> counts(class_count, 0);
        for (std::size_t s : samples) ++counts[static_cast<std::size_t>(y[s])];
        const bool pure =
            *std::max_element(counts.begin(), counts.end()) == n;
        if (pure || n < 2 || (max_depth > 0 && depth >= max_depth))
            return make_leaf(counts, n);

        // mtry distinct candidate features via partial Fisher-Yates.
        const std::size_t d = x.cols;
        const std::size_t take = std::min(mtry, d);
        for (std::size_t j = 0; j < take; ++j)
            std::swap(feature_pool[j], feature_pool[j + rng::bounded(gen, d - j)]);
        std::vector<std::size_t> chosen(feature_pool.begin(),
                                        feature_pool.begin() + static_cast<long>(take));

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_impurity = std::numeric_limits<double>::infinity();
        std::vector<std::size_t> order;
        std::vector<std::size_t> left_counts(class_count);
        for (std::size_t f : chosen) {
            order = samples;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                const double va = x(a, f);
                const double vb = x(b, f);
                return va < vb || (va == vb && a < b);
            });
            std::fill(left_counts.begin(), left_counts.end(), 0);
            for (std::size_t p = 1; p < n; ++p) {
                ++left_counts[static_cast<std::size_t>(y[order[p - 1]])];
                if (x(order[p - 1], f) == x(order[p], f)) continue;
                std::vector<std::size_t> right_counts(class_count);
                for (std::size_t j = 0; j < class_count; ++j)
                    right_counts[j] = counts[j] - left_counts[j];
                const double impurity =
                    (static_cast<double>(p) * gini(left_counts, p) +
                     static_cast<double>(n - p) * gini(right_counts, n - p)) /
                    static_cast<double>(n);
                if (impurity < best_impurity - 1e-12) {
                    best_feature = static_cast<int>(f);
                    // Largest value routed left; exact, so the realized
                    // partition always matches the scanned one.
                    best_threshold = x(order[p - 1], f);
                    best_impurity = impurity;
                }
            }
        }
        if (best_feature < 0) return make_leaf(counts, n);  // candidates all constant

        std::vector<std::size_t> left_samples, right_samples;
        for (std::size_t s : samples) {
            if (x(s, static_cast<std::size_t>(best_feature)) <= best_threshold)
                left_samples.push_back(s);
            else
                right_samples.push_back(s);
        }
        TreeNode node;
        node.feature = best_feature;
        node.threshold = best_threshold;
        nodes.push_back(std::move(node));
        const int idx = static_cast<int>(nodes.size()) - 1;
        const int left = build(left_samples, depth + 1);
        const int right = build(right_samples, depth + 1);
        nodes[static_cast<std::size_t>(idx)].left = left;
        nodes[static_cast<std::size_t>(idx)].right = right;
        return idx;
    }
};

ForestParams train_forest(const Matrix& x, const std::vector<int>& y, std::size_t c,
                          const MetaHyper& hyper, std::uint64_t seed) {
    const std::size_t n = x.rows;
    const std::size_t mtry =
        hyper.forest_mtry > 0
            ? std::min<std::size_t>(static_cast<std::size_t>(hyper.forest_mtry), x.cols)
            : static_cast<std::size_t>(
                  std::ceil(std::sqrt(static_cast<double>(x.cols))));
    ForestParams forest;
    forest.trees.resize(static_cast<std::size_t>(hyper.forest_trees));
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
        std::mt19937_64 gen(rng::derive_seed(seed, "tree:" + std::to_string(t)));
        std::vector<std::size_t> samples(n);
        if (hyper.forest_bootstrap) {
            for (std::size_t i = 0; i < n; ++i) samples[i] = rng::bounded(gen, n);
        } else {
            std::iota(samples.begin(), samples.end(), 0);
        }
        TreeBuilder builder(x, y, c, hyper.forest_max_depth, mtry, gen);
        builder.build(samples, 0);
        forest.trees[t].nodes = std::move(builder.nodes);
    }
    return forest;
}

const std::vector<double>& tree_leaf(const Tree& tree, std::span<const double> x) {
    const TreeNode* node = &tree.nodes[0];
    while (!node->is_leaf()) {
        const std::size_t next = x[static_cast<std::size_t>(node->feature)] <= node->threshold
                                     ? static_cast<std::size_t>(node->left)
                                     : static_cast<std::size_t>(node->right);
        node = &tree.nodes[next];
    }
    return node->leaf;
}

// ---- JSON helpers ----

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols; ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r > 0 ? rows.at(0).size() : 0;
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m(i, j) = rows.at(i).at(j).get<double>();
    return m;
}

json hyper_to_json(const MetaHyper& h) {
    return json{{"logit_l2", h.logit_l2},
                {"logit_max_iter", h.logit_max_iter},
                {"logit_tol", h.logit_tol},
                {"svm_c", h.svm_c},
                {"svm_max_iter", h.svm_max_iter},
                {"svm_lr0", h.svm_lr0},
                {"mlp_hidden", h.mlp_hidden},
                {"mlp_epochs", h.mlp_epochs},
                {"mlp_lr", h.mlp_lr},
                {"mlp_init_span", h.mlp_init_span},
                {"forest_trees", h.forest_trees},
                {"forest_max_depth", h.forest_max_depth},
                {"forest_mtry", h.forest_mtry},
                {"forest_bootstrap", h.forest_bootstrap},
                {"oof_folds", h.oof_folds}};
}

MetaHyper hyper_from_json(const json& j) {
    MetaHyper h;
    h.logit_l2 = j.at("logit_l2").get<double>();
    h.logit_max_iter = j.at("logit_max_iter").get<int>();
    h.logit_tol = j.at("logit_tol").get<double>();
    h.svm_c = j.at("svm_c").get<double>();
    h.svm_max_iter = j.at("svm_max_iter").get<int>();
    h.svm_lr0 = j.at("svm_lr0").get<double>();
    h.mlp_hidden = j.at("mlp_hidden").get<int>();
    h.mlp_epochs = j.at("mlp_epochs").get<int>();
    h.mlp_lr = j.at("mlp_lr").get<double>();
    h.mlp_init_span = j.at("mlp_init_span").get<double>();
    h.forest_trees = j.at("forest_trees").get<int>();
    h.forest_max_depth = j.at("forest_max_depth").get<int>();
    h.forest_mtry = j.at("forest_mtry").get<int>();
    h.forest_bootstrap = j.at("forest_bootstrap").get<bool>();
    h.oof_folds = j.at("oof_folds").get<int>();
    return h;
}

}  // namespace

std::string to_string(MetaKind kind) {
    switch (kind) {
        case MetaKind::logistic: return "logistic";
        case MetaKind::linear_svm: return "linear_svm";
        case MetaKind::mlp: return "mlp";
        case MetaKind::random_forest: return "random_forest";
    }
    throw ValidationError("invalid meta-learner kind");
}

MetaKind meta_kind_from_string(const std::string& name) {
    if (name == "logistic") return MetaKind::logistic;
    if (name == "linear_svm") return MetaKind::linear_svm;
    if (name == "mlp") return MetaKind::mlp;
    if (name == "random_forest") return MetaKind::random_forest;
    throw ValidationError("unknown meta-learner kind: " + name);
}

StackedFeatures build_meta_features(const data::AlignedBundle& bundle) {
    const std::size_t k = bundle.k();
    const std::size_t n = bundle.n();
    const std::size_t c = bundle.c();
    StackedFeatures features;
    features.sample_ids = bundle.labels.sample_ids;
    features.matrix = Matrix(n, k * c);
    for (std::size_t m = 0; m < k; ++m) {
        features.layout.push_back({bundle.models[m].model_id, bundle.models[m].class_names});
        const Matrix& src = bundle.models[m].rows;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) features.matrix(i, m * c + j) = src(i, j);
    }
    return features;
}

MetaModel train_meta_model(const StackedFeatures& features, const data::LabelVector& labels,
                           MetaKind kind, const MetaHyper& hyper, std::uint64_t seed) {
    if (features.n() != labels.sample_ids.size())
        throw DimensionMismatch("feature rows and label count differ");
    if (features.sample_ids != labels.sample_ids)
        throw SampleSetMismatch("feature sample ids and label sample ids differ");

    int max_label = -1;
    int min_label = std::numeric_limits<int>::max();
    for (int v : labels.labels) {
        max_label = std::max(max_label, v);
        min_label = std::min(min_label, v);
    }
    if (min_label < 0) throw DimensionMismatch("negative class label");
    std::vector<bool> seen(static_cast<std::size_t>(max_label) + 1, false);
    for (int v : labels.labels) seen[static_cast<std::size_t>(v)] = true;
    if (std::count(seen.begin(), seen.end(), true) < 2)
        throw DegenerateLabels("training labels contain a single class");

    MetaModel model;
    model.kind = kind;
    model.input_width = features.width();
    model.hyper = hyper;
    model.train_seed = seed;
    if (!features.layout.empty() && features.layout.front().class_names.size() >= 2) {
        model.class_names = features.layout.front().class_names;
    } else {
        for (int j = 0; j <= max_label; ++j)
            model.class_names.push_back("class_" + std::to_string(j));
    }
    model.class_count = model.class_names.size();
    if (static_cast<std::size_t>(max_label) >= model.class_count)
        throw DimensionMismatch("class label out of range");
    if (features.n() < model.class_count)
        throw DimensionMismatch("need at least one sample per class");

    const Matrix& x = features.matrix;
    const std::vector<int>& y = labels.labels;
    switch (kind) {
        case MetaKind::logistic:
            model.params = train_logistic(x, y, model.class_count, hyper);
            break;
        case MetaKind::linear_svm:
            model.params = train_linear_svm(x, y, model.class_count, hyper);
            break;
        case MetaKind::mlp:
            model.params = train_mlp(x, y, model.class_count, hyper, seed);
            break;
        case MetaKind::random_forest:
            model.params = train_forest(x, y, model.class_count, hyper, seed);
            break;
    }
    return model;
}

MetaPrediction predict_meta(const MetaModel& model, const StackedFeatures& features) {
    if (features.width() != model.input_width)
        throw DimensionMismatch("feature width " + std::to_string(features.width()) +
                                " does not match model input width " +
                                std::to_string(model.input_width));
    const std::size_t n = features.n();
    const std::size_t c = model.class_count;
    Matrix probs(n, c);
    std::vector<double> scores(c);

    if (const auto* linear = std::get_if<LinearParams>(&model.params)) {
        for (std::size_t i = 0; i < n; ++i) {
            linear_scores(linear->w, linear->b, features.matrix.row(i), scores);
            softmax_row(scores, probs.row(i));
        }
    } else if (const auto* mlp = std::get_if<MlpParams>(&model.params)) {
        const std::size_t h = mlp->b1.size();
        std::vector<double> a1(h);
        for (std::size_t i = 0; i < n; ++i) {
            const auto xi = features.matrix.row(i);
            for (std::size_t u = 0; u < h; ++u) {
                double s = mlp->b1[u];
                const double* wr = &mlp->w1.data[u * mlp->w1.cols];
                for (std::size_t f = 0; f < xi.size(); ++f) s += wr[f] * xi[f];
                a1[u] = s > 0.0 ? s : 0.0;
            }
            linear_scores(mlp->w2, mlp->b2, a1, scores);
            softmax_row(scores, probs.row(i));
        }
    } else {
        const auto& forest = std::get<ForestParams>(model.params);
        const double inv = 1.0 / static_cast<double>(forest.trees.size());
        for (std::size_t i = 0; i < n; ++i) {
            const auto xi = features.matrix.row(i);
            auto out = probs.row(i);
            std::fill(out.begin(), out.end(), 0.0);
            for (const Tree& tree : forest.trees) {
                const std::vector<double>& leaf = tree_leaf(tree, xi);
                for (std::size_t j = 0; j < c; ++j) out[j] += leaf[j];
            }
            for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
        }
    }

    MetaPrediction pred;
    pred.labels.sample_ids = features.sample_ids;
    pred.labels.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        pred.labels.labels[i] = static_cast<int>(argmax(probs.row(i)));
    pred.probabilities.model_id = "meta:" + to_string(model.kind);
    pred.probabilities.sample_ids = features.sample_ids;
    pred.probabilities.class_names = model.class_names;
    pred.probabilities.rows = std::move(probs);
    return pred;
}

StackOutcome run_stack(const data::AlignedBundle& train_bundle,
                       const data::AlignedBundle& test_bundle, MetaKind kind,
                       const MetaHyper& hyper, std::uint64_t seed) {
    if (train_bundle.k() != test_bundle.k())
        throw ShapeMismatch("train and test bundles hold different model counts");
    if (train_bundle.class_names() != test_bundle.class_names())
        throw ClassSetMismatch("train and test bundles disagree on class names");
    if (hyper.oof_folds == 1 || hyper.oof_folds < 0)
        throw ValidationError("oof_folds must be 0 or at least 2");

    const StackedFeatures train_features = build_meta_features(train_bundle);
    const StackedFeatures test_features = build_meta_features(test_bundle);

    StackOutcome outcome;
    if (hyper.oof_folds == 0) {
        outcome.models.push_back(
            train_meta_model(train_features, train_bundle.labels, kind, hyper, seed));
        outcome.test_prediction = predict_meta(outcome.models.front(), test_features);
    } else {
        // Cross-fitted committee: fold model f trains on the other folds and
        // the test-set probabilities are the fold average.
        const std::size_t folds = static_cast<std::size_t>(hyper.oof_folds);
        const std::size_t n = train_features.n();
        if (n < folds) throw InsufficientSamples("fewer training samples than folds");

        std::vector<std::size_t> fold_of(n);
        std::mt19937_64 gen(rng::derive_seed(seed, "folds"));
        const std::size_t c = train_bundle.c();
        for (std::size_t cls = 0; cls < c; ++cls) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < n; ++i)
                if (static_cast<std::size_t>(train_bundle.labels.labels[i]) == cls)
                    members.push_back(i);
            rng::shuffle(members, gen);
            for (std::size_t j = 0; j < members.size(); ++j)
                fold_of[members[j]] = j % folds;
        }

        Matrix acc(test_features.n(), c);
        for (std::size_t f = 0; f < folds; ++f) {
            StackedFeatures sub;
            sub.layout = train_features.layout;
            data::LabelVector sub_labels;
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < n; ++i)
                if (fold_of[i] != f) rows.push_back(i);
            sub.matrix = Matrix(rows.size(), train_features.width());
            for (std::size_t r = 0; r < rows.size(); ++r) {
                sub.sample_ids.push_back(train_features.sample_ids[rows[r]]);
                sub_labels.sample_ids.push_back(train_features.sample_ids[rows[r]]);
                sub_labels.labels.push_back(train_bundle.labels.labels[rows[r]]);
                const auto src = train_features.matrix.row(rows[r]);
                std::copy(src.begin(), src.end(), sub.matrix.row(r).begin());
            }
            MetaModel fold_model =
                train_meta_model(sub, sub_labels, kind, hyper,
                                 rng::derive_seed(seed, "fold:" + std::to_string(f)));
            const MetaPrediction fold_pred = predict_meta(fold_model, test_features);
            for (std::size_t j = 0; j < acc.data.size(); ++j)
                acc.data[j] += fold_pred.probabilities.rows.data[j];
            outcome.models.push_back(std::move(fold_model));
        }
        for (double& v : acc.data) v /= static_cast<double>(folds);
        MetaPrediction pred;
        pred.labels.sample_ids = test_features.sample_ids;
        pred.labels.labels.resize(test_features.n());
        for (std::size_t i = 0; i < test_features.n(); ++i)
            pred.labels.labels[i] = static_cast<int>(argmax(acc.row(i)));
        pred.probabilities.model_id = "meta:" + to_string(kind) + ":oof";
        pred.probabilities.sample_ids = test_features.sample_ids;
        pred.probabilities.class_names = train_bundle.class_names();
        pred.probabilities.rows = std::move(acc);
        outcome.test_prediction = std::move(pred);
    }

    const metrics::ConfusionMatrix cm = metrics::confusion_matrix(
        outcome.test_prediction.labels, test_bundle.labels, test_bundle.class_names());
    outcome.metrics = metrics::classification_metrics(cm);
    return outcome;
}

metrics::MetricsReport evaluate_stack(const data::AlignedBundle& train_bundle,
                                      const data::AlignedBundle& test_bundle, MetaKind kind,
                                      const MetaHyper& hyper, std::uint64_t seed) {
    return run_stack(train_bundle, test_bundle, kind, hyper, seed).metrics;
}

std::string meta_model_to_json(const MetaModel& model) {
    json doc{{"format", "ecofuse-meta-model"},
             {"version", 1},
             {"kind", to_string(model.kind)},
             {"input_width", model.input_width},
             {"class_count", model.class_count},
             {"class_names", model.class_names},
             {"train_seed", model.train_seed},
             {"hyper", hyper_to_json(model.hyper)}};
    json params;
    if (const auto* linear = std::get_if<LinearParams>(&model.params)) {
        params["w"] = matrix_to_json(linear->w);
        params["b"] = linear->b;
    } else if (const auto* mlp = std::get_if<MlpParams>(&model.params)) {
        params["w1"] = matrix_to_json(mlp->w1);
        params["b1"] = mlp->b1;
        params["w2"] = matrix_to_json(mlp->w2);
        params["b2"] = mlp->b2;
    } else {
        const auto& forest = std::get<ForestParams>(model.params);
        json trees = json::array();
        for (const Tree& tree : forest.trees) {
            json nodes = json::array();
            for (const TreeNode& node : tree.nodes) {
                if (node.is_leaf()) {
                    nodes.push_back(json{{"leaf", node.leaf}});
                } else {
                    nodes.push_back(json{{"feature", node.feature},
                                         {"threshold", node.threshold},
                                         {"left", node.left},
                                         {"right", node.right}});
                }
            }
            trees.push_back(json{{"nodes", std::move(nodes)}});
        }
        params["trees"] = std::move(trees);
    }
    doc["params"] = std::move(params);
    return doc.dump(2);
}

MetaModel meta_model_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        if (doc.at("format").get<std::string>() != "ecofuse-meta-model")
            throw MalformedFile("not a meta-model document");
        if (doc.at("version").get<int>() != 1)
            throw MalformedFile("unsupported meta-model version");
        MetaModel model;
        model.kind = meta_kind_from_string(doc.at("kind").get<std::string>());
        model.input_width = doc.at("input_width").get<std::size_t>();
        model.class_count = doc.at("class_count").get<std::size_t>();
        model.class_names = doc.at("class_names").get<std::vector<std::string>>();
        model.train_seed = doc.at("train_seed").get<std::uint64_t>();
        model.hyper = hyper_from_json(doc.at("hyper"));
        const json& params = doc.at("params");
        if (model.kind == MetaKind::logistic || model.kind == MetaKind::linear_svm) {
            LinearParams linear;
            linear.w = matrix_from_json(params.at("w"));
            linear.b = params.at("b").get<std::vector<double>>();
            model.params = std::move(linear);
        } else if (model.kind == MetaKind::mlp) {
            MlpParams mlp;
            mlp.w1 = matrix_from_json(params.at("w1"));
            mlp.b1 = params.at("b1").get<std::vector<double>>();
            mlp.w2 = matrix_from_json(params.at("w2"));
            mlp.b2 = params.at("b2").get<std::vector<double>>();
            model.params = std::move(mlp);
        } else {
            ForestParams forest;
            for (const json& jt : params.at("trees")) {
                Tree tree;
                for (const json& jn : jt.at("nodes")) {
                    TreeNode node;
                    if (jn.contains("leaf")) {
                        node.leaf = jn.at("leaf").get<std::vector<double>>();
                    } else {
                        node.feature = jn.at("feature").get<int>();
                        node.threshold = jn.at("threshold").get<double>();
                        node.left = jn.at("left").get<int>();
                        node.right = jn.at("right").get<int>();
                    }
                    tree.nodes.push_back(std::move(node));
                }
                forest.trees.push_back(std::move(tree));
            }
            model.params = std::move(forest);
        }
        return model;
    } catch (const json::exception& e) {
        throw MalformedFile(std::string("invalid meta-model JSON: ") + e.what());
    }
}

void save_meta_model(const std::filesystem::path& path, const MetaModel& model) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot open " + path.string() + " for writing");
    out << meta_model_to_json(model) << '\n';
}

MetaModel load_meta_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MalformedFile("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return meta_model_from_json(buffer.str());
}

}  // namespace ecofuse::stacking
