#include "ecofuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "ecofuse/errors.hpp"
#include "ecofuse/rng.hpp"

namespace ecofuse::fusion {

void EnsembleWeights::validate() const {
    if (weights.empty()) throw ValidationError("EnsembleWeights: empty");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ValidationError("EnsembleWeights: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("EnsembleWeights: weights sum to " + std::to_string(sum));
}

EnsembleWeights EnsembleWeights::uniform(std::size_t k) {
    return EnsembleWeights{std::vector<double>(k, 1.0 / static_cast<double>(k))};
}

void OptimizerConfig::validate() const {
    if (!(grid_step > 0.0 && grid_step <= 0.5))
        throw ValidationError("OptimizerConfig: grid_step must be in (0, 0.5]");
    if (restarts < 1) throw ValidationError("OptimizerConfig: restarts must be >= 1");
    if (max_iterations < 1)
        throw ValidationError("OptimizerConfig: max_iterations must be >= 1");
}

data::ProbabilityMatrix average_probabilities(const data::AlignedBundle& bundle,
                                              const std::optional<EnsembleWeights>& weights) {
    if (bundle.k() == 0) throw ShapeMismatch("average_probabilities: empty bundle");
    const std::size_t k = bundle.k(), n = bundle.n(), c = bundle.c();
    std::vector<double> w;
    if (weights) {
        if (weights->k() != k)
            throw WeightLengthMismatch("average_probabilities: " + std::to_string(weights->k()) +
                                       " weights for " + std::to_string(k) + " models");
        w = weights->weights;
    } else {
        w.assign(k, 1.0 / static_cast<double>(k));
    }

    data::ProbabilityMatrix out;
    out.sample_ids = bundle.models.front().sample_ids;
    out.class_names = bundle.class_names();
    out.rows = Matrix(n, c);
    std::string id;
    for (const auto& m : bundle.models) {
        if (!id.empty()) id += '+';
        id += m.model_id;
    }
    out.model_id = std::move(id);

    for (std::size_t i = 0; i < n; ++i) {
        auto dst = out.rows.row(i);
        for (std::size_t m = 0; m < k; ++m) {
            auto src = bundle.models[m].rows.row(i);
            for (std::size_t j = 0; j < c; ++j) dst[j] += w[m] * src[j];
        }
    }
    return out;
}

data::LabelVector predict_argmax(const data::ProbabilityMatrix& probs) {
    data::LabelVector out;
    out.sample_ids = probs.sample_ids;
    out.labels.reserve(probs.n());
    for (std::size_t i = 0; i < probs.n(); ++i)
        out.labels.push_back(static_cast<int>(argmax(probs.rows.row(i))));
    return out;
}

double accuracy(const data::LabelVector& pred, const data::LabelVector& truth) {
    if (pred.n() != truth.n() || pred.n() == 0)
        throw ShapeMismatch("accuracy: label vectors of unequal or zero length");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.n(); ++i)
        if (pred.labels[i] == truth.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.n());
}

std::vector<double> project_to_simplex(std::vector<double> v) {
    // Identity on feasible points, so grid candidates pass through bit-exact.
    double sum = 0.0;
    bool nonneg = true;
    for (double x : v) {
        if (x < 0.0) nonneg = false;
        sum += x;
    }
    if (nonneg && std::abs(sum - 1.0) <= 1e-12) return v;

    // Held, Wolfe & Crowder: sort, find the threshold, clip.
    std::vector<double> u = v;
    std::sort(u.begin(), u.end(), std::greater<>());
    double css = 0.0, theta = 0.0;
    std::size_t rho = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        css += u[i];
        double t = (css - 1.0) / static_cast<double>(i + 1);
        if (u[i] - t > 0.0) {
            rho = i + 1;
            theta = t;
        }
    }
    (void)rho;
    for (auto& x : v) x = std::max(0.0, x - theta);
    // Clean residual drift so the sum lands within validation tolerance.
    double s = std::accumulate(v.begin(), v.end(), 0.0);
    if (s > 0.0)
        for (auto& x : v) x /= s;
    return v;
}

namespace {

// Accuracy of argmax(sum_m w_m P_m) against the bundle labels. Accumulation
// order matches average_probabilities so both routes agree bit-for-bit.
double accuracy_at(const data::AlignedBundle& bundle, const std::vector<double>& w,
                   std::vector<double>& scratch) {
    const std::size_t k = bundle.k(), n = bundle.n(), c = bundle.c();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        scratch.assign(c, 0.0);
        for (std::size_t m = 0; m < k; ++m) {
            auto src = bundle.models[m].rows.row(i);
            for (std::size_t j = 0; j < c; ++j) scratch[j] += w[m] * src[j];
        }
        if (static_cast<int>(argmax(scratch)) == bundle.labels.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

double dist2_to_uniform(const std::vector<double>& w) {
    const double u = 1.0 / static_cast<double>(w.size());
    double d = 0.0;
    for (double x : w) d += (x - u) * (x - u);
    return d;
}

struct Best {
    double acc = -1.0;
    double dist2 = 0.0;
    std::vector<double> w;

    void consider(double a, std::vector<double> cand) {
        double d = dist2_to_uniform(cand);
        if (a > acc || (a == acc && (d < dist2 || (d == dist2 && cand < w)))) {
            acc = a;
            dist2 = d;
            w = std::move(cand);
        }
    }
};

void scan_grid(const data::AlignedBundle& bundle, long m, Best& best,
               std::vector<double>& scratch) {
    const std::size_t k = bundle.k();
    const double md = static_cast<double>(m);
    if (k == 2) {
        for (long i = 0; i <= m; ++i) {
            std::vector<double> w{static_cast<double>(i) / md,
                                  static_cast<double>(m - i) / md};
            const double a = accuracy_at(bundle, w, scratch);
            best.consider(a, std::move(w));
        }
    } else {
        for (long i = 0; i <= m; ++i) {
            for (long j = 0; j + i <= m; ++j) {
                std::vector<double> w{static_cast<double>(i) / md,
                                      static_cast<double>(j) / md,
                                      static_cast<double>(m - i - j) / md};
                const double a = accuracy_at(bundle, w, scratch);
                best.consider(a, std::move(w));
            }
        }
    }
}

// Compass search over the simplex: probe +/- delta along each coordinate,
// re-project, move on strict improvement, shrink delta otherwise.
void compass_search(const data::AlignedBundle& bundle, std::vector<double> start,
                    double min_step, int max_iterations, Best& best,
                    std::vector<double>& scratch) {
    const std::size_t k = bundle.k();
    std::vector<double> current = project_to_simplex(std::move(start));
    double current_acc = accuracy_at(bundle, current, scratch);
    best.consider(current_acc, current);

    double delta = 0.25;
    int moves = 0;
    while (delta >= min_step && moves < max_iterations) {
        bool improved = false;
        for (std::size_t j = 0; j < k && moves < max_iterations; ++j) {
            for (double sign : {+1.0, -1.0}) {
                std::vector<double> cand = current;
                cand[j] += sign * delta;
                cand = project_to_simplex(std::move(cand));
                double a = accuracy_at(bundle, cand, scratch);
                ++moves;
                best.consider(a, cand);
                if (a > current_acc) {
                    current = std::move(cand);
                    current_acc = a;
                    improved = true;
                    break;
                }
            }
        }
        if (!improved) delta *= 0.5;
    }
}

}  // namespace

OptimizeResult optimize_weights(const data::AlignedBundle& bundle,
                                const OptimizerConfig& config) {
    config.validate();
    const std::size_t k = bundle.k();
    if (k < 2) throw TooFewModels("optimize_weights: need at least 2 models");
    if (bundle.n() == 0) throw ShapeMismatch("optimize_weights: empty bundle");

    std::vector<double> scratch;
    Best best;
    // Uniform is always a candidate, so the result can never fall below it.
    best.consider(accuracy_at(bundle, EnsembleWeights::uniform(k).weights, scratch),
                  EnsembleWeights::uniform(k).weights);

    if (k <= 3) {
        long m = std::max<long>(2, std::lround(1.0 / config.grid_step));
        scan_grid(bundle, m, best, scratch);
    } else {
        std::mt19937_64 gen(config.seed);
        compass_search(bundle, EnsembleWeights::uniform(k).weights, config.grid_step / 2.0,
                       config.max_iterations, best, scratch);
        for (int r = 1; r < config.restarts; ++r)
            compass_search(bundle, rng::simplex_point(gen, k), config.grid_step / 2.0,
                           config.max_iterations, best, scratch);
    }

    EnsembleWeights weights{project_to_simplex(std::move(best.w))};
    weights.validate();
    // Reported accuracy is measured at the returned weights via the public path.
    double acc = accuracy(predict_argmax(average_probabilities(bundle, weights)),
                          bundle.labels);
    return OptimizeResult{std::move(weights), acc};
}

std::string weights_to_json(const EnsembleWeights& weights,
                            const std::vector<std::string>& model_ids,
                            double achieved_accuracy, ObjectiveSplit split) {
    nlohmann::json doc{
        {"model_ids", model_ids},
        {"weights", weights.weights},
        {"achieved_accuracy", achieved_accuracy},
        {"objective_split",
         split == ObjectiveSplit::validation ? "validation" : "test-paper-faithful"}};
    return doc.dump(2);
}

}  // namespace ecofuse::fusion
