#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecofuse/dataset.hpp"

namespace ecofuse::fusion {

// Non-negative model weights summing to 1 (within 1e-9).
struct EnsembleWeights {
    std::vector<double> weights;

    std::size_t k() const { return weights.size(); }
    void validate() const;

    static EnsembleWeights uniform(std::size_t k);
};

enum class ObjectiveSplit { validation, test_paper_faithful };

struct OptimizerConfig {
    double grid_step = 0.01;      // simplex grid resolution for k <= 3
    int restarts = 32;            // direct-search restarts for k > 3
    int max_iterations = 500;     // per-restart move budget
    ObjectiveSplit objective_split = ObjectiveSplit::validation;
    std::uint64_t seed = 0;       // drives the k > 3 restart points

    void validate() const;
};

struct OptimizeResult {
    EnsembleWeights weights;
    double achieved_accuracy = 0.0;
};

// Convex combination of the bundle's probability rows. Absent weights mean
// the uniform 1/k average.
data::ProbabilityMatrix average_probabilities(
    const data::AlignedBundle& bundle,
    const std::optional<EnsembleWeights>& weights = std::nullopt);

// Per-row argmax labels; the lowest class index wins ties.
data::LabelVector predict_argmax(const data::ProbabilityMatrix& probs);

double accuracy(const data::LabelVector& pred, const data::LabelVector& truth);

// Maximizes ensemble accuracy on the bundle over the weight simplex.
// k <= 3 scans the full grid of step grid_step (uniform always included as a
// candidate); among equally accurate candidates the one closest to uniform
// (L2) wins. k > 3 runs multi-start compass search with Euclidean projection
// back onto the simplex.
OptimizeResult optimize_weights(const data::AlignedBundle& bundle,
                                const OptimizerConfig& config);

// Euclidean projection onto the probability simplex.
std::vector<double> project_to_simplex(std::vector<double> v);

std::string weights_to_json(const EnsembleWeights& weights,
                            const std::vector<std::string>& model_ids,
                            double achieved_accuracy, ObjectiveSplit split);

}  // namespace ecofuse::fusion
