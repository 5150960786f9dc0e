#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ecofuse/matrix.hpp"

namespace ecofuse::data {

// Per-model class-probability matrix. Each row is one sample's distribution
// over the classes; rows are kept row-stochastic (sum 1 within 1e-6).
struct ProbabilityMatrix {
    std::string model_id;
    std::vector<std::string> sample_ids;   // length N
    std::vector<std::string> class_names;  // length C
    Matrix rows;                           // N x C

    std::size_t n() const { return rows.rows; }
    std::size_t c() const { return rows.cols; }

    // Enforces the type invariants: N >= 1, C >= 2, entries in [0,1],
    // rows summing to 1 within 1e-6, id/name lengths matching the matrix.
    void validate() const;
};

struct LabelVector {
    std::vector<std::string> sample_ids;
    std::vector<int> labels;  // class indices

    std::size_t n() const { return labels.size(); }
};

// k probability matrices plus ground truth, all sharing one sample order
// and one class list. Immutable once built; safe to share across threads.
struct AlignedBundle {
    std::vector<ProbabilityMatrix> models;
    LabelVector labels;

    std::size_t k() const { return models.size(); }
    std::size_t n() const { return labels.n(); }
    std::size_t c() const { return models.empty() ? 0 : models.front().c(); }
    const std::vector<std::string>& class_names() const { return models.front().class_names; }
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::uint64_t seed = 0;
};

enum class ProbFormat { csv, json };

// Builds a validated matrix from raw rows. Rows whose sum deviates from 1 by
// at most renorm_tol are renormalized; larger deviations throw RowSumViolation.
ProbabilityMatrix make_probability_matrix(std::string model_id,
                                          std::vector<std::string> sample_ids,
                                          std::vector<std::string> class_names,
                                          Matrix rows,
                                          double renorm_tol = 1e-3);

// CSV schema: header "sample_id,<class_0>,...,<class_{C-1}>", one row per
// sample. JSON schema: {"model_id":..., "class_names":[...],
// "samples":[{"id":..., "probs":[...]}]}. For CSV the model_id is the
// filename stem.
ProbabilityMatrix load_probability_matrix(const std::filesystem::path& path, ProbFormat format);

// Infers the format from the extension (.json -> json, anything else csv).
ProbabilityMatrix load_probability_matrix(const std::filesystem::path& path);

// One class name per line; blank lines ignored.
std::vector<std::string> load_class_list(const std::filesystem::path& path);

// CSV schema: header "sample_id,label". Labels are resolved against
// class_names first; tokens not in the list may be plain class indices.
// With an empty class list only integer labels are accepted.
LabelVector load_labels(const std::filesystem::path& path,
                        const std::vector<std::string>& class_names = {});

// Reorders every matrix into the labels' sample order and checks that all
// models share one class list and one sample set.
AlignedBundle align(std::vector<ProbabilityMatrix> models, LabelVector labels);

// Deterministic stratified split. Per-class test counts are
// round-half-up(count_c * test_fraction); a global off-by-one against
// round-half-up(N * test_fraction) is settled by nudging the largest classes
// whose rounding direction opposes the correction.
SplitIndices stratified_split(const LabelVector& labels, double test_fraction,
                              std::uint64_t seed);

// Bundle restricted to the given rows, in the given order.
AlignedBundle take(const AlignedBundle& bundle, std::span<const std::size_t> indices);

void save_split(const std::filesystem::path& path, const SplitIndices& split);
SplitIndices load_split(const std::filesystem::path& path);

}  // namespace ecofuse::data
