#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecofuse/dataset.hpp"

namespace ecofuse::metrics {

// Rows index the true class, columns the predicted class.
struct ConfusionMatrix {
    std::vector<std::string> class_names;
    std::vector<std::int64_t> counts;  // C x C, row-major

    std::size_t c() const { return class_names.size(); }
    std::int64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * c() + pred]; }
    std::int64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * c() + pred]; }
    std::int64_t total() const;
};

struct PerClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // Set when a 0/0 ratio was forced to 0 for this class.
    bool undefined = false;
};

struct MetricsReport {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    // Support-weighted variants, reported alongside the macro default.
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
    double weighted_f1 = 0.0;
    std::vector<PerClassMetrics> per_class;
    bool any_undefined = false;
};

struct ConfidenceHistogram {
    std::size_t bin_count = 0;
    std::vector<double> bin_edges;        // bin_count + 1 values from 0 to 1
    std::vector<std::int64_t> counts;     // bins are [i/B,(i+1)/B), last closed at 1
};

ConfusionMatrix confusion_matrix(const data::LabelVector& pred,
                                 const data::LabelVector& truth,
                                 const std::vector<std::string>& class_names);

MetricsReport classification_metrics(const ConfusionMatrix& cm);

// Confidence of a row is its maximum probability.
ConfidenceHistogram confidence_histogram(const data::ProbabilityMatrix& probs,
                                         std::size_t bin_count);

// Plain-text table with Accuracy / F1-Score / Precision / Recall columns as
// percentages with two decimals, one row per labelled report.
std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

std::string metrics_to_json(const MetricsReport& report);

}  // namespace ecofuse::metrics
