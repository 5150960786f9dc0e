#include "ecofuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "ecofuse/errors.hpp"

namespace ecofuse::metrics {

std::int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

ConfusionMatrix confusion_matrix(const data::LabelVector& pred,
                                 const data::LabelVector& truth,
                                 const std::vector<std::string>& class_names) {
    if (pred.sample_ids != truth.sample_ids)
        throw SampleSetMismatch("confusion_matrix: prediction and truth sample ids differ");
    const std::size_t c = class_names.size();
    ConfusionMatrix cm{class_names, std::vector<std::int64_t>(c * c, 0)};
    for (std::size_t i = 0; i < truth.n(); ++i) {
        int t = truth.labels[i];
        int p = pred.labels[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= c ||
            static_cast<std::size_t>(p) >= c)
            throw ShapeMismatch("confusion_matrix: label out of range for " +
                                std::to_string(c) + " classes");
        ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
    return cm;
}

MetricsReport classification_metrics(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total == 0) throw EmptyMatrix("classification_metrics: confusion matrix is empty");
    const std::size_t c = cm.c();

    MetricsReport report;
    std::int64_t trace = 0;
    for (std::size_t i = 0; i < c; ++i) trace += cm.at(i, i);
    report.accuracy = static_cast<double>(trace) / static_cast<double>(total);

    report.per_class.resize(c);
    for (std::size_t i = 0; i < c; ++i) {
        std::int64_t col_sum = 0, row_sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            col_sum += cm.at(j, i);
            row_sum += cm.at(i, j);
        }
        auto& pc = report.per_class[i];
        const double tp = static_cast<double>(cm.at(i, i));
        if (col_sum == 0) {
            pc.precision = 0.0;
            pc.undefined = true;
        } else {
            pc.precision = tp / static_cast<double>(col_sum);
        }
        if (row_sum == 0) {
            pc.recall = 0.0;
            pc.undefined = true;
        } else {
            pc.recall = tp / static_cast<double>(row_sum);
        }
        if (pc.precision + pc.recall == 0.0) {
            pc.f1 = 0.0;
            pc.undefined = true;
        } else {
            pc.f1 = 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall);
        }
        report.any_undefined = report.any_undefined || pc.undefined;

        report.macro_precision += pc.precision;
        report.macro_recall += pc.recall;
        report.macro_f1 += pc.f1;
        const double support = static_cast<double>(row_sum) / static_cast<double>(total);
        report.weighted_precision += support * pc.precision;
        report.weighted_recall += support * pc.recall;
        report.weighted_f1 += support * pc.f1;
    }
    report.macro_precision /= static_cast<double>(c);
    report.macro_recall /= static_cast<double>(c);
    report.macro_f1 /= static_cast<double>(c);
    return report;
}

ConfidenceHistogram confidence_histogram(const data::ProbabilityMatrix& probs,
                                         std::size_t bin_count) {
    if (bin_count < 1)
        throw ValidationError("confidence_histogram: bin_count must be >= 1");
    ConfidenceHistogram hist;
    hist.bin_count = bin_count;
    hist.bin_edges.resize(bin_count + 1);
    for (std::size_t i = 0; i <= bin_count; ++i)
        hist.bin_edges[i] = static_cast<double>(i) / static_cast<double>(bin_count);
    hist.counts.assign(bin_count, 0);
    for (std::size_t i = 0; i < probs.n(); ++i) {
        auto row = probs.rows.row(i);
        double conf = *std::max_element(row.begin(), row.end());
        auto bin = static_cast<std::size_t>(conf * static_cast<double>(bin_count));
        if (bin >= bin_count) bin = bin_count - 1;  // confidence 1.0 closes the last bin
        ++hist.counts[bin];
    }
    return hist;
}

std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
        return std::string(buf);
    };
    std::size_t label_w = std::string("Model").size();
    for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size());

    std::string out;
    auto append_row = [&](const std::string& label, const std::string& a,
                          const std::string& f, const std::string& p,
                          const std::string& r) {
        out += label;
        out.append(label_w - label.size() + 2, ' ');
        for (const std::string* col : {&a, &f, &p, &r}) {
            out += *col;
            out.append(col->size() < 14 ? 14 - col->size() : 1, ' ');
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += '\n';
    };
    append_row("Model", "Accuracy (%)", "F1-Score (%)", "Precision (%)", "Recall (%)");
    for (const auto& [label, m] : rows)
        append_row(label, pct(m.accuracy), pct(m.macro_f1), pct(m.macro_precision),
                   pct(m.macro_recall));
    return out;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& pc : report.per_class)
        per_class.push_back({{"precision", pc.precision},
                             {"recall", pc.recall},
                             {"f1", pc.f1},
                             {"undefined", pc.undefined}});
    nlohmann::json doc{{"accuracy", report.accuracy},
                       {"macro_precision", report.macro_precision},
                       {"macro_recall", report.macro_recall},
                       {"macro_f1", report.macro_f1},
                       {"weighted_precision", report.weighted_precision},
                       {"weighted_recall", report.weighted_recall},
                       {"weighted_f1", report.weighted_f1},
                       {"per_class", per_class},
                       {"any_undefined", report.any_undefined}};
    return doc.dump(2);
}

}  // namespace ecofuse::metrics
