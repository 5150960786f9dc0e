#pragma once

// Independent reference implementations used to check the library from the
// outside. Everything here is written against first principles, not against
// the code under test, so agreement is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ecofuse/dataset.hpp"

namespace oracle {

// Exhaustive sweep of two-model weights w_A = i/steps. The per-class
// accumulation below (zero, add model 0, add model 1) mirrors the natural
// left-to-right weighted sum so exact double agreement is meaningful.
struct SweepResult {
    double best_accuracy = -1.0;
    std::vector<double> optimal_was;  // every w_A attaining best_accuracy
};

inline SweepResult sweep_two_model_weights(const ecofuse::data::AlignedBundle& bundle,
                                           long steps = 1000) {
    SweepResult out;
    const std::size_t n = bundle.n(), c = bundle.c();
    std::vector<double> acc(c);
    for (long i = 0; i <= steps; ++i) {
        const double wa = static_cast<double>(i) / static_cast<double>(steps);
        const double wb = static_cast<double>(steps - i) / static_cast<double>(steps);
        std::size_t hits = 0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto ra = bundle.models[0].rows.row(s);
            const auto rb = bundle.models[1].rows.row(s);
            for (std::size_t j = 0; j < c; ++j) acc[j] = 0.0;
            for (std::size_t j = 0; j < c; ++j) acc[j] += wa * ra[j];
            for (std::size_t j = 0; j < c; ++j) acc[j] += wb * rb[j];
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (acc[j] > acc[best]) best = j;
            if (static_cast<int>(best) == bundle.labels.labels[s]) ++hits;
        }
        const double a = static_cast<double>(hits) / static_cast<double>(n);
        if (a > out.best_accuracy) {
            out.best_accuracy = a;
            out.optimal_was.assign(1, wa);
        } else if (a == out.best_accuracy) {
            out.optimal_was.push_back(wa);
        }
    }
    return out;
}

// Straightforward weighted average, one full expression per cell.
inline std::vector<std::vector<double>> weighted_average(
    const ecofuse::data::AlignedBundle& bundle, const std::vector<double>& w) {
    const std::size_t n = bundle.n(), c = bundle.c(), k = bundle.k();
    std::vector<std::vector<double>> out(n, std::vector<double>(c, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            double v = 0.0;
            for (std::size_t m = 0; m < k; ++m) v += w[m] * bundle.models[m].rows(i, j);
            out[i][j] = v;
        }
    return out;
}

inline std::vector<int> argmax_labels(const std::vector<std::vector<double>>& rows) {
    std::vector<int> labels;
    for (const auto& r : rows) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < r.size(); ++j)
            if (r[j] > r[best]) best = j;
        labels.push_back(static_cast<int>(best));
    }
    return labels;
}

// Multiclass perceptron run to a clean pass. Returns true iff the data admit
// a linear separator (certificate of separability for the feature matrix).
inline bool perceptron_separates(const std::vector<std::vector<double>>& x,
                                 const std::vector<int>& y, std::size_t classes,
                                 int max_epochs = 2000) {
    const std::size_t n = x.size(), d = x.front().size();
    std::vector<std::vector<double>> w(classes, std::vector<double>(d + 1, 0.0));
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        bool clean = true;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_s = -1e300;
            for (std::size_t cidx = 0; cidx < classes; ++cidx) {
                double s = w[cidx][d];
                for (std::size_t j = 0; j < d; ++j) s += w[cidx][j] * x[i][j];
                if (s > best_s) {
                    best_s = s;
                    best = cidx;
                }
            }
            const std::size_t truth = static_cast<std::size_t>(y[i]);
            if (best != truth) {
                clean = false;
                for (std::size_t j = 0; j < d; ++j) {
                    w[truth][j] += x[i][j];
                    w[best][j] -= x[i][j];
                }
                w[truth][d] += 1.0;
                w[best][d] -= 1.0;
            }
        }
        if (clean) return true;
    }
    return false;
}

// Best accuracy any single linear threshold (any orientation, either sign)
// can reach on 2-D points with binary labels. Dense angle scan plus all
// inter-point offsets; exact for finite point sets up to angular resolution.
inline double max_linear_accuracy_2d(const std::vector<std::pair<double, double>>& pts,
                                     const std::vector<int>& y, int angle_steps = 1440) {
    const std::size_t n = pts.size();
    double best = 0.0;
    std::vector<double> proj(n);
    for (int a = 0; a < angle_steps; ++a) {
        const double theta = M_PI * static_cast<double>(a) / static_cast<double>(angle_steps);
        const double cx = std::cos(theta), cy = std::sin(theta);
        for (std::size_t i = 0; i < n; ++i) proj[i] = cx * pts[i].first + cy * pts[i].second;
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t l, std::size_t r) { return proj[l] < proj[r]; });
        // prefix[p] = count of label-1 among the first p points in projection order
        std::vector<std::size_t> prefix(n + 1, 0);
        for (std::size_t p = 0; p < n; ++p)
            prefix[p + 1] = prefix[p] + static_cast<std::size_t>(y[order[p]] == 1);
        const std::size_t ones = prefix[n];
        for (std::size_t cut = 0; cut <= n; ++cut) {
            // left side predicted 0, right side predicted 1, then the flip
            const std::size_t correct_a = (cut - prefix[cut]) + (ones - prefix[cut]);
            const std::size_t correct_b = n - correct_a;
            best = std::max({best, static_cast<double>(correct_a) / static_cast<double>(n),
                             static_cast<double>(correct_b) / static_cast<double>(n)});
        }
    }
    return best;
}

}  // namespace oracle
