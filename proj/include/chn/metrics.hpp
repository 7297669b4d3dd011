#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace chn {

// RMSE in de-normalized units.
inline double rmse(std::span<const double> predictions, std::span<const double> truths,
                   const std::function<double(double)>& denormalize = [](double v) { return v; }) {
    if (predictions.empty() || predictions.size() != truths.size())
        throw std::invalid_argument("rmse: need equal non-empty inputs");
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = denormalize(predictions[i]) - denormalize(truths[i]);
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(predictions.size()));
}

// Mann-Whitney AUROC: probability a random positive outscores a random
// negative, ties counted half. Computed from exact integer pair counts so it
// equals brute-force pair counting bit-for-bit. Single-class inputs are an
// undefined metric (nullopt); callers skip such features in aggregation.
inline std::optional<double> auroc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auroc: length mismatch");
    unsigned long long pos = 0, neg = 0;
    for (double l : labels) {
        if (l == 1.0) ++pos;
        else if (l == 0.0) ++neg;
        else throw std::invalid_argument("auroc: labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0) return std::nullopt;

    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    unsigned long long wins2 = 0;  // 2*wins + ties
    unsigned long long neg_below = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        unsigned long long p = 0, n = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            if (labels[idx[j]] == 1.0) ++p;
            else ++n;
            ++j;
        }
        wins2 += 2ull * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    return static_cast<double>(wins2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace chn
