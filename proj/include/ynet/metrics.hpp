#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "tensor.hpp"

namespace ynet {

inline constexpr double kMaskThreshold = 0.5;

/// Jaccard index of two binary masks (nonzero = foreground); 1 when both are empty.
template <typename T>
double iou(const Tensor<T>& pred, const Tensor<T>& truth) {
    require_shape(pred.size() == truth.size(), "iou: mask shapes", pred.shape(), truth.shape());
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] != T{0}, b = truth[i] != T{0};
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T>
Tensor<T> binarize(const Tensor<T>& probs, double threshold = kMaskThreshold) {
    Tensor<T> out = probs;
    for (auto& v : out) v = v >= threshold ? T{1} : T{0};
    return out;
}

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

/// rows = cluster label, cols = true label.
inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& clusters, const std::vector<std::size_t>& truth,
                                        std::size_t k) {
    if (clusters.size() != truth.size()) throw ShapeError("confusion_matrix: label counts differ");
    ConfusionMatrix m(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (clusters[i] >= k || truth[i] >= k) throw ValidationError("confusion_matrix: label out of range");
        ++m[clusters[i]][truth[i]];
    }
    return m;
}

struct ClusterMatch {
    std::vector<std::size_t> mapping;  // cluster label -> true label
    std::size_t matched = 0;           // trace under the mapping
    double accuracy = 0.0;
};

/// Exhaustive search over label permutations for the maximum-trace mapping;
/// the lexicographically first permutation wins ties.
inline ClusterMatch match_clusters(const ConfusionMatrix& m) {
    const std::size_t k = m.size();
    std::size_t total = 0;
    for (const auto& row : m) total = std::accumulate(row.begin(), row.end(), total);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    ClusterMatch best{perm, 0, 0.0};
    bool first = true;
    do {
        std::size_t tr = 0;
        for (std::size_t c = 0; c < k; ++c) tr += m[c][perm[c]];
        if (first || tr > best.matched) {
            best.mapping = perm;
            best.matched = tr;
            first = false;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    best.accuracy = total == 0 ? 0.0 : static_cast<double>(best.matched) / static_cast<double>(total);
    return best;
}

/// Accuracy under the identity mapping.
inline double unmatched_accuracy(const ConfusionMatrix& m) {
    std::size_t total = 0, diag = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        diag += m[i][i];
        total = std::accumulate(m[i].begin(), m[i].end(), total);
    }
    return total == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(total);
}

}  // namespace ynet
