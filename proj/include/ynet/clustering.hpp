#pragma once

// K-means over embeddings plus the Student-t soft assignment, sharpened
// target distribution and KL objective used for clustering fine-tuning.
// Matrices are rank-2 Tensors [rows, cols]; internal arithmetic is double.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tensor.hpp"

namespace ynet {

struct KMeansOptions {
    std::size_t max_iter = 300;
    double tol = 1e-6;
    std::size_t n_init = 10;  // independent k-means++ starts; lowest inertia wins
};

template <typename T>
struct KMeansResult {
    Tensor<T> centroids;                 // [k, d]
    std::vector<std::size_t> assignments;
    double inertia = 0.0;
    std::size_t iterations = 0;
    std::vector<double> inertia_history;  // after each assignment step
    std::size_t reseeded_clusters = 0;
};

namespace detail {

template <typename T>
void require_matrix(const Tensor<T>& m, const char* what) {
    if (m.rank() != 2) throw ShapeError(std::string(what) + " must be a matrix, got " + to_string(m.shape()));
}

inline double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

// Index of the nearest centroid (lowest index on ties) and its squared distance.
inline std::pair<std::size_t, double> nearest(const double* p, const std::vector<double>& centroids, std::size_t k,
                                              std::size_t d) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
        const double dj = sq_dist(p, centroids.data() + j * d, d);
        if (dj < best_d) {
            best_d = dj;
            best = j;
        }
    }
    return {best, best_d};
}

}  // namespace detail

namespace detail {

// One Lloyd run from a k-means++ seeding drawn from `rng`.
template <typename T>
KMeansResult<T> lloyd_run(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t k, Rng& rng,
                          const KMeansOptions& opts) {

    std::vector<double> mu(k * d);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    auto set_center = [&](std::size_t j, std::size_t i) {
        std::copy_n(x.data() + i * d, d, mu.data() + j * d);
    };
    set_center(0, rng.index(n));
    for (std::size_t j = 1; j < k; ++j) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], detail::sq_dist(x.data() + i * d, mu.data() + (j - 1) * d, d));
            total += d2[i];
        }
        std::size_t pick = n - 1;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.index(n);
        }
        set_center(j, pick);
    }

    KMeansResult<T> result;
    std::vector<std::size_t> labels(n);
    std::vector<double> dist(n);
    auto assign = [&] {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            auto [j, dj] = detail::nearest(x.data() + i * d, mu, k, d);
            labels[i] = j;
            dist[i] = dj;
            inertia += dj;
        }
        return inertia;
    };

    double inertia = assign();
    result.inertia_history.push_back(inertia);
    std::size_t iter = 0;
    while (iter < opts.max_iter) {
        ++iter;
        std::vector<double> sums(k * d, 0.0);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[labels[i]];
            for (std::size_t t = 0; t < d; ++t) sums[labels[i] * d + t] += x[i * d + t];
        }
        double shift = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<double> next(d);
            if (counts[j] == 0) {
                std::size_t far = 0;
                for (std::size_t i = 1; i < n; ++i) {
                    if (dist[i] > dist[far]) far = i;
                }
                std::copy_n(x.data() + far * d, d, next.data());
                dist[far] = 0.0;
                ++result.reseeded_clusters;
            } else {
                for (std::size_t t = 0; t < d; ++t) next[t] = sums[j * d + t] / static_cast<double>(counts[j]);
            }
            shift = std::max(shift, std::sqrt(detail::sq_dist(next.data(), mu.data() + j * d, d)));
            std::copy(next.begin(), next.end(), mu.begin() + static_cast<std::ptrdiff_t>(j * d));
        }
        inertia = assign();
        result.inertia_history.push_back(inertia);
        if (shift < opts.tol) break;
    }

    result.centroids = Tensor<T>({k, d}, std::vector<T>(mu.begin(), mu.end()));
    result.assignments = labels;
    result.inertia = inertia;
    result.iterations = iter;
    return result;
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeding, best of `n_init` seeded starts.
/// Empty clusters are re-seeded to the point farthest from its centroid.
template <typename T>
KMeansResult<T> kmeans_fit(const Tensor<T>& points, std::size_t k, std::uint64_t seed, KMeansOptions opts = {}) {
    detail::require_matrix(points, "kmeans points");
    const std::size_t n = points.dim(0), d = points.dim(1);
    if (k < 1 || n < k) {
        throw ValidationError("kmeans_fit needs at least k points: n = " + std::to_string(n) + ", k = " + std::to_string(k));
    }
    if (!points.all_finite()) throw ValidationError("kmeans_fit: points contain non-finite values");
    const std::vector<double> x(points.begin(), points.end());
    const Rng root = Rng(seed).split(0x6b6d);
    KMeansResult<T> best;
    for (std::size_t run = 0; run < std::max<std::size_t>(1, opts.n_init); ++run) {
        Rng rng = root.split(run);
        auto r = detail::lloyd_run<T>(x, n, d, k, rng, opts);
        if (run == 0 || r.inertia < best.inertia) best = std::move(r);
    }
    return best;
}

/// Sum of squared distances from each point to the given centroid row.
template <typename T>
double inertia_of(const Tensor<T>& points, const Tensor<T>& centroids, const std::vector<std::size_t>& labels) {
    const std::size_t d = points.dim(1);
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t t = 0; t < d; ++t) {
            const double diff = static_cast<double>(points[i * d + t]) - static_cast<double>(centroids[labels[i] * d + t]);
            s += diff * diff;
        }
    }
    return s;
}

/// Student-t kernel q_ij proportional to (1 + |z_i - mu_j|^2 / alpha)^(-(alpha + 1) / 2), rows normalized.
template <typename T>
Tensor<T> soft_assign(const Tensor<T>& z, const Tensor<T>& centroids, double alpha = 1.0) {
    detail::require_matrix(z, "embeddings");
    detail::require_matrix(centroids, "centroids");
    require_shape(z.dim(1) == centroids.dim(1), "soft_assign: embedding and centroid dims", z.shape(), centroids.shape());
    if (!(alpha > 0.0)) throw ValidationError("soft_assign: alpha must be positive");
    const std::size_t n = z.dim(0), k = centroids.dim(0), d = z.dim(1);
    const double power = -(alpha + 1.0) / 2.0;
    Tensor<T> q({n, k});
    std::vector<double> row(k);
    for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = static_cast<double>(z[i * d + t]) - static_cast<double>(centroids[j * d + t]);
                s += diff * diff;
            }
            row[j] = alpha == 1.0 ? 1.0 / (1.0 + s) : std::pow(1.0 + s / alpha, power);
            total += row[j];
        }
        for (std::size_t j = 0; j < k; ++j) q[i * k + j] = static_cast<T>(row[j] / total);
    }
    return q;
}

/// p_ij proportional to q_ij^2 / f_j with cluster frequencies f_j = sum_i q_ij.
template <typename T>
Tensor<T> target_distribution(const Tensor<T>& q) {
    detail::require_matrix(q, "soft assignment");
    const std::size_t n = q.dim(0), k = q.dim(1);
    std::vector<double> f(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) f[j] += q[i * k + j];
    }
    Tensor<T> p({n, k});
    std::vector<double> row(k);
    for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double qij = q[i * k + j];
            row[j] = f[j] > 0.0 ? qij * qij / f[j] : 0.0;
            total += row[j];
        }
        for (std::size_t j = 0; j < k; ++j) p[i * k + j] = static_cast<T>(total > 0.0 ? row[j] / total : 1.0 / k);
    }
    return p;
}

inline constexpr double kKlFloor = 1e-12;

struct KlDivergence {
    double value = 0.0;
    std::size_t floored_entries = 0;  // q entries raised to the floor where p > 0
};

/// Sum over all entries of p ln(p / q), natural log, with 0 ln 0 = 0.
template <typename T>
KlDivergence kl_divergence_checked(const Tensor<T>& p, const Tensor<T>& q) {
    require_shape(p.shape() == q.shape(), "kl_divergence: P and Q shapes", p.shape(), q.shape());
    KlDivergence r;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = p[i];
        if (pi <= 0.0) continue;
        double qi = q[i];
        if (qi < kKlFloor) {
            qi = kKlFloor;
            ++r.floored_entries;
        }
        r.value += pi * std::log(pi / qi);
    }
    return r;
}

template <typename T>
double kl_divergence(const Tensor<T>& p, const Tensor<T>& q) {
    return kl_divergence_checked(p, q).value;
}

template <typename T>
struct KlGrad {
    Tensor<T> z;          // [n, d]
    Tensor<T> centroids;  // [k, d]
};

/// Exact gradient of kl_divergence(P, soft_assign(Z, mu, alpha)) with P held fixed.
template <typename T>
KlGrad<T> kl_grad(const Tensor<T>& z, const Tensor<T>& centroids, const Tensor<T>& p, double alpha = 1.0) {
    const Tensor<T> q = soft_assign(z, centroids, alpha);
    require_shape(p.shape() == q.shape(), "kl_grad: P shape", p.shape(), q.shape());
    const std::size_t n = z.dim(0), k = centroids.dim(0), d = z.dim(1);
    const double scale = (alpha + 1.0) / alpha;
    std::vector<double> gz(n * d, 0.0), gmu(k * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double row_mass = 0.0;
        for (std::size_t j = 0; j < k; ++j) row_mass += p[i * k + j];
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = static_cast<double>(z[i * d + t]) - static_cast<double>(centroids[j * d + t]);
                s += diff * diff;
            }
            const double w = scale * (static_cast<double>(p[i * k + j]) - row_mass * q[i * k + j]) / (1.0 + s / alpha);
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = static_cast<double>(z[i * d + t]) - static_cast<double>(centroids[j * d + t]);
                gz[i * d + t] += w * diff;
                gmu[j * d + t] -= w * diff;
            }
        }
    }
    return {Tensor<T>({n, d}, std::vector<T>(gz.begin(), gz.end())),
            Tensor<T>({k, d}, std::vector<T>(gmu.begin(), gmu.end()))};
}

/// Row-wise argmax, lowest index on ties.
template <typename T>
std::vector<std::size_t> hard_assign(const Tensor<T>& q) {
    detail::require_matrix(q, "soft assignment");
    const std::size_t n = q.dim(0), k = q.dim(1);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (q[i * k + j] > q[i * k + best]) best = j;
        }
        labels[i] = best;
    }
    return labels;
}

}  // namespace ynet
