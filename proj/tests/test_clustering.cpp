#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "ynet/clustering.hpp"

using namespace ynet;
using ynet::testing::random_tensor;

namespace {

// Brute-force oracle: minimum over all two-way splits of the
// assign-to-mean inertia.
double best_two_partition_inertia(const Tensor<double>& pts) {
    const std::size_t n = pts.dim(0), d = pts.dim(1);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
        double total = 0.0;
        for (std::size_t side = 0; side < 2; ++side) {
            std::vector<double> mean(d, 0.0);
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (((mask >> i) & 1) != side) continue;
                ++cnt;
                for (std::size_t t = 0; t < d; ++t) mean[t] += pts[i * d + t];
            }
            for (auto& m : mean) m /= static_cast<double>(cnt);
            for (std::size_t i = 0; i < n; ++i) {
                if (((mask >> i) & 1) != side) continue;
                for (std::size_t t = 0; t < d; ++t) total += (pts[i * d + t] - mean[t]) * (pts[i * d + t] - mean[t]);
            }
        }
        best = std::min(best, total);
    }
    return best;
}

void expect_fixed_point(const Tensor<double>& pts, const KMeansResult<double>& r) {
    const std::size_t n = pts.dim(0), d = pts.dim(1), k = r.centroids.dim(0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) s += std::pow(pts[i * d + t] - r.centroids[j * d + t], 2);
            if (s < best_d) {
                best_d = s;
                best = j;
            }
        }
        EXPECT_EQ(r.assignments[i], best) << "point " << i;
    }
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<double> mean(d, 0.0);
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (r.assignments[i] != j) continue;
            ++cnt;
            for (std::size_t t = 0; t < d; ++t) mean[t] += pts[i * d + t];
        }
        ASSERT_GT(cnt, 0u);
        for (std::size_t t = 0; t < d; ++t) EXPECT_NEAR(r.centroids[j * d + t], mean[t] / static_cast<double>(cnt), 1e-5);
    }
}

}  // namespace

TEST(KMeans, DistinctPointsAreTheirOwnCentroids) {
    Tensor<double> pts({4, 2}, {0, 0, 5, 1, -3, 2, 7, 7});
    auto r = kmeans_fit(pts, 4, 1);
    EXPECT_DOUBLE_EQ(r.inertia, 0.0);
    std::vector<std::vector<double>> got, want;
    for (std::size_t j = 0; j < 4; ++j) {
        got.push_back({r.centroids[2 * j], r.centroids[2 * j + 1]});
        want.push_back({pts[2 * j], pts[2 * j + 1]});
    }
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    EXPECT_EQ(got, want);
}

TEST(KMeans, OneDimensionalHandExample) {
    Tensor<double> pts({4, 1}, {0, 1, 10, 11});
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto r = kmeans_fit(pts, 2, seed);
        std::vector<double> c{r.centroids[0], r.centroids[1]};
        std::sort(c.begin(), c.end());
        EXPECT_DOUBLE_EQ(c[0], 0.5);
        EXPECT_DOUBLE_EQ(c[1], 10.5);
        EXPECT_DOUBLE_EQ(r.inertia, 1.0);
        EXPECT_NEAR(best_two_partition_inertia(pts), 1.0, 1e-12);
    }
}

TEST(KMeans, MatchesBruteForceOrIsFixedPoint) {
    Rng rng(3);
    std::size_t optimal = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto pts = random_tensor<double>({8, 2}, rng, -5, 5);
        auto r = kmeans_fit(pts, 2, 100 + trial);
        const double best = best_two_partition_inertia(pts);
        EXPECT_GE(r.inertia, best - 1e-9);
        if (std::abs(r.inertia - best) < 1e-9) ++optimal;
        expect_fixed_point(pts, r);
    }
    // k-means++ seeding reaches the global optimum on most small instances.
    EXPECT_GE(optimal, 40u);
}

TEST(KMeans, InertiaMonotoneAndConsistent) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto pts = random_tensor<double>({60, 3}, rng, -1, 1);
        auto r = kmeans_fit(pts, 4, trial);
        for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
            EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-12);
        }
        EXPECT_NEAR(inertia_of(pts, r.centroids, r.assignments), r.inertia, 1e-4);
        expect_fixed_point(pts, r);
    }
}

TEST(KMeans, DuplicatePointsReseedEmptyClusters) {
    Tensor<double> pts({5, 1}, {1, 1, 1, 1, 9});
    auto r = kmeans_fit(pts, 3, 2);
    EXPECT_EQ(r.centroids.dim(0), 3u);
    EXPECT_TRUE(r.centroids.all_finite());
    EXPECT_DOUBLE_EQ(r.inertia, 0.0);
}

TEST(KMeans, Errors) {
    EXPECT_THROW(kmeans_fit(Tensor<double>({2, 2}), 3, 0), ValidationError);
    Tensor<double> bad({2, 1}, {0.0, std::numeric_limits<double>::quiet_NaN()});
    EXPECT_THROW(kmeans_fit(bad, 2, 0), ValidationError);
}

TEST(KMeans, SeededDeterminism) {
    Rng rng(5);
    auto pts = random_tensor<float>({40, 4}, rng);
    auto a = kmeans_fit(pts, 4, 9), b = kmeans_fit(pts, 4, 9);
    EXPECT_EQ(a.centroids, b.centroids);
    EXPECT_EQ(a.assignments, b.assignments);
}

TEST(SoftAssign, EquidistantIsUniform) {
    auto q = soft_assign(Tensor<double>({1, 2}, {0, 3}), Tensor<double>({2, 2}, {-1, 0, 1, 0}));
    EXPECT_NEAR(q[0], 0.5, 1e-12);
    EXPECT_NEAR(q[1], 0.5, 1e-12);
}

TEST(SoftAssign, HandKernel) {
    auto q = soft_assign(Tensor<double>({1, 2}, {0, 0}), Tensor<double>({2, 2}, {0, 0, 1, 0}));
    EXPECT_NEAR(q[0], 2.0 / 3.0, 1e-6);
    EXPECT_NEAR(q[1], 1.0 / 3.0, 1e-6);
}

TEST(SoftAssign, CoincidentCentroidsUniformRow) {
    auto q = soft_assign(Tensor<double>({1, 2}, {1, 1}), Tensor<double>({3, 2}, 1.0));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(q[j], 1.0 / 3.0, 1e-12);
}

TEST(SoftAssign, RowsStochasticPositiveAndTranslationInvariant) {
    Rng rng(6);
    for (double alpha : {1.0, 0.5, 3.0}) {
        auto z = random_tensor<double>({30, 4}, rng, -3, 3);
        auto mu = random_tensor<double>({4, 4}, rng, -3, 3);
        auto q = soft_assign(z, mu, alpha);
        for (std::size_t i = 0; i < 30; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                EXPECT_GT(q[i * 4 + j], 0.0);
                s += q[i * 4 + j];
            }
            EXPECT_NEAR(s, 1.0, 1e-5);
        }
        auto shift = random_tensor<double>({4}, rng, -10, 10);
        auto z2 = z, mu2 = mu;
        for (std::size_t i = 0; i < z2.size(); ++i) z2[i] += shift[i % 4];
        for (std::size_t i = 0; i < mu2.size(); ++i) mu2[i] += shift[i % 4];
        auto q2 = soft_assign(z2, mu2, alpha);
        for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(q[i], q2[i], 1e-9);
    }
}

TEST(SoftAssign, DimensionMismatch) {
    EXPECT_THROW(soft_assign(Tensor<double>({2, 3}), Tensor<double>({2, 4})), ShapeError);
}

TEST(TargetDistribution, UniformStaysUniform) {
    auto p = target_distribution(Tensor<double>({5, 4}, 0.25));
    for (auto v : p) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(TargetDistribution, SingleRowIsFixed) {
    Tensor<double> q({1, 2}, {0.8, 0.2});
    auto p = target_distribution(q);
    EXPECT_NEAR(p[0], 0.8, 1e-12);
    EXPECT_NEAR(p[1], 0.2, 1e-12);
}

TEST(TargetDistribution, TwoRowHandArithmetic) {
    auto p = target_distribution(Tensor<double>({2, 2}, {0.9, 0.1, 0.5, 0.5}));
    // f = (1.4, 0.6); row 1 unnormalized (0.81 / 1.4, 0.01 / 0.6).
    const double a = 0.81 / 1.4, b = 0.01 / 0.6;
    EXPECT_NEAR(p[0], a / (a + b), 1e-12);
    EXPECT_NEAR(p[0], 0.972, 1e-3);
    EXPECT_NEAR(p[1], 0.028, 1e-3);
}

TEST(TargetDistribution, OneHotFixedAndRowsStochastic) {
    Tensor<double> one_hot({3, 3}, {1, 0, 0, 0, 0, 1, 1, 0, 0});
    EXPECT_EQ(target_distribution(one_hot), one_hot);
    Rng rng(7);
    auto q = soft_assign(random_tensor<double>({20, 4}, rng, -2, 2), random_tensor<double>({4, 4}, rng, -2, 2));
    auto p = target_distribution(q);
    for (std::size_t i = 0; i < 20; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_GE(p[i * 4 + j], 0.0);
            EXPECT_LE(p[i * 4 + j], 1.0);
            s += p[i * 4 + j];
        }
        EXPECT_NEAR(s, 1.0, 1e-5);
    }
}

TEST(TargetDistribution, SharpensWhenFrequenciesEqual) {
    // Rows that are cyclic shifts of each other give equal column sums.
    Tensor<double> q({3, 3}, {0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.3, 0.2, 0.5});
    auto p = target_distribution(q);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto mx = std::max_element(q.begin() + 3 * i, q.begin() + 3 * i + 3) - (q.begin() + 3 * i);
        EXPECT_GE(p[3 * i + mx], q[3 * i + mx]);
    }
}

TEST(KlDivergence, HandValues) {
    Tensor<double> q({1, 2}, 0.5);
    EXPECT_NEAR(kl_divergence(Tensor<double>({1, 2}, {1.0, 0.0}), q), std::log(2.0), 1e-6);
    EXPECT_DOUBLE_EQ(kl_divergence(q, q), 0.0);
}

TEST(KlDivergence, GibbsInequalityAndEquality) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        auto q = soft_assign(random_tensor<double>({6, 3}, rng, -2, 2), random_tensor<double>({4, 3}, rng, -2, 2));
        auto p = target_distribution(q);
        EXPECT_GE(kl_divergence(p, q), 0.0);
        EXPECT_NEAR(kl_divergence(q, q), 0.0, 1e-12);
        const bool same = std::equal(p.begin(), p.end(), q.begin(), [](double a, double b) { return std::abs(a - b) < 1e-9; });
        if (!same) {
            EXPECT_GT(kl_divergence(p, q), 0.0);
        }
    }
}

TEST(KlDivergence, FloorIsFlagged) {
    auto r = kl_divergence_checked(Tensor<double>({1, 2}, {0.5, 0.5}), Tensor<double>({1, 2}, {1.0, 0.0}));
    EXPECT_EQ(r.floored_entries, 1u);
    EXPECT_TRUE(std::isfinite(r.value));
    EXPECT_NEAR(r.value, 0.5 * std::log(0.5) + 0.5 * std::log(0.5 / kKlFloor), 1e-9);
}

TEST(KlGrad, MatchesFiniteDifferences64) {
    Rng rng(9);
    for (double alpha : {1.0, 2.0}) {
        auto z = random_tensor<double>({5, 3}, rng, -2, 2);
        auto mu = random_tensor<double>({2, 3}, rng, -2, 2);
        auto p = target_distribution(soft_assign(random_tensor<double>({5, 3}, rng, -2, 2), mu, alpha));
        auto g = kl_grad(z, mu, p, alpha);
        auto f = [&] { return kl_divergence(p, soft_assign(z, mu, alpha)); };
        auto rz = ynet::testing::check_gradient(z, g.z, f, 1e-6, 1e-8, "z");
        auto rm = ynet::testing::check_gradient(mu, g.centroids, f, 1e-6, 1e-8, "mu");
        EXPECT_LT(rz.max_rel_error, 1e-4) << rz.worst;
        EXPECT_LT(rm.max_rel_error, 1e-4) << rm.worst;
    }
}

TEST(KlGrad, ZeroLossIsFinite) {
    Rng rng(10);
    auto z = random_tensor<double>({4, 2}, rng);
    auto mu = random_tensor<double>({3, 2}, rng);
    auto q = soft_assign(z, mu);
    EXPECT_NEAR(kl_divergence(q, q), 0.0, 1e-12);
    auto g = kl_grad(z, mu, q);
    EXPECT_TRUE(g.z.all_finite());
    EXPECT_TRUE(g.centroids.all_finite());
}

TEST(KlGrad, MirrorSymmetricCentroids) {
    // Centroids mirror each other across x = 0; z lies on that axis.
    Tensor<double> mu({2, 2}, {-1.5, 0.7, 1.5, 0.7});
    Tensor<double> z({1, 2}, {0.0, -0.4});
    Tensor<double> p({1, 2}, {0.85, 0.15});
    auto g = kl_grad(z, mu, p);
    EXPECT_NEAR(g.z[1], 0.0, 1e-12);
    EXPECT_GT(std::abs(g.z[0]), 1e-3);
}

TEST(HardAssign, ArgmaxAndTies) {
    auto labels = hard_assign(Tensor<double>({2, 4}, {0.1, 0.7, 0.1, 0.1, 0.25, 0.25, 0.25, 0.25}));
    EXPECT_EQ(labels, (std::vector<std::size_t>{1, 0}));
}

TEST(HardAssign, ColumnPermutationEquivariance) {
    Rng rng(11);
    auto q = soft_assign(random_tensor<double>({25, 3}, rng, -2, 2), random_tensor<double>({4, 3}, rng, -2, 2));
    const std::vector<std::size_t> perm{2, 0, 3, 1};  // column j moves to perm[j]
    Tensor<double> qp(q.shape());
    for (std::size_t i = 0; i < 25; ++i) {
        for (std::size_t j = 0; j < 4; ++j) qp[i * 4 + perm[j]] = q[i * 4 + j];
    }
    auto a = hard_assign(q), b = hard_assign(qp);
    for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(b[i], perm[a[i]]);
}
