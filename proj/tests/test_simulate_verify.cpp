#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dka/simulate_verify.hpp"
#include "dka/special.hpp"

using namespace dka;

namespace {

PointConfig three_points() {
    return make_config(2, std::vector<std::vector<double>>{{1, 0, 0.3}, {0, 1, -0.5}, {-0.6, 0.2, 0.4}});
}

struct ThreadCapGuard {
    unsigned saved = thread_cap().load();
    ~ThreadCapGuard() { thread_cap() = saved; }
};

}  // namespace

TEST(LogTail, AgreesWithErfc) {
    for (double x : {-4.0, -1.0, 0.0, 0.5, 3.0, 10.0, 25.0, 35.0}) {
        const double ref = std::log(0.5 * std::erfc(x / std::numbers::sqrt2));
        EXPECT_NEAR(log_upper_tail(x), ref, 1e-12 * std::max(1.0, std::abs(ref))) << x;
    }
}

TEST(LogTail, AsymptoticRegime) {
    for (double x : {60.0, 200.0, 1e4}) {
        // log Q(x) = -x^2/2 - log(x sqrt(2 pi)) + log(1 - 1/x^2 + 3/x^4 - 15/x^6)
        const double x2 = x * x;
        const double ref = -0.5 * x2 - std::log(x * std::sqrt(2.0 * std::numbers::pi)) +
                           std::log1p(-1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2));
        EXPECT_NEAR(log_upper_tail(x) / ref, 1.0, 1e-14) << x;
    }
    double prev = log_upper_tail(-5.0);
    for (double x = -4.9; x < 50.0; x += 0.1) {
        const double cur = log_upper_tail(x);
        EXPECT_LT(cur, prev);
        prev = cur;
    }
}

TEST(NormalStream, MomentsAndIndependence) {
    NormalStream a(42, 0), b(42, 0), c(42, 1);
    const int n = 200000;
    double s = 0.0, s2 = 0.0, cross = 0.0;
    bool same = true, differs = false;
    for (int i = 0; i < n; ++i) {
        const double x = a.normal(), y = b.normal(), z = c.normal();
        same = same && x == y;
        differs = differs || x != z;
        s += x;
        s2 += x * x;
        cross += x * z;
    }
    EXPECT_TRUE(same);
    EXPECT_TRUE(differs);
    EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
    EXPECT_NEAR(cross / n, 0.0, 4.0 / std::sqrt(n));
}

TEST(Covariance, MatchesKernelDefinition) {
    const auto cfg = three_points();
    for (const auto& k : {builtin_exponential(2.0), builtin_relu()})
        for (long L : {1L, 3L, 10L}) {
            const auto np = centered_covariance(k, cfg, L, Centering::north_pole);
            const auto sa = centered_covariance(k, cfg, L, Centering::spherical_average);
            const double d0 = mean_coefficient(k, L, 2).value;
            EXPECT_NEAR(*sa.mean_coefficient, d0, 1e-12);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    const double kij = i == j ? 1.0 : iterate_kernel(k, cfg.gram(i, j), L);
                    const double ki = iterate_kernel(k, cfg.north_inner(i), L);
                    const double kj = iterate_kernel(k, cfg.north_inner(j), L);
                    EXPECT_NEAR(np.sigma(i, j), kij - ki - kj + 1.0, 1e-13);
                    EXPECT_NEAR(sa.sigma(i, j), kij - d0, 1e-12);
                }
        }
}

TEST(Covariance, NorthPoleRowVanishes) {
    const auto cfg = make_config(2, std::vector<std::vector<double>>{{1, 0, 0}, {0, 0, 1}});
    const auto cc = centered_covariance(builtin_exponential(2.0), cfg, 5, Centering::north_pole);
    EXPECT_EQ(cc.sigma(1, 1), 0.0);
    EXPECT_EQ(cc.sigma(0, 1), 0.0);
    const auto batch = sample(cc, 3000, 9);
    EXPECT_TRUE(batch.draws.col(1).isZero(0.0));
    EXPECT_GT(batch.draws.col(0).squaredNorm(), 0.0);
}

TEST(Sampler, EmpiricalCovarianceInBand) {
    const auto cfg = uniform_points(2, 4, 5);
    const auto cc = centered_covariance(builtin_exponential(2.0), cfg, 3, Centering::spherical_average);
    const long n = 100000;
    const auto batch = sample(cc, n, 77);
    ASSERT_EQ(batch.draws.rows(), n);
    const Eigen::MatrixXd emp = batch.draws.transpose() * batch.draws / static_cast<double>(n);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            const double se = std::sqrt((cc.sigma(i, i) * cc.sigma(j, j) + cc.sigma(i, j) * cc.sigma(i, j)) / n);
            EXPECT_LE(std::abs(emp(i, j) - cc.sigma(i, j)), 4.0 * se) << i << "," << j;
        }
    EXPECT_LE(std::abs(batch.draws.colwise().mean().maxCoeff()), 4.0 * std::sqrt(cc.sigma.diagonal().maxCoeff() / n));
}

TEST(Sampler, DeterministicAcrossSeedsAndWorkers) {
    ThreadCapGuard guard;
    const auto cc = centered_covariance(builtin_relu(), uniform_points(3, 5, 1), 4, Centering::north_pole);
    thread_cap() = 1;
    const auto a = sample(cc, 5000, 123);
    thread_cap() = 4;
    const auto b = sample(cc, 5000, 123);
    const auto c = sample(cc, 5000, 124);
    EXPECT_EQ(a.draws, b.draws);
    EXPECT_NE(a.draws, c.draws);
    EXPECT_EQ(a.config_digest, b.config_digest);
    EXPECT_EQ(a.seed, 123u);
    EXPECT_EQ(a.depth, 4);
    // A prefix of a longer run equals the shorter run.
    const auto longer = sample(cc, 6000, 123);
    EXPECT_EQ(longer.draws.topRows(5000), a.draws);
    EXPECT_THROW(sample(cc, 0, 1), Error);
}

TEST(Sampler, ConfigDigest) {
    EXPECT_EQ(config_digest(uniform_points(2, 3, 1)), config_digest(uniform_points(2, 3, 1)));
    EXPECT_NE(config_digest(uniform_points(2, 3, 1)), config_digest(uniform_points(2, 3, 2)));
    EXPECT_EQ(config_digest(uniform_points(2, 3, 1)).size(), 16u);
}

TEST(Speed, PerRegime) {
    const auto low = classify_regime(builtin_exponential(2.0));
    EXPECT_DOUBLE_EQ(depth_speed(low, 10), 1024.0);
    const auto relu = classify_regime(builtin_relu());
    EXPECT_NEAR(depth_speed(relu, 100), 1e4, 1e-9);
    EXPECT_NEAR(depth_speed(relu, 100, 2.0), 100.0, 1e-12);
    const auto high = classify_regime(builtin_exponential(0.25));
    EXPECT_THROW(depth_speed(high, 10), Error);
    EXPECT_THROW(regime_profile(builtin_exponential(0.25), high), Error);
}

TEST(Convergence, LowDisorderApproachesLimit) {
    const auto k = builtin_exponential(2.0);
    const auto rep = classify_regime(k);
    const auto cfg = uniform_points(2, 3, 2);
    for (auto c : {Centering::north_pole, Centering::spherical_average}) {
        const auto rows = covariance_convergence(k, rep, cfg, c, {5, 10, 20, 40});
        ASSERT_EQ(rows.size(), 4u * 6u);
        std::vector<double> worst(4, 0.0);
        for (std::size_t r = 0; r < rows.size(); ++r) worst[r / 6] = std::max(worst[r / 6], rows[r].distance);
        for (int s = 1; s < 4; ++s) EXPECT_LT(worst[static_cast<std::size_t>(s)], worst[static_cast<std::size_t>(s - 1)]);
        EXPECT_LT(worst[3], 1e-8);
    }
}

TEST(Convergence, SparseApproachesPlateau) {
    const auto k = builtin_exponential(1.0);
    const auto rep = classify_regime(k);
    const auto cfg = uniform_points(2, 3, 4);
    const auto rows = covariance_convergence(k, rep, cfg, Centering::north_pole, {1000, 10000, 100000});
    for (const auto& r : rows) {
        if (r.depth == 100000) {
            EXPECT_LT(r.distance, 1e-3 * (1.0 + r.limit));
        }
    }
    EXPECT_THROW(covariance_convergence(builtin_exponential(0.25), classify_regime(builtin_exponential(0.25)), cfg,
                                        Centering::north_pole, {10}),
                 Error);
}

TEST(Tail, CurveApproachesRateAndMonotoneInLevel) {
    const auto k = builtin_exponential(2.0);
    const auto rep = classify_regime(k);
    const auto cfg = uniform_points(2, 3, 6);
    Eigen::VectorXd theta(3);
    theta << 1.0, -0.5, 0.25;
    const std::vector<long> schedule{5, 10, 20, 40};
    const auto rows = tail_rate_curve(k, rep, cfg, Centering::north_pole, theta, 1.0, schedule);
    for (std::size_t s = 1; s < rows.size(); ++s) EXPECT_LT(rows[s].gap, rows[s - 1].gap);
    EXPECT_LT(rows.back().gap / std::abs(rows.back().limit), 1e-2);
    // log P(<theta, U> >= a) falls as a grows.
    double prev = 0.0;
    for (double a : {0.01, 0.1, 0.5, 1.0, 2.0}) {
        const double lp = tail_rate_curve(k, rep, cfg, Centering::north_pole, theta, a, {10})[0].log_p;
        EXPECT_LT(lp, prev);
        prev = lp;
    }
    EXPECT_THROW(tail_rate_curve(k, rep, cfg, Centering::north_pole, theta, 0.0, schedule), Error);
    EXPECT_THROW(tail_rate_curve(k, rep, cfg, Centering::north_pole, Eigen::VectorXd::Ones(2), 1.0, schedule), Error);
}

TEST(HighDisorder, LimitsAtDepth) {
    const auto k = builtin_exponential(0.25);
    const auto rep = classify_regime(k);
    const auto cfg = uniform_points(2, 4, 3);
    const auto hd = high_disorder_limits(k, rep, cfg, 200);
    EXPECT_NEAR(hd.t_star, 0.5, 1e-12);
    EXPECT_NEAR(hd.d0_hat, 0.5, 1e-9);
    ASSERT_EQ(hd.rows.size(), 2u * 10u);
    for (const auto& r : hd.rows) {
        EXPECT_LT(r.gap, 1e-9);
        if (r.centering == Centering::north_pole) EXPECT_NEAR(r.limit, r.i == r.j ? 1.0 : 0.5, 1e-12);
        else EXPECT_NEAR(r.limit, r.i == r.j ? 0.5 : 0.0, 1e-9);
    }
    const auto pole = make_config(2, std::vector<std::vector<double>>{{0, 0, 1}});
    EXPECT_THROW(high_disorder_limits(k, rep, pole, 200), Error);
    EXPECT_THROW(high_disorder_limits(builtin_relu(), classify_regime(builtin_relu()), cfg, 200), Error);
}

TEST(WeakConvergence, LowDisorderPasses) {
    const auto k = builtin_exponential(2.0);
    const auto rep = classify_regime(k);
    const auto report = weak_convergence_test(k, rep, uniform_points(2, 3, 8), Centering::north_pole, 30, 20000, 5);
    EXPECT_FALSE(report.insufficient_power);
    EXPECT_TRUE(report.covariance_in_band);
    EXPECT_TRUE(report.moments_in_band);
    EXPECT_TRUE(report.pass());
    EXPECT_LE(report.worst_band_ratio, 1.0);
    EXPECT_EQ(report.skewness.size(), 3u);
}

TEST(WeakConvergence, SmallSampleFlagged) {
    const auto k = builtin_exponential(2.0);
    const auto report =
        weak_convergence_test(k, classify_regime(k), uniform_points(2, 3, 8), Centering::north_pole, 30, 500, 5);
    EXPECT_TRUE(report.insufficient_power);
    EXPECT_TRUE(report.pass());
}

TEST(WeakConvergence, WrongLimitDetected) {
    // Depth 1 is far from the limit; a large sample must fall outside the band.
    const auto k = builtin_exponential(2.0);
    const auto report =
        weak_convergence_test(k, classify_regime(k), uniform_points(2, 3, 8), Centering::north_pole, 1, 100000, 5);
    EXPECT_FALSE(report.covariance_in_band);
    EXPECT_FALSE(report.pass());
}

TEST(Discontinuity, SparseRatioStaysAtTwo) {
    const auto k = builtin_relu();
    const auto rep = classify_regime(k);
    const auto rows = sparse_discontinuity_demo(k, rep, 2, {1e-1, 1e-2, 1e-3}, 10000);
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) {
        EXPECT_NEAR(r.inner, 1.0 - r.eps, 1e-12);
        EXPECT_NEAR(r.diag_limit, 2.0 * *rep.h, 1e-9);
        EXPECT_NEAR(r.off_limit, *rep.h, 1e-9);
        EXPECT_NEAR(r.ratio_estimate, 2.0, 5e-3) << r.eps;
        EXPECT_GT(r.ratio_plain, 1.0);
    }
    EXPECT_THROW(sparse_discontinuity_demo(builtin_exponential(2.0), classify_regime(builtin_exponential(2.0)), 2,
                                           {0.1}, 100),
                 Error);
}
