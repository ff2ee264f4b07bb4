#pragma once

// Finite-depth covariances of the centered fields, exact Gaussian sampling,
// and the numerical checks of the deep-limit statements: covariance scaling,
// exact tail curves, the sparse diagonal jump, high-disorder limits and
// finite-dimensional weak convergence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "errors.hpp"
#include "iteration.hpp"
#include "kernels.hpp"
#include "parallel.hpp"
#include "profile.hpp"
#include "rates.hpp"
#include "rng.hpp"
#include "special.hpp"
#include "sphere_spectral.hpp"

namespace dka {

enum class Centering { north_pole, spherical_average };

inline const char* to_string(Centering c) {
    return c == Centering::north_pole ? "north-pole" : "spherical-average";
}

struct CenteredCovariance {
    PointConfig config;
    long depth = 0;
    Centering centering = Centering::north_pole;
    Eigen::MatrixXd sigma;
    /// D_{0,L}, spherical-average centering only.
    std::optional<double> mean_coefficient;
};

/// Covariance of T_L(x) - T_L(N) (north-pole) or T_L(x) - spherical mean.
///
/// Assembled from deficits 1 - kappa_L so that deep, nearly-degenerate
/// covariances keep their relative precision:
///   north-pole:        d(<x_i,N>) + d(<x_j,N>) - d(<x_i,x_j>)
///   spherical-average: (1 - D_{0,L}) - d(<x_i,x_j>)
inline CenteredCovariance centered_covariance(const Kernel& k, const PointConfig& cfg, long depth,
                                              Centering centering) {
    CenteredCovariance cc;
    cc.config = cfg;
    cc.depth = depth;
    cc.centering = centering;
    const int m = cfg.size();
    cc.sigma.resize(m, m);
    if (centering == Centering::north_pole) {
        std::vector<double> dn(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) dn[static_cast<std::size_t>(i)] = depth_deficit(k, cfg.north_inner(i), depth);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j <= i; ++j) {
                const double dij = i == j ? 0.0 : depth_deficit(k, cfg.gram(i, j), depth);
                cc.sigma(i, j) = cc.sigma(j, i) =
                    dn[static_cast<std::size_t>(i)] + dn[static_cast<std::size_t>(j)] - dij;
            }
    } else {
        const double md = mean_deficit(k, depth, cfg.dim).value;
        cc.mean_coefficient = 1.0 - md;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j <= i; ++j)
                cc.sigma(i, j) = cc.sigma(j, i) = md - (i == j ? 0.0 : depth_deficit(k, cfg.gram(i, j), depth));
    }
    if (m > 0) {
        const double budget = 1e-10 * std::max(cc.sigma.trace() / m, 0.0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cc.sigma, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -budget - 1e-300)
            fail(ErrorKind::covariance, "centered covariance is indefinite beyond the jitter budget (min eigenvalue " +
                                            detail::fmt_param(es.eigenvalues().minCoeff()) + ")");
    }
    return cc;
}

struct SampleBatch {
    Eigen::MatrixXd draws;  // n x m
    std::uint64_t seed = 0;
    long depth = 0;
    Centering centering = Centering::north_pole;
    std::string config_digest;
    double jitter = 0.0;
};

inline std::string config_digest(const PointConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    mix(static_cast<std::uint64_t>(cfg.dim));
    for (Eigen::Index i = 0; i < cfg.points.rows(); ++i)
        for (Eigen::Index j = 0; j < cfg.points.cols(); ++j) {
            std::uint64_t bits;
            const double v = cfg.points(i, j);
            std::memcpy(&bits, &v, sizeof bits);
            mix(bits);
        }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline constexpr long kSampleBlock = 1024;

/// n exact draws from N(0, sigma). Coordinates whose row of sigma is exactly
/// zero (a point at the centering pole) are emitted as 0; the rest are
/// Cholesky-factored with jitter d * trace/m, d = 1e-14 ... 1e-10.
/// Block b of 1024 rows uses random stream (seed, b), so output does not
/// depend on the worker count.
inline SampleBatch sample(const CenteredCovariance& cc, long n, std::uint64_t seed) {
    if (n < 1) fail(ErrorKind::domain, "sample size must be >= 1");
    const int m = static_cast<int>(cc.sigma.rows());
    std::vector<int> active;
    for (int i = 0; i < m; ++i)
        if (!cc.sigma.row(i).isZero(0.0)) active.push_back(i);
    const int ma = static_cast<int>(active.size());
    Eigen::MatrixXd sub(ma, ma);
    for (int i = 0; i < ma; ++i)
        for (int j = 0; j < ma; ++j) sub(i, j) = cc.sigma(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(j)]);

    SampleBatch batch;
    batch.seed = seed;
    batch.depth = cc.depth;
    batch.centering = cc.centering;
    batch.config_digest = config_digest(cc.config);
    batch.draws = Eigen::MatrixXd::Zero(n, m);

    Eigen::MatrixXd factor = Eigen::MatrixXd::Zero(ma, ma);
    if (ma > 0) {
        const double scale = sub.trace() / ma;
        bool ok = false;
        for (double delta = 1e-14; delta <= 1.0001e-10; delta *= 10.0) {
            Eigen::MatrixXd jittered = sub;
            jittered.diagonal().array() += delta * scale;
            Eigen::LLT<Eigen::MatrixXd> llt(jittered);
            if (llt.info() == Eigen::Success) {
                factor = llt.matrixL();
                batch.jitter = delta * scale;
                ok = true;
                break;
            }
        }
        if (!ok) fail(ErrorKind::covariance, "Cholesky factorization failed at the maximum jitter");
    }

    const long blocks = (n + kSampleBlock - 1) / kSampleBlock;
    parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t b) {
        NormalStream rng(seed, b);
        const long first = static_cast<long>(b) * kSampleBlock;
        const long last = std::min(n, first + kSampleBlock);
        Eigen::VectorXd z(ma);
        for (long r = first; r < last; ++r) {
            for (int i = 0; i < ma; ++i) z(i) = rng.normal();
            const Eigen::VectorXd x = factor * z;
            for (int i = 0; i < ma; ++i) batch.draws(r, active[static_cast<std::size_t>(i)]) = x(i);
        }
    });
    return batch;
}

/// LDP speed v_L: kappa'(1)^{-L} in low disorder, L^{1/(rho-1)} in the sparse regime.
inline double depth_speed(const RegimeReport& rep, long depth, std::optional<double> rho_override = std::nullopt) {
    if (rep.regime == Regime::low_disorder) return std::pow(rep.kprime1, -static_cast<double>(depth));
    if (rep.regime == Regime::sparse) {
        const auto rho = rho_override ? rho_override : rep.rho;
        if (!rho) fail(ErrorKind::numeric, "sparse speed needs rho but the regularity fit failed");
        return std::pow(static_cast<double>(depth), 1.0 / (*rho - 1.0));
    }
    fail(ErrorKind::domain, "no LDP speed in the high-disorder regime");
}

/// Limit profile matching the classified regime.
inline Profile regime_profile(const Kernel& k, const RegimeReport& rep) {
    if (rep.regime == Regime::low_disorder) return low_profile(k);
    if (rep.regime == Regime::sparse) {
        if (!rep.h || !rep.symmetry) fail(ErrorKind::numeric, "sparse plateau unavailable (regularity fit failed)");
        return sparse_profile(*rep.h, *rep.symmetry);
    }
    fail(ErrorKind::domain, "high-disorder kernels have no limit profile");
}

inline RateModel limit_matrix(const Profile& g, const PointConfig& cfg, Centering c) {
    return c == Centering::north_pole ? matrix_B1(g, cfg) : matrix_B2(g, cfg);
}

struct ConvergenceRow {
    long depth;
    double speed;
    int i, j;
    double scaled;
    double limit;
    double distance;
};

inline std::vector<ConvergenceRow> covariance_convergence(const Kernel& k, const RegimeReport& rep,
                                                          const PointConfig& cfg, Centering centering,
                                                          const std::vector<long>& schedule,
                                                          std::optional<double> rho_override = std::nullopt) {
    if (rep.regime == Regime::high_disorder)
        fail(ErrorKind::domain, "covariance convergence needs the low-disorder or sparse regime");
    const auto g = regime_profile(k, rep);
    const auto limit = limit_matrix(g, cfg, centering);
    std::vector<std::vector<ConvergenceRow>> per_depth(schedule.size());
    parallel_for(schedule.size(), [&](std::size_t s) {
        const long L = schedule[s];
        const double v = L == 0 ? 1.0 : depth_speed(rep, L, rho_override);
        const auto cc = centered_covariance(k, cfg, L, centering);
        for (int i = 0; i < cfg.size(); ++i)
            for (int j = 0; j <= i; ++j) {
                const double scaled = v * cc.sigma(i, j);
                per_depth[s].push_back({L, v, i, j, scaled, limit.matrix(i, j), std::abs(scaled - limit.matrix(i, j))});
            }
    });
    std::vector<ConvergenceRow> rows;
    for (auto& chunk : per_depth) rows.insert(rows.end(), chunk.begin(), chunk.end());
    return rows;
}

struct TailRow {
    long depth;
    double speed;
    double variance;  // theta' sigma_L theta
    double log_p;     // log P(<theta, U_L> >= a)
    double curve;     // log_p / v_L
    double limit;     // -a^2 / (2 theta' B theta)
    double gap;
};

/// Exact half-space tail curve (1/v_L) log P(<theta, U_L> >= a) against its
/// large-deviation limit -a^2 / (2 theta' B theta).
inline std::vector<TailRow> tail_rate_curve(const Kernel& k, const RegimeReport& rep, const PointConfig& cfg,
                                            Centering centering, const Eigen::VectorXd& theta, double a,
                                            const std::vector<long>& schedule,
                                            std::optional<double> rho_override = std::nullopt) {
    if (theta.size() != cfg.size()) fail(ErrorKind::domain, "theta length does not match the configuration");
    if (!(a > 0.0)) fail(ErrorKind::domain, "tail level a must be positive");
    const auto g = regime_profile(k, rep);
    const auto limit = limit_matrix(g, cfg, centering);
    const double q = theta.dot(limit.matrix * theta);
    if (!(q > 0.0)) fail(ErrorKind::domain, "degenerate direction: theta' B theta = 0");
    const double rate_limit = -a * a / (2.0 * q);
    std::vector<TailRow> rows(schedule.size());
    parallel_for(schedule.size(), [&](std::size_t s) {
        const long L = schedule[s];
        const double v = depth_speed(rep, L, rho_override);
        const auto cc = centered_covariance(k, cfg, L, centering);
        const double var = theta.dot(cc.sigma * theta);
        if (!(var > 0.0)) fail(ErrorKind::domain, "degenerate direction: zero variance at depth " + std::to_string(L));
        const double log_p = log_upper_tail(a / std::sqrt(var));
        rows[s] = {L, v, var, log_p, log_p / v, rate_limit, std::abs(log_p / v - rate_limit)};
    });
    return rows;
}

struct DiscontinuityRow {
    double eps;
    double inner;
    double diag_plain, off_plain;          // v_L sigma
    double diag_estimate, off_estimate;    // Stolz-Cesaro extrapolated
    double ratio_plain, ratio_estimate;
    double diag_limit, off_limit;
};

/// Pairs x, y with <x,y> = 1 - eps. The limit covariance has diagonal 2h and
/// off-diagonal h for every eps in (0, 2): the would-be limit kernel jumps at
/// the diagonal. For d >= 2 both points lie on the equator; for d = 1 the
/// second point is rotated towards N.
inline std::vector<DiscontinuityRow> sparse_discontinuity_demo(const Kernel& k, const RegimeReport& rep, int dim,
                                                               const std::vector<double>& eps_schedule, long depth) {
    if (rep.regime != Regime::sparse) fail(ErrorKind::domain, "sparse discontinuity demo needs the sparse regime");
    if (!rep.rho || !rep.h || !rep.symmetry) fail(ErrorKind::numeric, "sparse regularity unavailable");
    const auto g = sparse_profile(*rep.h, *rep.symmetry);
    const double rho = *rep.rho;
    const double v = std::pow(static_cast<double>(depth), 1.0 / (rho - 1.0));
    auto estimate = [&](double t) { return sparse_profile_point(k, t, rho, *rep.symmetry, depth).value; };

    std::vector<DiscontinuityRow> rows(eps_schedule.size());
    parallel_for(eps_schedule.size(), [&](std::size_t s) {
        const double eps = eps_schedule[s];
        if (!(eps > 0.0 && eps <= 2.0)) fail(ErrorKind::domain, "eps must lie in (0, 2]");
        const double inner = 1.0 - eps;
        Eigen::MatrixXd rows_xy = Eigen::MatrixXd::Zero(2, dim + 1);
        rows_xy(0, 0) = 1.0;
        rows_xy(1, 0) = inner;
        rows_xy(1, 1) = std::sqrt(std::max(0.0, 1.0 - inner * inner));
        const auto cfg = make_config(dim, rows_xy);
        const auto cc = centered_covariance(k, cfg, depth, Centering::north_pole);
        const auto lim = matrix_B1(g, cfg);
        const double sx = estimate(cfg.north_inner(0)), sy = estimate(cfg.north_inner(1));
        const double sxy = estimate(cfg.gram(0, 1));
        DiscontinuityRow r{};
        r.eps = eps;
        r.inner = cfg.gram(0, 1);
        r.diag_plain = v * cc.sigma(0, 0);
        r.off_plain = v * cc.sigma(0, 1);
        r.diag_estimate = 2.0 * sx;
        r.off_estimate = sx + sy - sxy;
        r.ratio_plain = r.diag_plain / r.off_plain;
        r.ratio_estimate = r.diag_estimate / r.off_estimate;
        r.diag_limit = lim.matrix(0, 0);
        r.off_limit = lim.matrix(0, 1);
        rows[s] = r;
    });
    return rows;
}

struct HighDisorderRow {
    Centering centering;
    int i, j;
    double value;
    double limit;
    double gap;
};

struct HighDisorderReport {
    double t_star = 0.0;
    double d0_hat = 0.0;
    std::vector<HighDisorderRow> rows;
};

inline HighDisorderReport high_disorder_limits(const Kernel& k, const RegimeReport& rep, const PointConfig& cfg,
                                               long depth) {
    if (rep.regime != Regime::high_disorder || !rep.t_star)
        fail(ErrorKind::domain, "high-disorder limits need the high-disorder regime");
    const int m = cfg.size();
    for (int i = 0; i < m; ++i) {
        if (std::abs(cfg.north_inner(i)) >= 1.0 - kPoleTolerance)
            fail(ErrorKind::domain, "high-disorder limits need |<x_i, N>| < 1");
        for (int j = 0; j < i; ++j)
            if (std::abs(cfg.gram(i, j)) >= 1.0 - kPoleTolerance)
                fail(ErrorKind::domain, "high-disorder limits need |<x_i, x_j>| < 1");
    }
    HighDisorderReport out;
    out.t_star = *rep.t_star;
    out.d0_hat = mean_coefficient(k, depth, cfg.dim).value;
    const double ts = out.t_star, d0 = out.d0_hat;
    std::vector<double> kn(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) kn[static_cast<std::size_t>(i)] = iterate_kernel(k, cfg.north_inner(i), depth);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) {
            const double kij = i == j ? 1.0 : iterate_kernel(k, cfg.gram(i, j), depth);
            const double np = kij - kn[static_cast<std::size_t>(i)] - kn[static_cast<std::size_t>(j)] + 1.0;
            const double np_lim = i == j ? 2.0 * (1.0 - ts) : 1.0 - ts;
            out.rows.push_back({Centering::north_pole, i, j, np, np_lim, std::abs(np - np_lim)});
        }
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) {
            const double kij = i == j ? 1.0 : iterate_kernel(k, cfg.gram(i, j), depth);
            const double sa = kij - d0;
            const double sa_lim = i == j ? 1.0 - d0 : ts - d0;
            out.rows.push_back({Centering::spherical_average, i, j, sa, sa_lim, std::abs(sa - sa_lim)});
        }
    return out;
}

struct WeakConvergenceReport {
    long n = 0;
    double speed = 1.0;
    Eigen::MatrixXd empirical;
    Eigen::MatrixXd limit;
    Eigen::MatrixXd standard_error;
    double max_abs_deviation = 0.0;
    double worst_band_ratio = 0.0;  // max |emp - B| / (4 SE)
    bool covariance_in_band = true;
    std::vector<double> skewness, kurtosis;
    double skew_band = 0.0, kurt_band = 0.0;
    bool moments_in_band = true;
    bool insufficient_power = false;

    [[nodiscard]] bool pass() const { return insufficient_power || (covariance_in_band && moments_in_band); }
};

inline constexpr long kMinPoweredSample = 1000;

/// Samples sqrt(v_L) U_L and compares the empirical covariance with the limit
/// matrix entrywise (4 SE bands, SE_ij = sqrt((B_ii B_jj + B_ij^2) / n)),
/// plus per-coordinate skewness and kurtosis bands (normal: 0 and 3).
inline WeakConvergenceReport weak_convergence_test(const Kernel& k, const RegimeReport& rep, const PointConfig& cfg,
                                                   Centering centering, long depth, long n, std::uint64_t seed,
                                                   std::optional<double> rho_override = std::nullopt) {
    if (rep.regime == Regime::high_disorder)
        fail(ErrorKind::domain, "weak convergence test needs the low-disorder or sparse regime");
    WeakConvergenceReport out;
    out.n = n;
    out.insufficient_power = n < kMinPoweredSample;
    out.speed = depth_speed(rep, depth, rho_override);
    const auto g = regime_profile(k, rep);
    out.limit = limit_matrix(g, cfg, centering).matrix;
    const auto cc = centered_covariance(k, cfg, depth, centering);
    const auto batch = sample(cc, n, seed);
    const Eigen::MatrixXd x = std::sqrt(out.speed) * batch.draws;
    const int m = cfg.size();
    const double nn = static_cast<double>(n);
    out.empirical = (x.transpose() * x) / nn;
    out.standard_error.resize(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const double b = out.limit(i, j);
            out.standard_error(i, j) = std::sqrt((out.limit(i, i) * out.limit(j, j) + b * b) / nn);
            const double dev = std::abs(out.empirical(i, j) - b);
            out.max_abs_deviation = std::max(out.max_abs_deviation, dev);
            const double band = 4.0 * out.standard_error(i, j);
            if (band > 0.0) out.worst_band_ratio = std::max(out.worst_band_ratio, dev / band);
            if (dev > band + 1e-300) out.covariance_in_band = false;
        }
    out.skew_band = 4.0 * std::sqrt(6.0 / nn);
    out.kurt_band = 4.0 * std::sqrt(24.0 / nn);
    for (int i = 0; i < m; ++i) {
        const auto col = x.col(i);
        const double mean = col.mean();
        const double m2 = (col.array() - mean).square().mean();
        if (!(m2 > 0.0)) {
            out.skewness.push_back(0.0);
            out.kurtosis.push_back(3.0);
            continue;
        }
        const double m3 = (col.array() - mean).cube().mean();
        const double m4 = (col.array() - mean).square().square().mean();
        const double skew = m3 / std::pow(m2, 1.5), kurt = m4 / (m2 * m2);
        out.skewness.push_back(skew);
        out.kurtosis.push_back(kurt);
        if (std::abs(skew) > out.skew_band || std::abs(kurt - 3.0) > out.kurt_band) out.moments_in_band = false;
    }
    return out;
}

}  // namespace dka
