#pragma once

// Limit covariance matrices B1 (North-Pole centering) and B2 (spherical
// average centering) at a finite configuration, and the Gaussian rate
// functions I(y) = sup_theta { <theta, y> - theta' B theta / 2 }.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "profile.hpp"
#include "sphere_spectral.hpp"

namespace dka {

enum class MatrixKind { B1, B2 };

inline const char* to_string(MatrixKind k) { return k == MatrixKind::B1 ? "B1" : "B2"; }

struct RateModel {
    MatrixKind which = MatrixKind::B1;
    ProfileKind profile_kind = ProfileKind::L;
    std::optional<double> h;
    Eigen::MatrixXd matrix;
    Eigen::VectorXd eigenvalues;  // ascending
    Eigen::MatrixXd eigenvectors;
    int rank = 0;
    double lambda_max = 0.0;

    /// Eigenvalues at or below this are treated as zero.
    [[nodiscard]] double rank_threshold() const { return 1e-12 * lambda_max; }
};

struct RateValue {
    double value = 0.0;
    bool in_range = true;
    double residual = 0.0;
    std::string note;

    [[nodiscard]] bool finite() const { return in_range; }

    static RateValue infinite(double residual, std::string note = {}) {
        return {std::numeric_limits<double>::infinity(), false, residual, std::move(note)};
    }
};

inline constexpr double kRangeTolerance = 1e-8;

inline RateModel make_rate_model(Eigen::MatrixXd matrix, MatrixKind which, ProfileKind kind,
                                 std::optional<double> h) {
    RateModel model;
    model.which = which;
    model.profile_kind = kind;
    model.h = h;
    model.matrix = 0.5 * (matrix + matrix.transpose());
    if (model.matrix.rows() == 0) return model;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(model.matrix);
    if (es.info() != Eigen::Success) fail(ErrorKind::numeric, "eigendecomposition of the limit matrix failed");
    model.eigenvalues = es.eigenvalues();
    model.eigenvectors = es.eigenvectors();
    model.lambda_max = std::max(0.0, model.eigenvalues.maxCoeff());
    for (Eigen::Index i = 0; i < model.eigenvalues.size(); ++i)
        if (model.eigenvalues(i) > model.rank_threshold() && model.lambda_max > 0.0) ++model.rank;
    return model;
}

/// B1 entries g(<x_i,N>) + g(<x_j,N>) - g(<x_i,x_j>).
inline RateModel matrix_B1(const Profile& g, const PointConfig& cfg) {
    const int m = cfg.size();
    std::vector<double> at_north(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) at_north[static_cast<std::size_t>(i)] = g(cfg.north_inner(i));
    Eigen::MatrixXd b(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) {
            const double gij = i == j ? 0.0 : g(cfg.gram(i, j));
            b(i, j) = b(j, i) = at_north[static_cast<std::size_t>(i)] + at_north[static_cast<std::size_t>(j)] - gij;
        }
    return make_rate_model(std::move(b), MatrixKind::B1, g.kind, g.h);
}

/// B2 entries avg(g) - g(<x_i,x_j>), avg the weighted sphere average of g.
inline RateModel matrix_B2(const Profile& g, const PointConfig& cfg) {
    const int m = cfg.size();
    const double avg = limit_mean_deficit(g, cfg.dim);
    Eigen::MatrixXd b(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) b(i, j) = b(j, i) = avg - (i == j ? 0.0 : g(cfg.gram(i, j)));
    return make_rate_model(std::move(b), MatrixKind::B2, g.kind, g.h);
}

/// 1/2 y' B^+ y when y lies in range(B), +infinity otherwise.
inline RateValue rate_eval(const RateModel& model, const Eigen::VectorXd& y) {
    if (y.size() != model.matrix.rows())
        fail(ErrorKind::domain, "rate argument has " + std::to_string(y.size()) + " entries, matrix is " +
                                    std::to_string(model.matrix.rows()) + "x" + std::to_string(model.matrix.rows()));
    const double ynorm = y.norm();
    if (ynorm == 0.0) return {};
    if (model.matrix.rows() == 0) return {};
    const Eigen::VectorXd a = model.eigenvectors.transpose() * y;
    double null_sq = 0.0, value = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double lambda = model.eigenvalues(i);
        if (lambda <= model.rank_threshold() || model.lambda_max == 0.0)
            null_sq += a(i) * a(i);
        else
            value += a(i) * a(i) / lambda;
    }
    const double residual = std::sqrt(null_sq);
    if (residual > kRangeTolerance * ynorm) return RateValue::infinite(residual);
    return {0.5 * value, true, residual, {}};
}

namespace detail {

struct Reduction {
    std::vector<int> kept;
    double violation = 0.0;  // largest constraint residual
    std::string note;
};

// Coordinate reductions shared by the sparse closed forms. Pole points with a
// zero row in the limit matrix must carry y_i = 0; antipodal pairs that share
// a row must carry equal values and collapse to one coordinate.
inline Reduction reduce_sparse(const PointConfig& cfg, const Eigen::VectorXd& y, SymmetrySet set, bool drop_poles) {
    const int m = cfg.size();
    const bool symmetric = set == SymmetrySet::plus_minus_one;
    Reduction red;
    std::vector<bool> keep(static_cast<std::size_t>(m), true);
    if (drop_poles) {
        // (N, S) pairs and lone poles first; the antipodal merge below must not see them.
        for (int i = 0; i < m; ++i) {
            const auto s = static_cast<std::size_t>(i);
            const bool zero_row = cfg.north_flags[s] || (symmetric && cfg.south_flags[s]);
            if (!zero_row) {
                if (cfg.south_flags[s])
                    red.note = "point at the South Pole with symmetry set {1} treated as a generic point";
                continue;
            }
            keep[s] = false;
            red.violation = std::max(red.violation, std::abs(y(i)));
        }
    }
    if (symmetric) {
        for (auto [i, j] : cfg.antipodal_pairs) {
            if (!keep[static_cast<std::size_t>(i)] || !keep[static_cast<std::size_t>(j)]) continue;
            red.violation = std::max(red.violation, std::abs(y(i) - y(j)) / std::sqrt(2.0));
            keep[static_cast<std::size_t>(j)] = false;
        }
    }
    for (int i = 0; i < m; ++i)
        if (keep[static_cast<std::size_t>(i)]) red.kept.push_back(i);
    return red;
}

}  // namespace detail

/// Closed-form sparse rate for the North-Pole centering, after the pole and
/// antipodal reductions: (m' sum y^2 - 2 sum_{i<j} y_i y_j) / (2 (m'+1) h).
inline RateValue sparse_rate_1(const PointConfig& cfg, const Eigen::VectorXd& y, double h, SymmetrySet set) {
    if (y.size() != cfg.size()) fail(ErrorKind::domain, "rate argument length does not match the configuration");
    const auto red = detail::reduce_sparse(cfg, y, set, true);
    const double tol = kRangeTolerance * y.norm();
    if (red.violation > tol) return RateValue::infinite(red.violation, red.note);
    const double mr = static_cast<double>(red.kept.size());
    double sum_sq = 0.0, sum = 0.0;
    for (int i : red.kept) {
        sum_sq += y(i) * y(i);
        sum += y(i);
    }
    // sum_{i<j} y_i y_j = (sum^2 - sum_sq) / 2
    const double value = (mr * sum_sq - (sum * sum - sum_sq)) / (2.0 * (mr + 1.0) * h);
    return {std::max(0.0, value), true, red.violation, red.note};
}

/// Closed-form sparse rate for the spherical-average centering: |y_reduced|^2 / (2h).
inline RateValue sparse_rate_2(const PointConfig& cfg, const Eigen::VectorXd& y, double h, SymmetrySet set) {
    if (y.size() != cfg.size()) fail(ErrorKind::domain, "rate argument length does not match the configuration");
    const auto red = detail::reduce_sparse(cfg, y, set, false);
    const double tol = kRangeTolerance * y.norm();
    if (red.violation > tol) return RateValue::infinite(red.violation);
    double sum_sq = 0.0;
    for (int i : red.kept) sum_sq += y(i) * y(i);
    return {sum_sq / (2.0 * h), true, red.violation, {}};
}

struct ContractionResult {
    RateValue direct;
    RateValue contracted;
    double z_star = 0.0;
    double gap = 0.0;
    int iterations = 0;
    bool converged = true;
    std::string diagnostic;
};

/// Compares I1(y; x) on B1 with inf_z I2(y + z 1, z; x, N) on B2 of the
/// configuration augmented by the North Pole.
///
/// The objective is a convex quadratic on its (affine) domain. When that
/// domain is a single point it is located by projection; otherwise a golden
/// section search on z in [-10|y|, 10|y|] is refined by the parabola through
/// three points, which is exact for a quadratic.
inline ContractionResult contraction_check(const Profile& g, const PointConfig& cfg, const Eigen::VectorXd& y) {
    for (bool north : cfg.north_flags)
        if (north) fail(ErrorKind::domain, "contraction check requires a configuration without the North Pole");
    const int m = cfg.size();
    ContractionResult out;
    out.direct = rate_eval(matrix_B1(g, cfg), y);

    const auto aug = append_north_pole(cfg);
    const auto b2 = matrix_B2(g, aug);
    Eigen::VectorXd a(m + 1), b = Eigen::VectorXd::Ones(m + 1);
    a << y, 0.0;
    auto objective = [&](double z) { return rate_eval(b2, a + z * b); };

    // Null-space component of the direction 1: if nonzero, at most one z is feasible.
    Eigen::VectorXd nb = Eigen::VectorXd::Zero(m + 1), na = Eigen::VectorXd::Zero(m + 1);
    for (Eigen::Index i = 0; i < b2.eigenvalues.size(); ++i) {
        if (b2.eigenvalues(i) > b2.rank_threshold() && b2.lambda_max > 0.0) continue;
        const auto v = b2.eigenvectors.col(i);
        nb += v.dot(b) * v;
        na += v.dot(a) * v;
    }
    if (nb.norm() > 1e-10 * b.norm()) {
        out.z_star = -na.dot(nb) / nb.squaredNorm();
        out.contracted = objective(out.z_star);
    } else {
        double radius = std::max(10.0 * y.norm(), 1.0);
        const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
        for (int expand = 0; expand < 8; ++expand) {
            double lo = -radius, hi = radius;
            double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
            double f1 = objective(x1).value, f2 = objective(x2).value;
            int it = 0;
            for (; it < 200 && hi - lo > 1e-12 * radius; ++it) {
                if (f1 <= f2) {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - phi * (hi - lo);
                    f1 = objective(x1).value;
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + phi * (hi - lo);
                    f2 = objective(x2).value;
                }
            }
            out.iterations += it;
            double z = 0.5 * (lo + hi);
            const double step = std::max(1e-3 * radius, 1e-6);
            const double fm = objective(z - step).value, f0 = objective(z).value, fp = objective(z + step).value;
            const double curvature = fm - 2.0 * f0 + fp;
            if (std::isfinite(curvature) && curvature > 0.0) z -= 0.5 * step * (fp - fm) / curvature;
            out.z_star = z;
            if (std::abs(z) < 0.99 * radius) break;
            radius *= 10.0;
            if (expand == 7) {
                out.converged = false;
                out.diagnostic = "minimizer escaped the search bracket";
            }
        }
        out.contracted = objective(out.z_star);
    }
    if (out.direct.finite() && out.contracted.finite())
        out.gap = std::abs(out.direct.value - out.contracted.value);
    else
        out.gap = out.direct.finite() == out.contracted.finite() ? 0.0 : std::numeric_limits<double>::infinity();
    return out;
}

enum class LimitKernelKind { b1, b2 };

/// Continuous limit kernels of the low-disorder regime:
///   b1(z, w) = L(<z,N>) + L(<w,N>) - L(<z,w>)
///   b2(z, w) = avg(L) - L(<z,w>)
/// The sparse profile is discontinuous, so no such kernel exists there.
inline double limit_kernel(LimitKernelKind which, const Profile& g, const Eigen::VectorXd& z,
                           const Eigen::VectorXd& w, int dim) {
    if (g.kind != ProfileKind::L)
        fail(ErrorKind::domain,
             "limit kernels exist only for the low-disorder profile; the sparse profile jumps from h to 0 at "
             "the symmetry set, so no continuous limit covariance exists");
    if (z.size() != dim + 1 || w.size() != dim + 1) fail(ErrorKind::domain, "points must have d+1 coordinates");
    const Eigen::VectorXd zn = z.normalized(), wn = w.normalized();
    const double zw = std::clamp(zn.dot(wn), -1.0, 1.0);
    if (which == LimitKernelKind::b1) return g(zn(dim)) + g(wn(dim)) - g(zw);
    return limit_mean_deficit(g, dim) - g(zw);
}

}  // namespace dka
