#pragma once

// Point configurations on S^d and the zonal (Gegenbauer) side of isotropic
// covariances: normalized Gegenbauer polynomials, Gauss-Jacobi projections
// and the mean coefficient D_{0,L} of kappa_L.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "iteration.hpp"
#include "kernels.hpp"
#include "profile.hpp"
#include "quadrature.hpp"
#include "rng.hpp"

namespace dka {

struct PointConfig {
    int dim = 2;
    /// m x (d+1), unit rows.
    Eigen::MatrixXd points;
    Eigen::MatrixXd gram;
    std::vector<bool> north_flags;
    std::vector<bool> south_flags;
    std::vector<std::pair<int, int>> antipodal_pairs;

    [[nodiscard]] int size() const { return static_cast<int>(points.rows()); }

    /// <x_i, N> with N the last coordinate axis.
    [[nodiscard]] double north_inner(int i) const { return points(i, dim); }
};

inline constexpr double kPoleTolerance = 1e-12;

/// Normalizes rows, builds the Gram matrix and the North/South/antipodal incidences.
inline PointConfig make_config(int dim, const Eigen::MatrixXd& rows) {
    if (dim < 1) fail(ErrorKind::config, "sphere dimension must be >= 1");
    if (rows.cols() != dim + 1)
        fail(ErrorKind::config, "points on S^" + std::to_string(dim) + " need " + std::to_string(dim + 1) +
                                    " coordinates, got " + std::to_string(rows.cols()));
    PointConfig cfg;
    cfg.dim = dim;
    cfg.points = rows;
    const auto m = rows.rows();
    for (Eigen::Index i = 0; i < m; ++i) {
        const double norm = rows.row(i).norm();
        if (!(norm > 0.0) || !std::isfinite(norm))
            fail(ErrorKind::config, "point " + std::to_string(i) + " is zero or not finite");
        cfg.points.row(i) /= norm;
    }
    cfg.gram = cfg.points * cfg.points.transpose();
    for (Eigen::Index i = 0; i < m; ++i) {
        cfg.gram(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double g = std::clamp(0.5 * (cfg.gram(i, j) + cfg.gram(j, i)), -1.0, 1.0);
            cfg.gram(i, j) = cfg.gram(j, i) = g;
            if (g >= 1.0 - kPoleTolerance)
                fail(ErrorKind::config,
                     "points " + std::to_string(j) + " and " + std::to_string(i) + " coincide");
            if (g <= -1.0 + kPoleTolerance)
                cfg.antipodal_pairs.emplace_back(static_cast<int>(j), static_cast<int>(i));
        }
    }
    std::sort(cfg.antipodal_pairs.begin(), cfg.antipodal_pairs.end());
    cfg.north_flags.resize(static_cast<std::size_t>(m));
    cfg.south_flags.resize(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        const double z = cfg.points(i, dim);
        cfg.north_flags[static_cast<std::size_t>(i)] = z >= 1.0 - kPoleTolerance;
        cfg.south_flags[static_cast<std::size_t>(i)] = z <= -1.0 + kPoleTolerance;
    }
    return cfg;
}

inline PointConfig make_config(int dim, const std::vector<std::vector<double>>& rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), dim + 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != static_cast<std::size_t>(dim + 1))
            fail(ErrorKind::config, "point " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                                        " coordinates, expected " + std::to_string(dim + 1));
        for (int j = 0; j <= dim; ++j) m(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    }
    return make_config(dim, m);
}

inline Eigen::VectorXd north_pole(int dim) {
    Eigen::VectorXd n = Eigen::VectorXd::Zero(dim + 1);
    n(dim) = 1.0;
    return n;
}

/// The configuration with the North Pole appended as the last point.
inline PointConfig append_north_pole(const PointConfig& cfg) {
    Eigen::MatrixXd rows(cfg.points.rows() + 1, cfg.dim + 1);
    rows.topRows(cfg.points.rows()) = cfg.points;
    rows.row(cfg.points.rows()) = north_pole(cfg.dim).transpose();
    return make_config(cfg.dim, rows);
}

/// m i.i.d. uniform points (normalized Gaussian vectors), reproducible from seed.
inline PointConfig uniform_points(int dim, int m, std::uint64_t seed) {
    if (m < 1) fail(ErrorKind::config, "need at least one point");
    if (dim < 1) fail(ErrorKind::config, "sphere dimension must be >= 1");
    NormalStream rng(seed, 0x5048455245ULL);
    Eigen::MatrixXd rows(m, dim + 1);
    for (int i = 0; i < m; ++i) {
        double norm = 0.0;
        do {
            for (int j = 0; j <= dim; ++j) rows(i, j) = rng.normal();
            norm = rows.row(i).norm();
        } while (norm < 1e-8);
    }
    return make_config(dim, rows);
}

/// Normalized Gegenbauer polynomial G_{l,d} with G_{l,d}(1) = 1.
///
/// Recurrence in normalized form, lambda = (d-1)/2:
///   G_{l+1}(t) = (2(l + lambda) t G_l(t) - l G_{l-1}(t)) / (l + 2 lambda)
inline double gegenbauer(int l, int dim, double t) {
    if (l < 0) fail(ErrorKind::parameter_domain, "Gegenbauer degree must be >= 0");
    if (l == 0) return 1.0;
    const double lambda = 0.5 * (dim - 1);
    double prev = 1.0, cur = t;
    for (int n = 1; n < l; ++n) {
        const double next = (2.0 * (n + lambda) * t * cur - n * prev) / (n + 2.0 * lambda);
        prev = cur;
        cur = next;
    }
    return cur;
}

inline constexpr int kDefaultJacobiOrder = 256;

/// Weighted average of f against (1-t^2)^(d/2-1).
template <class F>
double weighted_average(F&& f, int dim, int order = kDefaultJacobiOrder) {
    const auto& rule = gauss_gegenbauer(order, dim);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < rule.size(); ++i) {
        num += rule.weights[i] * f(rule.nodes[i]);
        den += rule.weights[i];
    }
    return num / den;
}

/// Coefficient of G_{l,d} in the Gegenbauer expansion of f.
template <class F>
double spectral_coefficient(F&& f, int l, int dim, int order = kDefaultJacobiOrder) {
    const auto& rule = gauss_gegenbauer(order, dim);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < rule.size(); ++i) {
        const double g = gegenbauer(l, dim, rule.nodes[i]);
        num += rule.weights[i] * f(rule.nodes[i]) * g;
        den += rule.weights[i] * g * g;
    }
    if (!std::isfinite(num) || !std::isfinite(den) || den <= 0.0)
        fail(ErrorKind::numeric, "spectral projection produced a non-finite value");
    return num / den;
}

struct SpectralCoeffs {
    int dim = 2;
    std::vector<double> coeffs;  // D_l, l = 0..l_max
    double weight_mass = 0.0;

    [[nodiscard]] double partial_sum(double t) const {
        double acc = 0.0;
        for (std::size_t l = 0; l < coeffs.size(); ++l) acc += coeffs[l] * gegenbauer(static_cast<int>(l), dim, t);
        return acc;
    }
};

inline SpectralCoeffs spectral_coeffs(const Kernel& k, int dim, int l_max, long depth = 1,
                                      int order = kDefaultJacobiOrder) {
    SpectralCoeffs sc;
    sc.dim = dim;
    sc.weight_mass = weight_integral(dim);
    const auto& rule = gauss_gegenbauer(order, dim);
    std::vector<double> vals(rule.size());
    for (std::size_t i = 0; i < rule.size(); ++i) vals[i] = iterate_kernel(k, rule.nodes[i], depth);
    sc.coeffs.resize(static_cast<std::size_t>(l_max) + 1);
    for (int l = 0; l <= l_max; ++l) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < rule.size(); ++i) {
            const double g = gegenbauer(l, dim, rule.nodes[i]);
            num += rule.weights[i] * vals[i] * g;
            den += rule.weights[i] * g * g;
        }
        sc.coeffs[static_cast<std::size_t>(l)] = num / den;
    }
    return sc;
}

struct MeanCoefficient {
    double value = 0.0;
    int order = 0;
    bool converged = false;
};

namespace detail {

// Gauss-Jacobi averages at 256, 512, 1024, 2048 nodes until two successive
// orders agree to 1e-9. The integrands of deep sparse kernels carry boundary
// layers of width O(1/L) at t = +-1.
template <class F>
MeanCoefficient escalating_average(F&& f, int dim) {
    MeanCoefficient out;
    double prev = weighted_average(f, dim, 256);
    out.value = prev;
    out.order = 256;
    for (int order = 512; order <= 2048; order *= 2) {
        const double cur = weighted_average(f, dim, order);
        out.value = cur;
        out.order = order;
        if (std::abs(cur - prev) <= 1e-9) {
            out.converged = true;
            return out;
        }
        prev = cur;
    }
    return out;
}

}  // namespace detail

/// D_{0,L}: weighted average of kappa_L.
inline MeanCoefficient mean_coefficient(const Kernel& k, long depth, int dim) {
    return detail::escalating_average([&](double t) { return iterate_kernel(k, t, depth); }, dim);
}

/// 1 - D_{0,L}, averaged in deficit form so it stays accurate when D_{0,L} is near 1.
inline MeanCoefficient mean_deficit(const Kernel& k, long depth, int dim) {
    return detail::escalating_average([&](double t) { return depth_deficit(k, t, depth); }, dim);
}

/// v_L (1 - D_{0,L}) for a supplied speed v_L.
inline double rescaled_mean_deficit(const Kernel& k, long depth, int dim, double speed) {
    return speed * mean_deficit(k, depth, dim).value;
}

/// lim v_L (1 - D_{0,L}) = weighted average of the limit profile. The sparse
/// profile equals h off a null set, so its average is h.
inline double limit_mean_deficit(const Profile& profile, int dim) {
    if (profile.kind == ProfileKind::S) {
        if (!profile.h) fail(ErrorKind::domain, "sparse profile without plateau value");
        return *profile.h;
    }
    return weighted_average([&](double t) { return profile(t); }, dim);
}

/// Table version. Uses the table's own quadrature weights when it was computed
/// on a Gauss-Jacobi grid, otherwise interpolates.
inline double limit_mean_deficit(const ProfileTable& table, int dim) {
    if (!table.all_converged())
        fail(ErrorKind::numeric, "profile has non-converged points inside the quadrature support");
    if (table.kind == ProfileKind::S) {
        if (table.h) return *table.h;
        return limit_mean_deficit(profile_from_table(table), dim);
    }
    if (table.weights) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < table.grid.size(); ++i) {
            num += (*table.weights)[i] * table.values[i];
            den += (*table.weights)[i];
        }
        return num / den;
    }
    return limit_mean_deficit(profile_from_table(table), dim);
}

/// Low-disorder profile tabulated on the Gauss-Jacobi nodes for dimension d.
inline ProfileTable profile_on_quadrature_grid(const Kernel& k, int dim, int order = kDefaultJacobiOrder,
                                               const Tolerances& tol = {}) {
    const auto& rule = gauss_gegenbauer(order, dim);
    auto table = limit_profile_low(k, rule.nodes, tol);
    table.weights = rule.weights;
    return table;
}

}  // namespace dka
