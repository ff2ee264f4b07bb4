#pragma once

// Gauss rules built from three-term recurrences.
//
// Small rules (Laguerre, Legendre, Hermite) use Golub-Welsch directly. The
// Gegenbauer family (weight (1-t^2)^(d/2-1) on [-1,1]) goes up to a few
// thousand nodes, so it takes eigenvalues only, polishes them with Newton on
// the orthonormal recurrence and forms Christoffel weights in O(n^2).

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace dka {

struct GaussRule {
    std::vector<double> nodes;
    std::vector<double> weights;

    [[nodiscard]] std::size_t size() const noexcept { return nodes.size(); }

    template <class F>
    [[nodiscard]] double integrate(F&& f) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
        return acc;
    }
};

namespace detail {

inline GaussRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& offdiag, double mu0) {
    const auto n = diag.size();
    GaussRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    if (n == 1) {
        rule.nodes[0] = diag(0);
        rule.weights[0] = mu0;
        return rule;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, offdiag, Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success) fail(ErrorKind::numeric, "Golub-Welsch eigensolver did not converge");
    for (Eigen::Index i = 0; i < n; ++i) {
        const double v0 = es.eigenvectors()(0, i);
        rule.nodes[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
        rule.weights[static_cast<std::size_t>(i)] = mu0 * v0 * v0;
    }
    return rule;
}

}  // namespace detail

/// Gauss-Legendre on [-1,1].
inline GaussRule gauss_legendre(int n) {
    if (n < 1) fail(ErrorKind::parameter_domain, "Gauss-Legendre order must be positive");
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd off(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) off(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
    return detail::golub_welsch(diag, off, 2.0);
}

/// Gauss-Laguerre for the weight e^{-u} on [0, inf).
inline GaussRule gauss_laguerre(int n) {
    if (n < 1) fail(ErrorKind::parameter_domain, "Gauss-Laguerre order must be positive");
    Eigen::VectorXd diag(n);
    Eigen::VectorXd off(std::max(n - 1, 0));
    for (int k = 0; k < n; ++k) diag(k) = 2.0 * k + 1.0;
    for (int k = 1; k < n; ++k) off(k - 1) = k;
    return detail::golub_welsch(diag, off, 1.0);
}

/// Gauss-Hermite for the standard normal density (probabilists' convention, weights sum to 1).
inline GaussRule gauss_hermite(int n) {
    if (n < 1) fail(ErrorKind::parameter_domain, "Gauss-Hermite order must be positive");
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd off(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) off(k - 1) = std::sqrt(static_cast<double>(k));
    return detail::golub_welsch(diag, off, 1.0);
}

/// Total mass of (1-t^2)^(d/2-1) on [-1,1], i.e. sqrt(pi) Gamma(d/2) / Gamma((d+1)/2).
inline double weight_integral(int dim) {
    if (dim < 1) fail(ErrorKind::parameter_domain, "sphere dimension must be >= 1");
    const double half = 0.5 * dim;
    return std::sqrt(std::numbers::pi) * std::exp(std::lgamma(half) - std::lgamma(half + 0.5));
}

namespace detail {

// Monic recurrence coefficient beta_k for the symmetric Jacobi weight (1-t^2)^a.
inline double gegenbauer_beta(int k, double a) {
    if (k == 1 && std::abs(2.0 * a + 1.0) < 1e-14) return 0.5;  // Chebyshev first kind
    const double kk = k;
    return kk * (kk + 2.0 * a) / ((2.0 * kk + 2.0 * a + 1.0) * (2.0 * kk + 2.0 * a - 1.0));
}

inline GaussRule build_gegenbauer_rule(int n, int dim) {
    const double a = 0.5 * dim - 1.0;
    const double mu0 = weight_integral(dim);
    std::vector<double> sqrt_beta(static_cast<std::size_t>(n) + 1, 0.0);
    for (int k = 1; k <= n; ++k) sqrt_beta[static_cast<std::size_t>(k)] = std::sqrt(gegenbauer_beta(k, a));

    GaussRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    if (n == 1) {
        rule.nodes[0] = 0.0;
        rule.weights[0] = mu0;
        return rule;
    }

    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd off(n - 1);
    for (int k = 1; k < n; ++k) off(k - 1) = sqrt_beta[static_cast<std::size_t>(k)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) fail(ErrorKind::numeric, "Gauss-Jacobi eigenvalue solve did not converge");

    const double p0 = 1.0 / std::sqrt(mu0);
    for (int i = 0; i < n; ++i) {
        double x = es.eigenvalues()(i);
        for (int newton = 0; newton < 3; ++newton) {
            double p_prev = 0.0, p = p0;
            double d_prev = 0.0, dp = 0.0;
            for (int k = 0; k < n; ++k) {
                const double sb_next = sqrt_beta[static_cast<std::size_t>(k) + 1];
                const double sb = sqrt_beta[static_cast<std::size_t>(k)];
                const double p_next = (x * p - sb * p_prev) / sb_next;
                const double d_next = (p + x * dp - sb * d_prev) / sb_next;
                p_prev = p;
                p = p_next;
                d_prev = dp;
                dp = d_next;
            }
            if (dp == 0.0) break;
            const double step = p / dp;
            x -= step;
            if (std::abs(step) < 1e-17) break;
        }
        // Christoffel weight at the polished node.
        double p_prev = 0.0, p = p0;
        double sum_sq = p * p;
        for (int k = 0; k + 1 < n; ++k) {
            const double p_next = (x * p - sqrt_beta[static_cast<std::size_t>(k)] * p_prev) /
                                  sqrt_beta[static_cast<std::size_t>(k) + 1];
            p_prev = p;
            p = p_next;
            sum_sq += p * p;
        }
        rule.nodes[static_cast<std::size_t>(i)] = x;
        rule.weights[static_cast<std::size_t>(i)] = 1.0 / sum_sq;
    }
    // Symmetrize: the weight is even, so nodes come in +/- pairs.
    for (int i = 0; i < n / 2; ++i) {
        const auto lo = static_cast<std::size_t>(i);
        const auto hi = static_cast<std::size_t>(n - 1 - i);
        const double x = 0.5 * (rule.nodes[hi] - rule.nodes[lo]);
        const double w = 0.5 * (rule.weights[hi] + rule.weights[lo]);
        rule.nodes[lo] = -x;
        rule.nodes[hi] = x;
        rule.weights[lo] = rule.weights[hi] = w;
    }
    if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
    return rule;
}

}  // namespace detail

/// Gauss-Jacobi rule with alpha = beta = d/2 - 1. Rules are cached per (n, d);
/// the returned reference stays valid for the lifetime of the process.
inline const GaussRule& gauss_gegenbauer(int n, int dim) {
    if (n < 1) fail(ErrorKind::parameter_domain, "Gauss-Jacobi order must be positive");
    if (dim < 1) fail(ErrorKind::parameter_domain, "sphere dimension must be >= 1");
    static std::mutex mutex;
    static std::map<std::pair<int, int>, std::unique_ptr<GaussRule>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{n, dim}];
    if (!slot) slot = std::make_unique<GaussRule>(detail::build_gegenbauer_rule(n, dim));
    return *slot;
}

}  // namespace dka
