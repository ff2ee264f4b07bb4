#pragma once

// Depth iteration kappa_L = kappa o ... o kappa, regime classification and the
// deep-limit profiles
//     low disorder (kappa'(1) < 1):  L(t) = lim kappa'(1)^{-L} (1 - kappa_L(t))
//     sparse       (kappa'(1) = 1):  S(t) = lim L^{1/(rho-1)} (1 - kappa_L(t))
// plus the attracting fixed point t* of the high-disorder regime.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "kernels.hpp"
#include "parallel.hpp"

namespace dka {

enum class Regime { low_disorder, sparse, high_disorder };

inline const char* to_string(Regime r) {
    switch (r) {
        case Regime::low_disorder: return "low-disorder";
        case Regime::sparse: return "sparse";
        case Regime::high_disorder: return "high-disorder";
    }
    return "?";
}

/// The set {t : kappa(t) = 1}: either {1} or {-1, 1}.
enum class SymmetrySet { one, plus_minus_one };

inline const char* to_string(SymmetrySet s) { return s == SymmetrySet::one ? "{1}" : "{-1,1}"; }

struct Tolerances {
    double regime = 1e-9;     // |kappa'(1) - 1| below this is sparse
    double symmetry = 1e-10;  // |kappa(-1) - 1| below this puts -1 in the symmetry set
    double pole = 1e-12;      // 1 - |t| below this counts as t = +-1
    long max_depth = 1'000'000;
    double low_profile_rel = 1e-12;
    long sparse_depth = 8192;
    double sparse_deficit_floor = 1e-10;
};

/// kappa_L(t) by plain L-fold composition; kappa_0(t) = t.
inline double iterate_kernel(const Kernel& k, double t, long depth) {
    double x = std::clamp(t, -1.0, 1.0);
    for (long l = 0; l < depth; ++l) x = k(x);
    return x;
}

/// 1 - kappa_L(1 - delta), iterated in deficit form.
inline double iterate_deficit(const Kernel& k, double delta, long depth) {
    double d = std::clamp(delta, 0.0, 2.0);
    for (long l = 0; l < depth && d != 0.0; ++l) d = k.deficit(d);
    return d;
}

/// 1 - kappa_L(t) without cancellation.
inline double depth_deficit(const Kernel& k, double t, long depth) { return iterate_deficit(k, 1.0 - t, depth); }

inline bool in_symmetry_set(double t, SymmetrySet set, double pole_tol = 1e-12) {
    if (1.0 - t <= pole_tol) return true;
    return set == SymmetrySet::plus_minus_one && 1.0 + t <= pole_tol;
}

inline SymmetrySet symmetry_set(const Kernel& k, double tol = 1e-10) {
    return std::abs(k(-1.0) - 1.0) <= tol ? SymmetrySet::plus_minus_one : SymmetrySet::one;
}

struct RegularityFit {
    double c = 0.0;
    double rho = 0.0;
    double r_squared = 0.0;
    std::vector<double> steps;      // 1 - t
    std::vector<double> residuals;  // kappa'(1)(1-t) - (1 - kappa(t))
    std::vector<double> fit_errors; // log|residual| minus fitted line
};

/// Least-squares fit of log|kappa'(1)(1-t) - (1-kappa(t))| = log|c| + rho log(1-t)
/// over 1-t log-spaced in [1e-6, 1e-2].
inline RegularityFit estimate_regularity(const Kernel& k, double kprime, int points = 41) {
    constexpr double floor = 1e-14;
    RegularityFit fit;
    std::vector<double> xs, ys;
    int positive = 0, negative = 0;
    for (int i = 0; i < points; ++i) {
        const double u = std::pow(10.0, -6.0 + 4.0 * i / (points - 1));
        const double r = kprime * u - k.deficit(u);
        fit.steps.push_back(u);
        fit.residuals.push_back(r);
        if (std::abs(r) <= floor) continue;
        (r > 0.0 ? positive : negative)++;
        xs.push_back(std::log(u));
        ys.push_back(std::log(std::abs(r)));
    }
    if (xs.size() < 3)
        fail(ErrorKind::assumption_not_detectable,
             "kappa'(1)(1-t) matches 1-kappa(t) to machine precision near t=1; (c, rho) not detectable");

    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    fit.rho = sxy / sxx;
    const double intercept = my - fit.rho * mx;
    fit.c = (positive >= negative ? 1.0 : -1.0) * std::exp(intercept);
    double sse = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double e = ys[i] - (intercept + fit.rho * xs[i]);
        fit.fit_errors.push_back(e);
        sse += e * e;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    return fit;
}

/// t* in [0, 1) with kappa(t*) = t*, for kappa'(1) > 1.
inline double fixed_point(const Kernel& k) {
    double lo = 0.0, hi = 1.0 - 1e-12;
    const double g_lo = k(lo);
    // Odd activations give kappa(0) = 0 only up to quadrature rounding.
    if (std::abs(g_lo) <= 1e-14) return 0.0;
    const double g_hi = k(hi) - hi;
    if (!(g_lo > 0.0 && g_hi < 0.0))
        fail(ErrorKind::fixed_point_not_found,
             "kappa(t) - t has no sign change on [0, 1); is the kernel really high-disorder?");
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (k(mid) - mid > 0.0 ? lo : hi) = mid;
    }
    return std::abs(k(lo) - lo) <= std::abs(k(hi) - hi) ? lo : hi;
}

struct RegimeReport {
    double kprime1 = 0.0;
    Regime regime = Regime::low_disorder;
    std::optional<SymmetrySet> symmetry;
    /// (c, rho) used downstream: closed form when the kernel knows it, else the fit.
    std::optional<double> c;
    std::optional<double> rho;
    std::string regularity_source;  // "closed-form", "fit" or empty
    std::optional<RegularityFit> fit;
    std::string fit_failure;
    std::optional<double> h;  // sparse plateau (c (rho-1))^{-1/(rho-1)}
    std::optional<double> t_star;
    double kappa_at_minus_one = 0.0;
    /// kappa(-1) = -1: kappa_L(-1) alternates and is reported per parity only.
    bool oscillatory_boundary = false;
    bool affine_warning = false;
};

inline double sparse_plateau(double c, double rho) { return std::pow(c * (rho - 1.0), -1.0 / (rho - 1.0)); }

inline RegimeReport classify_regime(const Kernel& k, const Tolerances& tol = {}) {
    RegimeReport rep;
    rep.kprime1 = derivative_at_one(k);
    rep.affine_warning = k.affine();
    rep.kappa_at_minus_one = k(-1.0);
    if (std::abs(rep.kprime1 - 1.0) <= tol.regime)
        rep.regime = Regime::sparse;
    else
        rep.regime = rep.kprime1 < 1.0 ? Regime::low_disorder : Regime::high_disorder;

    if (rep.regime == Regime::high_disorder) {
        rep.t_star = fixed_point(k);
        rep.oscillatory_boundary = std::abs(rep.kappa_at_minus_one + 1.0) <= tol.symmetry;
        return rep;
    }

    rep.symmetry = symmetry_set(k, tol.symmetry);
    try {
        rep.fit = estimate_regularity(k, rep.kprime1);
    } catch (const Error& e) {
        rep.fit_failure = e.what();
    }
    if (auto exact = k.known_regularity()) {
        rep.c = exact->c;
        rep.rho = exact->rho;
        rep.regularity_source = "closed-form";
    } else if (rep.fit) {
        rep.c = rep.fit->c;
        rep.rho = rep.fit->rho;
        rep.regularity_source = "fit";
    }
    if (rep.regime == Regime::sparse && rep.c && rep.rho) {
        if (*rep.c <= 0.0 || *rep.rho <= 1.0)
            fail(ErrorKind::inconsistency, "sparse regime requires c > 0 and rho > 1; got c=" +
                                               detail::fmt_param(*rep.c) + " rho=" + detail::fmt_param(*rep.rho));
        rep.h = sparse_plateau(*rep.c, *rep.rho);
    }
    return rep;
}

enum class ProfileKind { L, S };

inline const char* to_string(ProfileKind p) { return p == ProfileKind::L ? "L" : "S"; }

struct ProfileTable {
    ProfileKind kind = ProfileKind::L;
    std::vector<double> grid;
    std::vector<double> values;
    std::vector<long> converged_at;
    std::vector<bool> converged;
    SymmetrySet symmetry = SymmetrySet::one;
    std::optional<double> h;
    /// Quadrature weights when the grid is a Gauss-Jacobi rule (see profile_on_quadrature_grid).
    std::optional<std::vector<double>> weights;
    /// Points where beta_L increased or exceeded 1 - t beyond round-off.
    long invariant_violations = 0;

    [[nodiscard]] bool all_converged() const {
        return std::all_of(converged.begin(), converged.end(), [](bool b) { return b; });
    }
};

/// n Chebyshev-Lobatto points on [-1, 1], exactly symmetric with exact endpoints.
inline std::vector<double> chebyshev_grid(int n = 201) {
    if (n < 2) fail(ErrorKind::parameter_domain, "grid needs at least two points");
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = -std::cos(std::numbers::pi * i / (n - 1));
    for (int i = 0; i < n / 2; ++i) g[static_cast<std::size_t>(n - 1 - i)] = -g[static_cast<std::size_t>(i)];
    g.front() = -1.0;
    g.back() = 1.0;
    if (n % 2 == 1) g[static_cast<std::size_t>(n / 2)] = 0.0;
    return g;
}

struct LowProfilePoint {
    double value = 0.0;
    long depth = 0;
    bool converged = true;
    bool violation = false;
};

/// beta_L(t) = (1 - kappa_L(t)) / kappa'(1)^L iterated until it settles.
inline LowProfilePoint low_profile_point(const Kernel& k, double t, double kprime, SymmetrySet set,
                                         const Tolerances& tol = {}) {
    LowProfilePoint p;
    if (in_symmetry_set(t, set, tol.pole)) return p;
    double delta = 1.0 - t;
    double beta = delta;
    double scale = 1.0;
    const double bound = 1.0 - t;
    for (long l = 1; l <= tol.max_depth; ++l) {
        delta = k.deficit(delta);
        scale *= kprime;
        const double next = delta / scale;
        if (next > beta * (1.0 + 1e-12) + 1e-300 || next > bound * (1.0 + 1e-12)) p.violation = true;
        const bool done = std::abs(next - beta) <= tol.low_profile_rel * std::max(1.0, next) || delta == 0.0 ||
                          delta < k.deficit_floor();
        beta = next;
        if (done) {
            p.value = beta;
            p.depth = l;
            return p;
        }
    }
    p.value = beta;
    p.depth = tol.max_depth;
    p.converged = false;
    return p;
}

inline ProfileTable limit_profile_low(const Kernel& k, const std::vector<double>& grid, const Tolerances& tol = {}) {
    const double kprime = derivative_at_one(k);
    if (!(kprime < 1.0 - tol.regime))
        fail(ErrorKind::domain, "low-disorder profile requires kappa'(1) < 1, got " + detail::fmt_param(kprime));
    ProfileTable table;
    table.kind = ProfileKind::L;
    table.symmetry = symmetry_set(k, tol.symmetry);
    table.grid = grid;
    const auto n = grid.size();
    table.values.resize(n);
    table.converged_at.resize(n);
    std::vector<char> conv(n), viol(n);
    parallel_for(n, [&](std::size_t i) {
        const auto p = low_profile_point(k, grid[i], kprime, table.symmetry, tol);
        table.values[i] = p.value;
        table.converged_at[i] = p.depth;
        conv[i] = p.converged;
        viol[i] = p.violation;
    });
    table.converged.assign(conv.begin(), conv.end());
    table.invariant_violations = std::count(viol.begin(), viol.end(), 1);
    return table;
}

struct SparseEstimate {
    double value = 0.0;  // Stolz-Cesaro extrapolation of L^{1/(rho-1)}(1 - kappa_L(t))
    double plain = 0.0;  // L^{1/(rho-1)}(1 - kappa_L(t)) itself
    long depth = 0;
};

/// The sparse profile at one t. (1 - kappa_L)^{-(rho-1)} grows like c(rho-1) L,
/// so its slope between depths L/2 and L estimates c(rho-1) and hence
/// S(t) = slope^{-1/(rho-1)}. The depth is halved while 1 - kappa_L sits below
/// the precision floor.
inline SparseEstimate sparse_profile_point(const Kernel& k, double t, double rho, SymmetrySet set,
                                           long depth, const Tolerances& tol = {}) {
    SparseEstimate est;
    if (in_symmetry_set(t, set, tol.pole)) return est;
    const double e = rho - 1.0;
    long L = std::max<long>(depth, 4);
    for (;;) {
        const long L0 = L / 2;
        const double d0 = depth_deficit(k, t, L0);
        const double d1 = iterate_deficit(k, d0, L - L0);
        const double p0 = std::pow(d0, -e), p1 = std::pow(d1, -e);
        const bool ok = d1 >= tol.sparse_deficit_floor && std::isfinite(p0) && std::isfinite(p1);
        if (ok || L <= 4) {
            const double slope = (p1 - p0) / static_cast<double>(L - L0);
            est.value = std::pow(slope, -1.0 / e);
            est.plain = std::pow(static_cast<double>(L), 1.0 / e) * d1;
            est.depth = L;
            return est;
        }
        L /= 2;
    }
}

inline ProfileTable limit_profile_sparse(const Kernel& k, const std::vector<double>& grid, double rho,
                                         std::optional<double> h = std::nullopt, const Tolerances& tol = {}) {
    if (!(rho > 1.0)) fail(ErrorKind::parameter_domain, "sparse profile requires rho > 1");
    ProfileTable table;
    table.kind = ProfileKind::S;
    table.symmetry = symmetry_set(k, tol.symmetry);
    table.grid = grid;
    table.h = h;
    const auto n = grid.size();
    table.values.resize(n);
    table.converged_at.resize(n);
    parallel_for(n, [&](std::size_t i) {
        const auto est = sparse_profile_point(k, grid[i], rho, table.symmetry, tol.sparse_depth, tol);
        table.values[i] = est.value;
        table.converged_at[i] = est.depth;
    });
    table.converged.assign(n, true);
    return table;
}

/// Closed-form low-disorder profile where one is known:
/// exponential kernel, gamma > 1: (gamma-1)(1-t^2) / (2(gamma-t^2)).
inline std::optional<std::function<double(double)>> closed_form_low_profile(const Kernel& k) {
    if (k.source() == KernelSource::exponential && k.gamma() && *k.gamma() > 1.0) {
        const double g = *k.gamma();
        return [g](double t) { return (g - 1.0) * (1.0 - t * t) / (2.0 * (g - t * t)); };
    }
    return std::nullopt;
}

}  // namespace dka
