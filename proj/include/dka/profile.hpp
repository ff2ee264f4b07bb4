#pragma once

// Evaluable limit profiles g (= L or S) for matrix assembly and quadrature.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "errors.hpp"
#include "iteration.hpp"

namespace dka {

struct Profile {
    ProfileKind kind = ProfileKind::L;
    SymmetrySet symmetry = SymmetrySet::one;
    /// Plateau of the two-valued sparse profile.
    std::optional<double> h;
    /// Values off the symmetry set.
    std::function<double(double)> fn;
    std::string origin;

    double operator()(double t) const {
        if (in_symmetry_set(t, symmetry)) return 0.0;
        return fn(std::clamp(t, -1.0, 1.0));
    }
};

/// Closed form when the kernel has one, otherwise per-point iteration of beta_L(t).
inline Profile low_profile(const Kernel& k, const Tolerances& tol = {}) {
    Profile p;
    p.kind = ProfileKind::L;
    p.symmetry = symmetry_set(k, tol.symmetry);
    if (auto closed = closed_form_low_profile(k)) {
        p.fn = *closed;
        p.origin = "closed-form";
        return p;
    }
    const double kprime = derivative_at_one(k);
    if (!(kprime < 1.0 - tol.regime))
        fail(ErrorKind::domain, "low-disorder profile requires kappa'(1) < 1");
    p.fn = [k, kprime, set = p.symmetry, tol](double t) { return low_profile_point(k, t, kprime, set, tol).value; };
    p.origin = "iterated";
    return p;
}

/// The two-valued sparse limit: 0 on the symmetry set, h elsewhere.
inline Profile sparse_profile(double h, SymmetrySet set) {
    Profile p;
    p.kind = ProfileKind::S;
    p.symmetry = set;
    p.h = h;
    p.fn = [h](double) { return h; };
    p.origin = "two-valued";
    return p;
}

namespace detail {

// Fritsch-Carlson monotone cubic Hermite interpolant.
class Pchip {
public:
    Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
        const std::size_t n = x_.size();
        if (n < 2 || y_.size() != n) fail(ErrorKind::domain, "interpolation needs at least two nodes");
        std::vector<double> h(n - 1), s(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            h[i] = x_[i + 1] - x_[i];
            if (!(h[i] > 0.0)) fail(ErrorKind::domain, "interpolation grid must be strictly increasing");
            s[i] = (y_[i + 1] - y_[i]) / h[i];
        }
        d_.assign(n, 0.0);
        if (n == 2) {
            d_[0] = d_[1] = s[0];
            return;
        }
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (s[i - 1] * s[i] <= 0.0) continue;
            const double w1 = 2.0 * h[i] + h[i - 1], w2 = h[i] + 2.0 * h[i - 1];
            d_[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
        }
        d_[0] = end_slope(h[0], h[1], s[0], s[1]);
        d_[n - 1] = end_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
    }

    double operator()(double t) const {
        const auto it = std::upper_bound(x_.begin(), x_.end(), t);
        std::size_t i = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
        i = std::min(i, x_.size() - 2);
        const double h = x_[i + 1] - x_[i];
        const double u = std::clamp((t - x_[i]) / h, 0.0, 1.0);
        const double h00 = (1 + 2 * u) * (1 - u) * (1 - u), h10 = u * (1 - u) * (1 - u);
        const double h01 = u * u * (3 - 2 * u), h11 = u * u * (u - 1);
        return h00 * y_[i] + h10 * h * d_[i] + h01 * y_[i + 1] + h11 * h * d_[i + 1];
    }

    [[nodiscard]] double front() const { return x_.front(); }
    [[nodiscard]] double back() const { return x_.back(); }

private:
    static double end_slope(double h0, double h1, double s0, double s1) {
        double d = ((2 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
        if (d * s0 <= 0.0) return 0.0;
        if (s0 * s1 <= 0.0 && std::abs(d) > std::abs(3 * s0)) return 3 * s0;
        return d;
    }

    std::vector<double> x_, y_, d_;
};

}  // namespace detail

/// Interpolated profile from a computed table. Nodes in the symmetry set are
/// dropped for sparse tables so the interpolant never blends the plateau with 0.
inline Profile profile_from_table(const ProfileTable& table) {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < table.grid.size(); ++i) {
        if (table.kind == ProfileKind::S && in_symmetry_set(table.grid[i], table.symmetry)) continue;
        x.push_back(table.grid[i]);
        y.push_back(table.values[i]);
    }
    Profile p;
    p.kind = table.kind;
    p.symmetry = table.symmetry;
    p.h = table.h;
    p.origin = "table";
    if (x.size() == 1) {
        const double v = y[0];
        p.fn = [v](double) { return v; };
        return p;
    }
    auto interp = std::make_shared<const detail::Pchip>(std::move(x), std::move(y));
    p.fn = [interp](double t) { return (*interp)(std::clamp(t, interp->front(), interp->back())); };
    return p;
}

/// g(t) with a domain check; exactly 0 on the symmetry set.
inline double profile_lookup(const Profile& p, double t) {
    if (!(t >= -1.0 - 1e-12 && t <= 1.0 + 1e-12))
        fail(ErrorKind::domain, "profile lookup outside [-1, 1]: " + detail::fmt_param(t));
    return p(t);
}

}  // namespace dka
