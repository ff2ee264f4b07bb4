#pragma once

// Single-layer covariance functions kappa on [-1, 1], normalized so that
// kappa(1) = 1.
//
// Besides kappa itself every Kernel carries a "deficit" map
//     delta -> 1 - kappa(1 - delta),
// evaluated without cancellation where the source allows it. Deep
// compositions push kappa_L(t) to within 1e-13 of 1, and every rescaled
// quantity downstream (profiles, limit covariances, tail curves) is a ratio
// of such deficits, so they are iterated in deficit form.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "quadrature.hpp"

namespace dka {

enum class KernelSource { relu, exponential, linear, hermite_series, quadrature };

inline const char* to_string(KernelSource s) {
    switch (s) {
        case KernelSource::relu: return "builtin-relu";
        case KernelSource::exponential: return "builtin-exponential";
        case KernelSource::linear: return "builtin-linear";
        case KernelSource::hermite_series: return "hermite-series";
        case KernelSource::quadrature: return "quadrature";
    }
    return "?";
}

/// Exact (c, rho) of 1 - kappa(t) = kappa'(1)(1-t) - c(1-t)^rho + o(.) when known in closed form.
struct Regularity {
    double c;
    double rho;
};

enum class ActivationKind { relu, gaussian_exp, linear, custom };

struct ActivationSpec {
    ActivationKind kind = ActivationKind::relu;
    /// Width parameter for gaussian_exp: sigma(x) = exp(-a^2 x^2 / 2).
    double a = 1.0;
    /// Pointwise activation for ActivationKind::custom.
    std::function<double(double)> custom;
    std::string name;
    /// Nodes per axis; 0 selects the default (200 for kinked activations, 64 for gaussian_exp).
    int quadrature_order = 0;

    [[nodiscard]] int effective_order() const {
        if (quadrature_order > 0) return quadrature_order;
        return kind == ActivationKind::gaussian_exp ? 64 : 200;
    }

    [[nodiscard]] std::function<double(double)> function() const {
        switch (kind) {
            case ActivationKind::relu: return [](double x) { return x > 0.0 ? x : 0.0; };
            case ActivationKind::gaussian_exp: {
                const double a2 = a * a;
                return [a2](double x) { return std::exp(-0.5 * a2 * x * x); };
            }
            case ActivationKind::linear: return [](double x) { return x; };
            case ActivationKind::custom: return custom;
        }
        return custom;
    }
};

/// gamma = (2a^2 + 1) / a^4 links the Gaussian-exponential activation width to the closed-form kernel.
inline double exponential_gamma_from_width(double a) {
    const double a2 = a * a;
    return (2.0 * a2 + 1.0) / (a2 * a2);
}

/// Inverse of exponential_gamma_from_width (positive root).
inline double exponential_width_from_gamma(double gamma) {
    return std::sqrt((1.0 + std::sqrt(1.0 + gamma)) / gamma);
}

class Kernel {
public:
    using Fn = std::function<double(double)>;

    Kernel() = default;

    /// kappa(t); t is clamped to [-1, 1] to absorb round-off from inner products.
    double operator()(double t) const { return eval_(std::clamp(t, -1.0, 1.0)); }

    /// 1 - kappa(1 - delta) for delta in [0, 2].
    double deficit(double delta) const { return deficit_(std::clamp(delta, 0.0, 2.0)); }

    [[nodiscard]] KernelSource source() const noexcept { return source_; }
    [[nodiscard]] const std::string& label() const noexcept { return label_; }
    [[nodiscard]] std::optional<double> closed_form_derivative() const noexcept { return kprime_; }
    [[nodiscard]] std::optional<double> gamma() const noexcept { return gamma_; }
    [[nodiscard]] std::optional<Regularity> known_regularity() const noexcept { return regularity_; }
    [[nodiscard]] std::span<const double> series_coeffs() const noexcept { return coeffs_; }
    /// True for series with no coefficient beyond q = 1 (kappa affine).
    [[nodiscard]] bool affine() const noexcept { return affine_; }

    /// Below this deficit the kernel's deficit map is no longer relatively
    /// accurate (0 for closed forms); deep iterations stop there.
    [[nodiscard]] double deficit_floor() const noexcept { return deficit_floor_; }

    /// Exactly even in t (kappa(-t) == kappa(t)) by construction.
    [[nodiscard]] bool structurally_even() const noexcept { return even_; }

    [[nodiscard]] std::string digest() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char ch : label_) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

private:
    friend Kernel builtin_relu();
    friend Kernel builtin_exponential(double);
    friend Kernel builtin_linear();
    friend Kernel kernel_from_hermite(std::vector<double>);
    friend Kernel kernel_from_activation(const ActivationSpec&);

    Fn eval_;
    Fn deficit_;
    KernelSource source_ = KernelSource::linear;
    std::string label_;
    std::optional<double> kprime_;
    std::optional<double> gamma_;
    std::optional<Regularity> regularity_;
    std::vector<double> coeffs_;
    bool affine_ = false;
    double deficit_floor_ = 0.0;
    bool even_ = false;
};

namespace detail {

inline std::string fmt_param(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// sin(x) - x cos(x), series below 0.5 where the two terms nearly cancel.
inline double sin_minus_x_cos(double x) {
    if (x >= 0.5) return std::sin(x) - x * std::cos(x);
    const double x2 = x * x;
    double term = x * x2 / 3.0;  // k = 1
    double sum = term;
    // term_k = (-1)^{k+1} 2k x^{2k+1} / (2k+1)!
    for (int k = 2; k < 30; ++k) {
        term *= -x2 * k / ((k - 1.0) * (2.0 * k) * (2.0 * k + 1.0));
        sum += term;
        if (std::abs(term) < 1e-18 * std::abs(sum)) break;
    }
    return sum;
}

}  // namespace detail

/// Arc-cosine kernel of the ReLU activation.
inline Kernel builtin_relu() {
    Kernel k;
    k.source_ = KernelSource::relu;
    k.label_ = "relu";
    k.eval_ = [](double t) {
        const double s = std::sqrt(std::max(0.0, 1.0 - t * t));
        return (t * (std::numbers::pi - std::acos(t)) + s) / std::numbers::pi;
    };
    k.deficit_ = [](double delta) {
        // t = 1 - delta, theta = arccos t; 1 - kappa = delta - (sin theta - theta cos theta) / pi
        const double theta = 2.0 * std::asin(std::sqrt(0.5 * delta));
        return delta - detail::sin_minus_x_cos(theta) / std::numbers::pi;
    };
    k.kprime_ = 1.0;
    k.regularity_ = Regularity{2.0 * std::numbers::sqrt2 / (3.0 * std::numbers::pi), 1.5};
    return k;
}

/// Kernel of sigma(x) = exp(-a^2 x^2/2) in the gamma parametrization: sqrt(gamma / (gamma + 1 - t^2)).
inline Kernel builtin_exponential(double gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma))
        fail(ErrorKind::parameter_domain, "exponential kernel requires gamma > 0, got " + detail::fmt_param(gamma));
    Kernel k;
    k.source_ = KernelSource::exponential;
    k.label_ = "exponential(gamma=" + detail::fmt_param(gamma) + ")";
    k.eval_ = [gamma](double t) { return std::sqrt(gamma / (gamma + (1.0 - t) * (1.0 + t))); };
    k.deficit_ = [gamma](double delta) {
        const double one_minus_t2 = delta * (2.0 - delta);
        const double denom = gamma + one_minus_t2;
        const double kappa = std::sqrt(gamma / denom);
        return one_minus_t2 / (denom * (1.0 + kappa));
    };
    k.kprime_ = 1.0 / gamma;
    k.gamma_ = gamma;
    k.regularity_ = Regularity{0.5 / gamma + 1.5 / (gamma * gamma), 2.0};
    k.even_ = true;
    return k;
}

/// Identity kernel of the linear activation.
inline Kernel builtin_linear() {
    Kernel k;
    k.source_ = KernelSource::linear;
    k.label_ = "linear";
    k.eval_ = [](double t) { return t; };
    k.deficit_ = [](double delta) { return delta; };
    k.kprime_ = 1.0;
    k.affine_ = true;
    return k;
}

/// Power-series kernel sum_q coeff_q t^q. Coefficients are renormalized to sum to one.
inline Kernel kernel_from_hermite(std::vector<double> coeffs) {
    double sum = 0.0;
    for (double c : coeffs) {
        if (!std::isfinite(c) || c < 0.0)
            fail(ErrorKind::parameter_domain, "Hermite coefficients must be finite and nonnegative");
        sum += c;
    }
    if (!(sum > 0.0)) fail(ErrorKind::degenerate_kernel, "all Hermite coefficients are zero");
    while (!coeffs.empty() && coeffs.back() == 0.0) coeffs.pop_back();
    for (double& c : coeffs) c /= sum;

    Kernel k;
    k.source_ = KernelSource::hermite_series;
    k.label_ = "hermite(";
    double kprime = 0.0;
    bool odd_terms = false;
    for (std::size_t q = 0; q < coeffs.size(); ++q) {
        kprime += static_cast<double>(q) * coeffs[q];
        if (q % 2 == 1 && coeffs[q] != 0.0) odd_terms = true;
        k.label_ += (q ? "," : "") + detail::fmt_param(coeffs[q]);
    }
    k.label_ += ")";
    k.affine_ = coeffs.size() <= 2;
    k.even_ = !odd_terms;
    k.kprime_ = kprime;
    k.coeffs_ = coeffs;

    auto shared = std::make_shared<const std::vector<double>>(std::move(coeffs));
    k.eval_ = [shared](double t) {
        const auto& c = *shared;
        double acc = 0.0;
        for (std::size_t q = c.size(); q-- > 0;) acc = acc * t + c[q];
        return acc;
    };
    k.deficit_ = [shared](double delta) {
        const auto& c = *shared;
        if (delta >= 0.5) {
            const double t = 1.0 - delta;
            double acc = 0.0;
            for (std::size_t q = c.size(); q-- > 0;) acc = acc * t + c[q];
            return 1.0 - acc;
        }
        // sum_q c_q (1 - (1-delta)^q), each term without cancellation.
        const double log_t = std::log1p(-delta);
        double acc = 0.0;
        for (std::size_t q = 1; q < c.size(); ++q)
            if (c[q] != 0.0) acc += c[q] * -std::expm1(static_cast<double>(q) * log_t);
        return acc;
    };
    return k;
}

namespace detail {

// E[f(Z1) f(t Z1 + sqrt(1-t^2) Z2)] for independent standard normals, in
// polar coordinates. The angular range is cut at the rays where either
// argument changes sign, so activations whose only non-smooth point is 0
// (ReLU, leaky ReLU, |x|) are integrated by piecewise-smooth Gauss rules.
class PolarGaussExpectation {
public:
    PolarGaussExpectation(std::function<double(double)> f, int order)
        : f_(std::move(f)), radial_(gauss_laguerre(order)), angular_(gauss_legendre(order)) {
        for (double u : radial_.nodes) radii_.push_back(std::sqrt(2.0 * u));
    }

    double operator()(double t) const {
        const double s = std::sqrt(std::max(0.0, 1.0 - t * t));
        return integrate(t, [&](double r, double c, double sn) { return f_(r * c) * f_(r * (t * c + s * sn)); });
    }

    /// E[(f(X) - f(Y))^2] / 2 for the pair at correlation 1 - delta. The
    /// increment Y - X is formed from delta directly, so small deficits keep
    /// their relative accuracy instead of cancelling against E[f^2].
    double half_mean_square_increment(double delta) const {
        const double t = 1.0 - delta;
        const double s = std::sqrt(std::max(0.0, delta * (2.0 - delta)));
        return 0.5 * integrate(t, [&](double r, double c, double sn) {
            const double x = r * c;
            const double diff = f_(x + r * (s * sn - delta * c)) - f_(x);
            return diff * diff;
        });
    }

private:
    template <class G>
    double integrate(double t, G&& integrand) const {
        constexpr double two_pi = 2.0 * std::numbers::pi;
        const double psi = std::acos(std::clamp(t, -1.0, 1.0));
        double cuts[7] = {0.0,
                          0.5 * std::numbers::pi,
                          1.5 * std::numbers::pi,
                          std::fmod(psi + 0.5 * std::numbers::pi, two_pi),
                          std::fmod(psi + 1.5 * std::numbers::pi, two_pi),
                          two_pi,
                          two_pi};
        std::sort(cuts, cuts + 6);
        double total = 0.0;
        for (int arc = 0; arc < 5; ++arc) {
            const double lo = cuts[arc], hi = cuts[arc + 1];
            if (hi - lo < 1e-15) continue;
            const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
            for (std::size_t j = 0; j < angular_.size(); ++j) {
                const double phi = mid + half * angular_.nodes[j];
                const double c = std::cos(phi), sn = std::sin(phi);
                double radial_sum = 0.0;
                for (std::size_t i = 0; i < radii_.size(); ++i)
                    radial_sum += radial_.weights[i] * integrand(radii_[i], c, sn);
                total += half * angular_.weights[j] * radial_sum;
            }
        }
        return total / two_pi;
    }

private:
    std::function<double(double)> f_;
    GaussRule radial_;
    GaussRule angular_;
    std::vector<double> radii_;
};

}  // namespace detail

/// Kernel of an arbitrary activation: kappa(t) = E[s(Z1) s(t Z1 + sqrt(1-t^2) Z2)] / E[s(Z)^2].
///
/// The calibration Gamma_W = 1/E[s(Z)^2] is applied by dividing by the same
/// quadrature evaluated at t = 1, so kappa(1) == 1 exactly. Custom activations
/// are assumed regular enough for kappa to be C^1 on [-1, 1]; that cannot be
/// checked from point evaluations.
inline Kernel kernel_from_activation(const ActivationSpec& act) {
    const int order = act.effective_order();
    if (order < 2) fail(ErrorKind::parameter_domain, "quadrature order must be >= 2");
    if (act.kind == ActivationKind::gaussian_exp && !(act.a > 0.0))
        fail(ErrorKind::parameter_domain, "gaussian-exp activation requires a > 0");
    auto fn = act.function();
    if (!fn) fail(ErrorKind::parameter_domain, "custom activation has no function");

    auto expectation = std::make_shared<const detail::PolarGaussExpectation>(fn, order);
    const double second_moment = (*expectation)(1.0);
    if (!std::isfinite(second_moment))
        fail(ErrorKind::numeric, "activation second moment is not finite under the quadrature");
    if (!(second_moment > 0.0))
        fail(ErrorKind::degenerate_kernel, "activation has zero second moment under the standard normal");

    Kernel k;
    k.source_ = KernelSource::quadrature;
    std::string name = act.name;
    if (name.empty()) {
        switch (act.kind) {
            case ActivationKind::relu: name = "relu"; break;
            case ActivationKind::gaussian_exp: name = "gaussian-exp(a=" + detail::fmt_param(act.a) + ")"; break;
            case ActivationKind::linear: name = "linear"; break;
            case ActivationKind::custom: name = "custom"; break;
        }
    }
    k.label_ = "quadrature(" + name + ",order=" + std::to_string(order) + ")";
    k.eval_ = [expectation, second_moment](double t) { return (*expectation)(t) / second_moment; };
    k.deficit_ = [expectation, second_moment](double delta) {
        if (delta >= 0.5) return 1.0 - (*expectation)(1.0 - delta) / second_moment;
        return expectation->half_mean_square_increment(delta) / second_moment;
    };
    k.deficit_floor_ = 1e-10;
    return k;
}

/// Builtins by identifier: "relu", "linear", "exponential" / "exp" (needs gamma).
inline Kernel builtin_kernel(const std::string& id, std::optional<double> gamma = std::nullopt) {
    if (id == "relu") return builtin_relu();
    if (id == "linear") return builtin_linear();
    if (id == "exponential" || id == "exp") {
        if (!gamma) fail(ErrorKind::parameter_domain, "exponential kernel requires gamma");
        return builtin_exponential(*gamma);
    }
    fail(ErrorKind::parameter_domain, "unknown builtin kernel '" + id + "'");
}

/// kappa'(1). Closed form when the source provides one; otherwise the one-sided
/// difference quotient D(h) = (1 - kappa(1-h))/h at h, h/2, h/4, extrapolated.
///
/// The error of D(h) behaves like c h^(rho-1) with rho unknown, so the
/// extrapolation estimates the order from the three quotients (Aitken) and
/// falls back to first-order Richardson when the ratio is not contractive.
inline double derivative_at_one(const Kernel& k, double base_step = 1e-7) {
    if (auto d = k.closed_form_derivative()) return *d;
    const double h = base_step;
    const double d0 = k.deficit(h) / h;
    const double d1 = k.deficit(0.5 * h) / (0.5 * h);
    const double d2 = k.deficit(0.25 * h) / (0.25 * h);
    if (!std::isfinite(d0) || !std::isfinite(d1) || !std::isfinite(d2))
        fail(ErrorKind::numeric, "non-finite kernel evaluations near t = 1");
    const double e1 = d0 - d1, e2 = d1 - d2;
    double estimate = 2.0 * d2 - d1;
    if (e1 != 0.0) {
        const double ratio = e2 / e1;
        if (ratio > 0.0 && ratio < 1.0) estimate = d2 - e2 * ratio / (1.0 - ratio);
    } else if (e2 == 0.0) {
        estimate = d2;
    }
    return std::max(0.0, estimate);
}

}  // namespace dka
