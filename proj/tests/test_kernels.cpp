#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "dka/kernels.hpp"
#include "dka/quadrature.hpp"

using namespace dka;

namespace {

std::vector<double> grid101() {
    std::vector<double> g;
    for (int i = 0; i <= 100; ++i) g.push_back(-1.0 + 0.02 * i);
    return g;
}

double arccos1(double t) {
    return (t * (std::numbers::pi - std::acos(t)) + std::sqrt(1.0 - t * t)) / std::numbers::pi;
}

double exp_closed(double g, double t) { return std::sqrt(g / (g + 1.0 - t * t)); }

}  // namespace

TEST(Builtins, ExponentialValues) {
    const auto k = builtin_exponential(2.0);
    EXPECT_NEAR(k(0.0), std::sqrt(2.0 / 3.0), 1e-15);
    EXPECT_DOUBLE_EQ(k(1.0), 1.0);
    EXPECT_EQ(*k.closed_form_derivative(), 0.5);
    EXPECT_EQ(k.source(), KernelSource::exponential);
}

TEST(Builtins, ReluValues) {
    const auto k = builtin_relu();
    EXPECT_NEAR(k(0.0), 1.0 / std::numbers::pi, 1e-15);
    EXPECT_NEAR(k(-1.0), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(k(1.0), 1.0);
    EXPECT_EQ(derivative_at_one(k), 1.0);
    for (double t : grid101()) EXPECT_NEAR(k(t), arccos1(t), 1e-14) << t;
}

TEST(Builtins, Linear) {
    const auto k = builtin_linear();
    for (double t : grid101()) EXPECT_EQ(k(t), t);
    EXPECT_EQ(derivative_at_one(k), 1.0);
}

TEST(Builtins, InvalidGamma) {
    for (double g : {0.0, -1.0, std::nan(""), static_cast<double>(INFINITY)}) {
        try {
            builtin_exponential(g);
            FAIL() << "accepted gamma " << g;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::parameter_domain);
        }
    }
    EXPECT_THROW(builtin_kernel("exp"), Error);
    EXPECT_THROW(builtin_kernel("softmax"), Error);
}

TEST(Builtins, DeficitMatchesDirectEvaluation) {
    for (const auto& k : {builtin_relu(), builtin_exponential(0.5), builtin_exponential(3.0)})
        for (double d : {2.0, 1.5, 1.0, 0.3, 1e-2, 1e-4})
            EXPECT_NEAR(k.deficit(d), 1.0 - k(1.0 - d), 1e-14) << k.label() << " " << d;
}

TEST(Builtins, ReluDeficitSmallArguments) {
    // 1 - kappa(1 - d) = d - c d^{3/2} + O(d^{5/2}) with c = 2 sqrt(2) / (3 pi).
    const auto k = builtin_relu();
    const double c = 2.0 * std::sqrt(2.0) / (3.0 * std::numbers::pi);
    for (double d : {1e-6, 1e-9, 1e-12}) {
        const double leading = d - c * std::pow(d, 1.5);
        EXPECT_NEAR(k.deficit(d) / leading, 1.0, 10.0 * d) << d;
    }
}

TEST(Hermite, Examples) {
    const auto lin = kernel_from_hermite({0.0, 1.0});
    EXPECT_EQ(lin(0.3), 0.3);
    EXPECT_EQ(derivative_at_one(lin), 1.0);
    EXPECT_TRUE(lin.affine());

    const auto sq = kernel_from_hermite({0.0, 0.0, 1.0});
    EXPECT_NEAR(sq(0.5), 0.25, 1e-15);
    EXPECT_EQ(derivative_at_one(sq), 2.0);
    EXPECT_FALSE(sq.affine());

    const auto mix = kernel_from_hermite({0.25, 0.5, 0.25});
    EXPECT_NEAR(mix(0.5), 0.5625, 1e-15);
    EXPECT_NEAR(derivative_at_one(mix), 1.0, 1e-15);
}

TEST(Hermite, Renormalizes) {
    const auto k = kernel_from_hermite({1.0, 2.0, 1.0});
    EXPECT_NEAR(k(0.5), 0.5625, 1e-15);
    EXPECT_NEAR(k(1.0), 1.0, 1e-15);
    const auto coeffs = k.series_coeffs();
    double sum = 0.0, dsum = 0.0;
    for (std::size_t q = 0; q < coeffs.size(); ++q) {
        EXPECT_GE(coeffs[q], 0.0);
        sum += coeffs[q];
        dsum += static_cast<double>(q) * coeffs[q];
    }
    EXPECT_NEAR(sum, 1.0, 1e-10);
    EXPECT_NEAR(derivative_at_one(k), dsum, 1e-10);
}

TEST(Hermite, Errors) {
    try {
        kernel_from_hermite({0.0, 0.0, 0.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate_kernel);
    }
    try {
        kernel_from_hermite({0.5, -0.1, 0.6});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::parameter_domain);
    }
}

TEST(Hermite, SeriesProperties) {
    // Random nonnegative series: normalization, |kappa| < 1 inside, monotone on [0,1],
    // and the finite difference agrees with sum q b_q.
    std::vector<std::vector<double>> cases{{0.1, 0.3, 0.2, 0.4}, {0.0, 0.6, 0.0, 0.0, 0.4}, {0.3, 0.0, 0.7},
                                           {0.05, 0.05, 0.1, 0.2, 0.3, 0.3}};
    for (const auto& c : cases) {
        const auto k = kernel_from_hermite(c);
        EXPECT_NEAR(k(1.0), 1.0, 1e-12);
        double prev = k(0.0);
        for (int i = 1; i < 200; ++i) {
            const double t = i / 200.0;
            EXPECT_GE(k(t), prev - 1e-15);
            prev = k(t);
            EXPECT_LT(std::abs(k(t)), 1.0);
            EXPECT_LT(std::abs(k(-t)), 1.0);
        }
        double dsum = 0.0;
        for (std::size_t q = 0; q < c.size(); ++q) dsum += static_cast<double>(q) * c[q];
        double total = 0.0;
        for (double v : c) total += v;
        EXPECT_NEAR(*k.closed_form_derivative(), dsum / total, 1e-10);
        // Same kernel without the closed form: finite difference on the evaluator.
        EXPECT_NEAR(k.deficit(1e-7) / 1e-7, dsum / total, 1e-6);
    }
}

TEST(Hermite, DeficitSmallArguments) {
    const auto k = kernel_from_hermite({0.2, 0.3, 0.5});
    for (double d : {1e-3, 1e-8, 1e-13}) {
        const double t = 1.0 - d;
        const double exact = 1.0 - (0.2 + 0.3 * t + 0.5 * t * t);  // = 1.3 d - 0.5 d^2
        EXPECT_NEAR(k.deficit(d) / (1.3 * d - 0.5 * d * d), 1.0, 1e-12) << exact;
    }
}

TEST(KernelOrdering, KappaAboveIdentityWhenSlopeAtMostOne) {
    for (const auto& k : {builtin_relu(), builtin_exponential(1.0), builtin_exponential(4.0),
                          kernel_from_hermite({0.25, 0.5, 0.25})})
        for (double t : grid101()) EXPECT_GE(k(t), t - 1e-15) << k.label() << " t=" << t;
}

TEST(Activation, ReluMatchesArcCosine) {
    ActivationSpec act;
    act.kind = ActivationKind::relu;
    act.quadrature_order = 200;
    const auto k = kernel_from_activation(act);
    EXPECT_EQ(k(1.0), 1.0);
    double worst = 0.0;
    for (double t : grid101()) worst = std::max(worst, std::abs(k(t) - arccos1(t)));
    EXPECT_LE(worst, 1e-6);
}

TEST(Activation, GaussianExpMatchesClosedForm) {
    for (double a : {0.7, 1.0, 1.5}) {
        ActivationSpec act;
        act.kind = ActivationKind::gaussian_exp;
        act.a = a;
        const auto k = kernel_from_activation(act);
        const double g = exponential_gamma_from_width(a);
        EXPECT_NEAR(exponential_width_from_gamma(g), a, 1e-14);
        double worst = 0.0;
        for (double t : grid101()) worst = std::max(worst, std::abs(k(t) - exp_closed(g, t)));
        EXPECT_LE(worst, 1e-8) << "a=" << a;
        EXPECT_NEAR(derivative_at_one(k), 1.0 / g, 1e-10);
    }
}

TEST(Activation, QuadratureDeficitKeepsRelativeAccuracy) {
    ActivationSpec act;
    act.kind = ActivationKind::gaussian_exp;
    act.a = 1.0;
    const auto k = kernel_from_activation(act);
    const auto e = builtin_exponential(3.0);
    for (double d : {1e-2, 1e-5, 1e-8, 1e-10}) EXPECT_NEAR(k.deficit(d) / e.deficit(d), 1.0, 1e-11) << d;
    EXPECT_GT(k.deficit_floor(), 0.0);
    EXPECT_EQ(e.deficit_floor(), 0.0);
}

TEST(Activation, Linear) {
    ActivationSpec act;
    act.kind = ActivationKind::linear;
    const auto k = kernel_from_activation(act);
    for (double t : grid101()) EXPECT_NEAR(k(t), t, 1e-12);
}

TEST(Activation, ReluQuadratureClassifiesAsSparse) {
    ActivationSpec act;
    act.kind = ActivationKind::relu;
    EXPECT_NEAR(derivative_at_one(kernel_from_activation(act)), 1.0, 1e-10);
}

TEST(Activation, CustomAndDegenerate) {
    ActivationSpec act;
    act.kind = ActivationKind::custom;
    act.custom = [](double x) { return std::abs(x); };
    act.name = "abs";
    const auto k = kernel_from_activation(act);
    // |x| kernel: (2/pi)(sqrt(1-t^2) + t asin t), normalized by E[Z^2] = 1.
    for (double t : {-0.8, -0.2, 0.0, 0.4, 0.9})
        EXPECT_NEAR(k(t), (2.0 / std::numbers::pi) * (std::sqrt(1.0 - t * t) + t * std::asin(t)), 1e-8) << t;

    ActivationSpec zero;
    zero.kind = ActivationKind::custom;
    zero.custom = [](double) { return 0.0; };
    try {
        kernel_from_activation(zero);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate_kernel);
    }
}

TEST(Derivative, FiniteDifferenceOnSeriesWithoutClosedForm) {
    // Activation x^2 - 1 (He_2): kappa(t) = t^2, kappa'(1) = 2.
    ActivationSpec act;
    act.kind = ActivationKind::custom;
    act.custom = [](double x) { return x * x - 1.0; };
    act.quadrature_order = 40;
    const auto k = kernel_from_activation(act);
    EXPECT_NEAR(k(0.5), 0.25, 1e-12);
    EXPECT_NEAR(derivative_at_one(k), 2.0, 1e-8);
}

TEST(Quadrature, RulesIntegratePolynomials) {
    const auto leg = gauss_legendre(10);
    EXPECT_NEAR(leg.integrate([](double x) { return x * x; }), 2.0 / 3.0, 1e-14);
    const auto lag = gauss_laguerre(10);
    EXPECT_NEAR(lag.integrate([](double u) { return u * u * u; }), 6.0, 1e-12);
    const auto her = gauss_hermite(10);
    EXPECT_NEAR(her.integrate([](double x) { return x * x * x * x; }), 3.0, 1e-12);
    for (int d : {1, 2, 3, 5}) {
        const auto& rule = gauss_gegenbauer(32, d);
        EXPECT_NEAR(rule.integrate([](double) { return 1.0; }), weight_integral(d), 1e-13) << d;
    }
}
