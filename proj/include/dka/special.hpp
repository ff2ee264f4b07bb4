#pragma once

#include <cmath>
#include <limits>
#include <numbers>

namespace dka {

/// log P(Z >= x) for a standard normal Z, accurate far into the upper tail.
///
/// For x <= 8 the complementary error function is still representable with
/// full relative precision; beyond that the Mills ratio R(x) = Q(x)/phi(x) is
/// evaluated by its continued fraction x + 1/(x + 2/(x + 3/(x + ...))).
inline double log_upper_tail(double x) {
    if (std::isnan(x)) return x;
    if (x == std::numeric_limits<double>::infinity()) return -std::numeric_limits<double>::infinity();
    if (x <= 8.0) return std::log(0.5 * std::erfc(x / std::numbers::sqrt2));

    // Backward evaluation of the continued fraction; 60 levels are far more
    // than needed for x > 8.
    double tail = x;
    for (int k = 60; k >= 1; --k) tail = x + k / tail;
    const double log_phi = -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi);
    return log_phi - std::log(tail);
}

}  // namespace dka
