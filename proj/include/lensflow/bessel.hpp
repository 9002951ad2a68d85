#pragma once

namespace lensflow {

// Modified Bessel functions of the first kind for orders 0 and 1.
// Power series below x = 20, exponentially scaled asymptotic expansion above,
// so that logs stay finite for concentrations far beyond exp() range.

/// log I_order(x) for order ∈ {0, 1}, x ≥ 0 (x > 0 for order 1).
double log_bessel_i(int order, double x);

/// e^{-x} I_order(x) for order ∈ {0, 1}, x ≥ 0.
double bessel_i_scaled(int order, double x);

inline double log_bessel_i0(double x) { return log_bessel_i(0, x); }
inline double log_bessel_i1(double x) { return log_bessel_i(1, x); }

}  // namespace lensflow
