#include "lensflow/bessel.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace lensflow {
namespace {

constexpr double kSeriesCutoff = 20.0;

void check_args(int order, double x) {
  if (order != 0 && order != 1) throw std::invalid_argument("bessel: order must be 0 or 1");
  if (!(x >= 0.0)) throw std::domain_error("bessel: argument must be non-negative");
}

// Σ (x/2)^{2k+ν} / (k! (k+ν)!)
double series(int order, double x) {
  const double half = 0.5 * x;
  const double quarter_sq = half * half;
  double term = order == 0 ? 1.0 : half;
  double sum = term;
  for (int k = 1; k < 500; ++k) {
    term *= quarter_sq / (static_cast<double>(k) * (k + order));
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

// √(2πx) e^{-x} I_ν(x) ~ Σ (−1)^k a_k(ν) / x^k
double asymptotic_scaled(int order, double x) {
  const double mu = 4.0 * order * order;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (8.0 * k * x);
    if (std::abs(next) >= std::abs(term)) break;  // series starts to diverge
    term = next;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return sum / std::sqrt(2.0 * std::numbers::pi * x);
}

}  // namespace

double bessel_i_scaled(int order, double x) {
  check_args(order, x);
  if (x < kSeriesCutoff) return series(order, x) * std::exp(-x);
  return asymptotic_scaled(order, x);
}

double log_bessel_i(int order, double x) {
  check_args(order, x);
  if (x == 0.0) return order == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (x < kSeriesCutoff) return std::log(series(order, x));
  return x + std::log(asymptotic_scaled(order, x));
}

}  // namespace lensflow
