#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "lensflow/target_densities.hpp"
#include "../oracles.hpp"

using namespace lensflow;
using std::numbers::pi;

namespace {

constexpr double kLogI1At35 = 32.292516114453232243;

double dot4(const Vec4& a, const Vec4& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
}

// ∫_{S³} e^{log f} dvol for a rotationally symmetric log f(μ·x).
template <class F>
double sphere_integral(F&& logf_of_cos) {
  const int n = 20000;
  const double h = pi / n;
  double sum = 0.0;
  for (int j = 0; j <= n; ++j) {
    const double t = j * h;
    const double w = (j == 0 || j == n) ? 1.0 : (j % 2 ? 4.0 : 2.0);
    sum += w * std::exp(logf_of_cos(std::cos(t))) * 4.0 * pi * std::sin(t) * std::sin(t);
  }
  return sum * h / 3.0;
}

TargetDensity near_uniform() {
  return TargetDensity::vmf_mixture({{{1.0, 0.0, 0.0, 0.0}, 1e-9, 1.0}});
}

}  // namespace

TEST_CASE("vMF log-density at reference points") {
  const Vec4 mu{1.0, 0.0, 0.0, 0.0};
  CHECK(vmf_logpdf({0.0, 1.0, 0.0, 0.0}, mu, 35.0) ==
        doctest::Approx(-32.412922185782509531).epsilon(1e-13));
  CHECK(vmf_logpdf(mu, mu, 35.0) == doctest::Approx(2.5870778142174904691).epsilon(1e-13));
  CHECK(vmf_logpdf(mu, mu, 35.0) ==
        doctest::Approx(std::log(35.0) + 35.0 - std::log(4 * pi * pi) - kLogI1At35).epsilon(1e-13));
  CHECK_THROWS(vmf_logpdf(mu, mu, 0.0));
  CHECK_THROWS(vmf_logpdf(mu, mu, -1.0));
}

TEST_CASE("vMF components integrate to one over the sphere") {
  const Vec4 mu{1.0, 0.0, 0.0, 0.0};
  for (double kappa : {0.5, 1.0, 5.0, 35.0, 55.0, 65.0, 80.0, 300.0}) {
    CAPTURE(kappa);
    const double total = sphere_integral([&](double c) {
      return vmf_logpdf({c, std::sqrt(std::max(0.0, 1.0 - c * c)), 0.0, 0.0}, mu, kappa);
    });
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("vMF normalization by uniform Monte Carlo at moderate concentration") {
  std::mt19937_64 rng(17);
  const Vec4 mu = oracle::uniform_s3(rng);
  const int n = 1000000;
  for (double kappa : {1.0, 5.0, 10.0}) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(vmf_logpdf(oracle::uniform_s3(rng), mu, kappa));
    CHECK(std::abs(2 * pi * pi * sum / n - 1.0) < 0.01);
  }
}

TEST_CASE("mixture densities integrate to one within three standard errors") {
  // Uniform MC at 10⁶ points; the tolerance follows the estimator's spread.
  std::mt19937_64 rng(23);
  for (const TargetDensity& t : {experiment1_mixture(), experiment2_mixture()}) {
    const int n = 1000000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = 2 * pi * pi * std::exp(mixture_logpdf(t, oracle::uniform_s3(rng)));
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / n);
    CHECK(std::abs(mean - 1.0) < 3.0 * se);
  }
}

TEST_CASE("mixture log-density") {
  const Vec4 mu{0.0, 0.6, 0.0, 0.8};
  const TargetDensity single = TargetDensity::vmf_mixture({{mu, 12.0, 1.0}});
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec4 x = oracle::uniform_s3(rng);
    CHECK(mixture_logpdf(single, x) == doctest::Approx(vmf_logpdf(x, mu, 12.0)).epsilon(1e-14));
  }
  // At c₁ the ¼-weighted component dominates; the nearest other centre is π/3 away.
  const TargetDensity p1 = experiment1_mixture();
  const Vec4 c1{1.0, 0.0, 0.0, 0.0};
  const double dominant = std::log(0.25) + std::log(35.0) + 35.0 - std::log(4 * pi * pi) - kLogI1At35;
  CHECK(std::abs(mixture_logpdf(p1, c1) - dominant) < 1e-7);
  CHECK(mixture_logpdf(p1, c1) > dominant);

  CHECK_THROWS(TargetDensity::vmf_mixture({{mu, 1.0, 0.5}}));
  CHECK_THROWS(TargetDensity::vmf_mixture({{{1.0, 1.0, 0.0, 0.0}, 1.0, 1.0}}));
  CHECK_THROWS(TargetDensity::vmf_mixture({}));
}

TEST_CASE("experiment mixtures have the expected components") {
  const TargetDensity p1 = experiment1_mixture();
  const TargetDensity p2 = experiment2_mixture();
  const auto& a = p1.components();
  REQUIRE(a.size() == 5);
  double wsum = 0.0;
  for (const auto& c : a) {
    CHECK(c.kappa == 35.0);
    wsum += c.weight;
  }
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(a[0].weight == 0.25);
  CHECK(a[2].weight == doctest::Approx(1.0 / 6.0));
  CHECK(a[4].mu[3] == 1.0);

  const auto& b = p2.components();
  REQUIRE(b.size() == 4);
  CHECK(b[0].kappa == 65.0);
  CHECK(b[1].kappa == 55.0);
  CHECK(b[2].kappa == 65.0);
  CHECK(b[3].kappa == 80.0);
  CHECK(b[0].weight == doctest::Approx(1.0 / 9.0));
  CHECK(b[1].weight == doctest::Approx(2.0 / 9.0));
  CHECK(b[2].weight == doctest::Approx(4.0 / 9.0));
  CHECK(b[3].weight == doctest::Approx(2.0 / 9.0));
  for (const auto& c : b) CHECK(std::abs(dot4(c.mu, c.mu) - 1.0) < 1e-12);
}

TEST_CASE("rotation matrix of a quaternion") {
  const Mat3 I = rotation_from_quaternion({1.0, 0.0, 0.0, 0.0});
  const Mat3 X = rotation_from_quaternion({0.0, 1.0, 0.0, 0.0});
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(I[i][j] == (i == j ? 1.0 : 0.0));
      CHECK(X[i][j] == (i != j ? 0.0 : (i == 0 ? 1.0 : -1.0)));
    }
  }
  CHECK_THROWS(rotation_from_quaternion({1.0, 1.0, 0.0, 0.0}));

  std::mt19937_64 rng(9);
  for (int k = 0; k < 1000; ++k) {
    const Vec4 q = oracle::uniform_s3(rng);
    const Mat3 R = rotation_from_quaternion(q);
    const Mat3 Rn = rotation_from_quaternion({-q[0], -q[1], -q[2], -q[3]});
    for (int j = 0; j < 3; ++j) {
      std::array<double, 3> e{0.0, 0.0, 0.0};
      e[j] = 1.0;
      const auto ref = oracle::quat_rotate(q, e);
      for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(R[i][j] - ref[i]) < 1e-12);
        CHECK(R[i][j] == Rn[i][j]);
      }
    }
  }
}

TEST_CASE("hindered angle") {
  const BoltzmannParams bp = benzene_params();
  CHECK(hindered_angle({1.0, 0.0, 0.0, 0.0}, bp) == 0.0);
  for (double alpha : {0.1, 1.0, 2.5, 4.0, 6.0}) {
    const Vec4 q{std::cos(alpha / 2), std::sin(alpha / 2), 0.0, 0.0};
    CHECK(oracle::arc(hindered_angle(q, bp), alpha) < 1e-12);
  }
  // Left multiplication by (cos π/6, sin π/6, 0, 0) turns the rotor by π/3.
  const Vec4 g{std::cos(pi / 6), std::sin(pi / 6), 0.0, 0.0};
  std::mt19937_64 rng(4);
  for (int k = 0; k < 1000; ++k) {
    const Vec4 q = oracle::uniform_s3(rng);
    CHECK(oracle::arc(hindered_angle(oracle::quat_mul(g, q), bp), hindered_angle(q, bp) + pi / 3) <
          1e-9);
  }
  // R(q) y0 = ±c: rotation by π/2 about e3 maps e2 to −e1.
  CHECK_THROWS_AS(hindered_angle({std::cos(pi / 4), 0.0, 0.0, std::sin(pi / 4)}, bp),
                  std::domain_error);
}

TEST_CASE("Boltzmann potential") {
  const BoltzmannParams bp = benzene_params();
  CHECK(boltzmann_potential({1.0, 0.0, 0.0, 0.0}, bp) == doctest::Approx(-5.0).epsilon(1e-15));
  CHECK(boltzmann_logpdf_unnorm({1.0, 0.0, 0.0, 0.0}, bp) == doctest::Approx(-5.0).epsilon(1e-15));
  CHECK(std::abs(boltzmann_potential({std::cos(pi / 4), 0.0, 0.0, std::sin(pi / 4)}, bp)) < 1e-15);

  const Vec4 g{std::cos(pi / 6), std::sin(pi / 6), 0.0, 0.0};
  std::mt19937_64 rng(8);
  for (int k = 0; k < 10000; ++k) {
    const Vec4 q = oracle::uniform_s3(rng);
    CHECK(std::abs(boltzmann_potential(oracle::quat_mul(g, q), bp) - boltzmann_potential(q, bp)) <=
          1e-9);
  }
}

TEST_CASE("Boltzmann log-density peaks where the normal is aligned and the rotor sits at a barrier top") {
  // e^{+U} is largest at (n·c)² = 1 and cos 6φ = −1, where U = −5 + 2·20 = 35.
  const BoltzmannParams bp = benzene_params();
  std::mt19937_64 rng(12);
  double best = -1e300;
  Vec4 arg{};
  for (int k = 0; k < 1000000; ++k) {
    const Vec4 q = oracle::uniform_s3(rng);
    const double u = boltzmann_logpdf_unnorm(q, bp);
    if (u > best) {
      best = u;
      arg = q;
    }
  }
  CHECK(best > 34.0);
  CHECK(best <= 35.0);
  const auto n = oracle::quat_rotate(arg, {1.0, 0.0, 0.0});
  CHECK(n[0] * n[0] > 0.98);
  CHECK(std::cos(6.0 * hindered_angle(arg, bp)) < -0.95);
  CHECK_THROWS(validate(BoltzmannParams{5.0, {1.0, 0.0, 0.0}, 20.0, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 0}}));
}

TEST_CASE("symmetrization") {
  const LensSpace l = make_lens(3, 2);
  const Vec4 mu{0.0, 0.0, 1.0, 0.0};
  const TargetDensity t = TargetDensity::vmf_mixture({{mu, 35.0, 1.0}});
  // Explicit three-term average at the mode.
  double terms = 0.0;
  for (int k = 0; k < 3; ++k) {
    const Vec4 gmu = deck_apply(l, SpherePoint::from_r4(mu), k).r4();
    terms += std::exp(std::log(35.0) - std::log(4 * pi * pi) - kLogI1At35 + 35.0 * dot4(mu, gmu));
  }
  CHECK(symmetrize_logpdf(l, t, SpherePoint::from_r4(mu)) ==
        doctest::Approx(std::log(terms / 3.0)).epsilon(1e-12));

  std::mt19937_64 rng(2);
  const LensSpace l12 = make_lens(12, 1);
  TargetDensity boltz = TargetDensity::boltzmann(benzene_params());
  boltz.declare_symmetric(l12, 5);
  CHECK(boltz.symmetric());
  for (int i = 0; i < 100; ++i) {
    const SpherePoint z = SpherePoint::from_r4(oracle::uniform_s3(rng));
    CHECK(symmetrize_logpdf(l12, boltz, z) == boltz.logpdf(z));
    const double s = symmetrize_logpdf(l, t, z);
    for (int k = 1; k < 3; ++k) {
      CHECK(std::abs(symmetrize_logpdf(l, t, deck_apply(l, z, k)) - s) < 1e-9);
    }
  }
  TargetDensity p1 = experiment1_mixture();
  CHECK_THROWS_AS(p1.declare_symmetric(l, 5), std::invalid_argument);
}

TEST_CASE("pushforward of a uniform density is constant") {
  const LensSpace l = make_lens(7, 3);
  const PushforwardDensity pf(l, near_uniform());
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Chart c = i % 2 ? Chart::one : Chart::two;
    const double r = std::sqrt(u(rng)), a = 2 * pi * u(rng);
    const TorusPoint t{c, 2 * pi * u(rng), r * std::cos(a), r * std::sin(a)};
    CHECK(std::abs(pf.logpdf(t) + std::log(4 * pi * pi)) < 1e-8);
  }
}

TEST_CASE("normalized target of a uniform density") {
  PushforwardDensity pf(make_lens(3, 2), near_uniform());
  CHECK_THROWS_AS(pf.normalizers(), std::logic_error);
  NormalizerEstimate est;
  est.log_I1 = std::log(0.5);
  est.log_I2 = std::log(0.5);
  pf.set_normalizers(est);
  CHECK(std::abs(pf.normalized_logpdf({Chart::two, 1.0, 0.2, -0.3}) + std::log(2 * pi * pi)) < 1e-8);
}

TEST_CASE("experiment-1 pushforward at the image of b1") {
  const LensSpace l = make_lens(3, 2);
  const PushforwardDensity pf(l, experiment1_mixture());
  const SpherePoint b1 = SpherePoint::from_r4({0.0, 0.0, 1.0, 0.0});
  const ChartCoords cc = chart_inverse(l, Chart::one, b1);
  CHECK(cc.rho == 0.0);
  CHECK(pf.logpdf({Chart::one, cc.theta, 0.0, 0.0}) ==
        doctest::Approx(std::log(0.5) + symmetrize_logpdf(l, experiment1_mixture(), b1)).epsilon(1e-13));
}

TEST_CASE("normalizer estimates") {
  const NormalizerEstimate u = estimate_normalizers(make_lens(3, 2), near_uniform(), 100000, 1);
  CHECK(std::abs(u.I1() - 0.5) < 1e-6);
  CHECK(std::abs(u.I2() - 0.5) < 1e-6);
  CHECK_THROWS_AS(estimate_normalizers(make_lens(3, 2), near_uniform(), 9999, 1),
                  std::invalid_argument);

  const NormalizerEstimate e1 = estimate_normalizers(make_lens(3, 2), experiment1_mixture(), 200000, 7);
  CHECK(std::abs(e1.I2() - 0.5) <= 0.05);
  CHECK(std::abs(e1.I1() + e1.I2() - 1.0) <= 3 * std::hypot(e1.stderr1(), e1.stderr2()));
  const NormalizerEstimate e2 = estimate_normalizers(make_lens(7, 3), experiment2_mixture(), 200000, 7);
  CHECK(std::abs(e2.I2() - 0.3) <= 0.05);
  CHECK(std::abs(e2.I1() + e2.I2() - 1.0) <= 3 * std::hypot(e2.stderr1(), e2.stderr2()));

  // Same seed, same answer.
  const NormalizerEstimate again = estimate_normalizers(make_lens(3, 2), experiment1_mixture(), 200000, 7);
  CHECK(again.log_I1 == e1.log_I1);
  CHECK(again.log_I2 == e1.log_I2);
}

TEST_CASE("normalized targets integrate to one on their torus") {
  const LensSpace l = make_lens(3, 2);
  PushforwardDensity pf(l, experiment1_mixture());
  pf.set_normalizers(estimate_normalizers(l, pf.base(), 200000, 7));
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Chart c : {Chart::one, Chart::two}) {
    const int n = 1000000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = std::sqrt(u(rng)), a = 2 * pi * u(rng);
      sum += std::exp(pf.normalized_logpdf({c, 2 * pi * u(rng), r * std::cos(a), r * std::sin(a)}));
    }
    CHECK(std::abs(2 * pi * pi * sum / n - 1.0) < 0.01);
  }
}

TEST_CASE("target gradient matches central differences") {
  const LensSpace l = make_lens(7, 3);
  PushforwardDensity pf(l, experiment2_mixture());
  NormalizerEstimate est;
  est.log_I1 = std::log(0.66);
  est.log_I2 = std::log(0.33);
  pf.set_normalizers(est);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Chart c = i % 2 ? Chart::one : Chart::two;
    const double r = 0.95 * std::sqrt(u(rng)), a = 2 * pi * u(rng);
    const Vec3 p{2 * pi * u(rng), r * std::cos(a), r * std::sin(a)};
    Vec3 g{};
    pf.normalized_logpdf(c, p, &g);
    for (int j = 0; j < 3; ++j) {
      Vec3 hi = p, lo = p;
      hi[j] += 1e-6;
      lo[j] -= 1e-6;
      const double fd =
          (pf.normalized_logpdf(c, hi, nullptr) - pf.normalized_logpdf(c, lo, nullptr)) / 2e-6;
      CHECK(std::abs(g[j] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}
