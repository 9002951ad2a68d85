#include "lensflow/lens_geometry.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace lensflow {

double wrap_angle(double angle) {
  double r = std::fmod(angle, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  // fmod of a value just below a multiple of 2π can round up to 2π.
  if (r >= kTwoPi) r = 0.0;
  return r;
}

LensSpace make_lens(int p, int q) {
  if (p < 2) throw std::invalid_argument("lens space needs p >= 2, got " + std::to_string(p));
  if (q < 1 || q >= p) {
    throw std::invalid_argument("lens space needs 1 <= q < p, got q=" + std::to_string(q));
  }
  if (std::gcd(p, q) != 1) {
    throw std::invalid_argument("gcd(p, q) must be 1 for a free action, got (" +
                                std::to_string(p) + ", " + std::to_string(q) + ")");
  }
  LensSpace lens{p, q, 0, 0};
  for (int r = 0; r < p; ++r) {
    if ((static_cast<long long>(r) * q) % p == 1 % p) {
      lens.r = r;
      break;
    }
  }
  lens.s = static_cast<int>((static_cast<long long>(lens.r) * q - 1) / p);
  return lens;
}

Chart chart_from_int(int chart) {
  if (chart == 1) return Chart::one;
  if (chart == 2) return Chart::two;
  throw std::invalid_argument("chart index must be 1 or 2, got " + std::to_string(chart));
}

Vec4 c2_to_r4(const Complex& z1, const Complex& z2) {
  return {z1.real(), z1.imag(), z2.real(), z2.imag()};
}

std::pair<Complex, Complex> r4_to_c2(const Vec4& v) {
  return {Complex(v[0], v[1]), Complex(v[2], v[3])};
}

SpherePoint SpherePoint::from_c2(const Complex& z1, const Complex& z2) {
  SpherePoint out;
  out.z1_ = z1;
  out.z2_ = z2;
  out.r4_ = c2_to_r4(z1, z2);
  return out;
}

SpherePoint SpherePoint::from_r4(const Vec4& v) {
  SpherePoint out;
  const auto [z1, z2] = r4_to_c2(v);
  out.z1_ = z1;
  out.z2_ = z2;
  out.r4_ = v;
  return out;
}

double SpherePoint::norm() const { return std::sqrt(std::norm(z1_) + std::norm(z2_)); }

SpherePoint deck_apply(const LensSpace& lens, const SpherePoint& z, long long k) {
  return SpherePoint::from_r4(deck_apply_r4(lens, z.r4(), k));
}

SpherePoint chart_lift(const LensSpace& lens, Chart chart, double theta, double rho,
                       double phi) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw std::domain_error("chart_lift: rho must lie in [0, 1], got " + std::to_string(rho));
  }
  if (!std::isfinite(theta) || !std::isfinite(phi)) {
    throw std::domain_error("chart_lift: angles must be finite");
  }
  const double inv_p = 1.0 / lens.p;
  const double small = std::sqrt(0.5) * rho;
  const double large = std::sqrt(1.0 - 0.5 * rho * rho);
  if (chart == Chart::one) {
    return SpherePoint::from_c2(std::polar(small, phi + lens.r * inv_p * theta),
                                std::polar(large, theta * inv_p));
  }
  return SpherePoint::from_c2(std::polar(large, theta * inv_p),
                              std::polar(small, -phi + lens.q * inv_p * theta));
}

ChartCoords chart_inverse(const LensSpace& lens, Chart chart, const SpherePoint& z) {
  const double m1 = std::norm(z.z1());
  const double m2 = std::norm(z.z2());
  const double small_sq = chart == Chart::one ? m1 : m2;
  if (small_sq > 0.5 + kUnitTolerance) {
    throw std::domain_error("chart_inverse: point lies outside the closed region of chart " +
                            std::to_string(static_cast<int>(chart)));
  }
  ChartCoords out;
  out.rho = std::min(1.0, std::sqrt(2.0 * small_sq));
  // Both angle formulas are invariant under the deck group: the phase shifts
  // of a deck image cancel up to whole turns since rq − ps = 1.
  if (chart == Chart::one) {
    const double core = std::arg(z.z2());
    out.theta = wrap_angle(lens.p * core);
    out.phi = out.rho == 0.0 ? 0.0 : wrap_angle(std::arg(z.z1()) - lens.r * core);
  } else {
    const double core = std::arg(z.z1());
    out.theta = wrap_angle(lens.p * core);
    out.phi = out.rho == 0.0 ? 0.0 : wrap_angle(lens.q * core - std::arg(z.z2()));
  }
  return out;
}

std::pair<double, double> boundary_glue(const LensSpace& lens, double theta, double phi) {
  return {wrap_angle(lens.r * theta + lens.p * phi), wrap_angle(lens.s * theta + lens.q * phi)};
}

bool quotient_equal(const LensSpace& lens, const SpherePoint& a, const SpherePoint& b,
                    double tol) {
  for (int k = 0; k < lens.p; ++k) {
    const Vec4 ga = deck_apply_r4(lens, a.r4(), k);
    double d2 = 0.0;
    for (int i = 0; i < 4; ++i) d2 += (ga[i] - b.r4()[i]) * (ga[i] - b.r4()[i]);
    if (std::sqrt(d2) <= tol) return true;
  }
  return false;
}

SpherePoint torus_to_sphere(const LensSpace& lens, const TorusPoint& t) {
  const double rho = std::min(1.0, std::hypot(t.x, t.y));
  const double phi = rho == 0.0 ? 0.0 : std::atan2(t.y, t.x);
  return chart_lift(lens, t.chart, t.theta, rho, phi);
}

}  // namespace lensflow
