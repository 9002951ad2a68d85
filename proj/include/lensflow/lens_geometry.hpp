#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <utility>

namespace lensflow {

using Complex = std::complex<double>;
using Vec3 = std::array<double, 3>;
using Vec4 = std::array<double, 4>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Unit-norm tolerance for points of S³.
inline constexpr double kUnitTolerance = 1e-9;
/// Distance below which two deck images count as the same point.
inline constexpr double kQuotientTolerance = 1e-8;

/// Reduces an angle to [0, 2π) by floored modulus.
double wrap_angle(double angle);

/// The lens space L(p;q) together with r = q⁻¹ mod p and s = (rq − 1)/p,
/// so that the gluing matrix A = [[r, p], [s, q]] has determinant 1.
struct LensSpace {
  int p = 0;
  int q = 0;
  int r = 0;
  int s = 0;

  long long gluing_determinant() const {
    return static_cast<long long>(r) * q - static_cast<long long>(p) * s;
  }
};

/// Builds L(p;q). Throws std::invalid_argument unless p ≥ 2, 1 ≤ q < p and
/// gcd(p, q) = 1.
LensSpace make_lens(int p, int q);

/// Heegaard handlebody index.
enum class Chart { one = 1, two = 2 };

inline int chart_index(Chart c) { return c == Chart::one ? 0 : 1; }
Chart chart_from_int(int chart);

/// Identification ψ: (z₁, z₂) = (w + ix, y + iz).
Vec4 c2_to_r4(const Complex& z1, const Complex& z2);
std::pair<Complex, Complex> r4_to_c2(const Vec4& v);

/// A point of S³ ⊂ ℂ², kept in both the ℂ² and ℝ⁴ (quaternion w,x,y,z)
/// coordinates. The two always agree under ψ.
class SpherePoint {
 public:
  SpherePoint() = default;
  static SpherePoint from_c2(const Complex& z1, const Complex& z2);
  static SpherePoint from_r4(const Vec4& v);

  const Complex& z1() const { return z1_; }
  const Complex& z2() const { return z2_; }
  const Vec4& r4() const { return r4_; }
  double norm() const;

 private:
  Complex z1_{1.0, 0.0};
  Complex z2_{0.0, 0.0};
  Vec4 r4_{1.0, 0.0, 0.0, 0.0};
};

/// A point (θ, x, y) of S¹×D² in Heegaard chart `chart`.
struct TorusPoint {
  Chart chart = Chart::one;
  double theta = 0.0;
  double x = 0.0;
  double y = 0.0;
};

/// Solid-torus coordinates with the disk in polar form.
struct ChartCoords {
  double theta = 0.0;
  double rho = 0.0;
  double phi = 0.0;
};

/// Applies the k-th power of the deck generator
/// (z₁, z₂) ↦ (e^{2πi/p} z₁, e^{2πiq/p} z₂). k is reduced mod p.
SpherePoint deck_apply(const LensSpace& lens, const SpherePoint& z, long long k);

/// Lift of the chart map f_i to S³ (brackets removed).
SpherePoint chart_lift(const LensSpace& lens, Chart chart, double theta, double rho,
                       double phi);

/// Inverse of chart_lift composed with fiber reduction. All angles in
/// [0, 2π); phi is 0 on the core circle.
ChartCoords chart_inverse(const LensSpace& lens, Chart chart, const SpherePoint& z);

/// Gluing map A on the boundary torus: (θ, φ) ↦ (rθ + pφ, sθ + qφ) mod 2π.
std::pair<double, double> boundary_glue(const LensSpace& lens, double theta, double phi);

/// True iff some deck image of `a` lies within `tol` of `b` in ℝ⁴.
bool quotient_equal(const LensSpace& lens, const SpherePoint& a, const SpherePoint& b,
                    double tol = kQuotientTolerance);

/// Chart lift with the disk in Cartesian coordinates.
SpherePoint torus_to_sphere(const LensSpace& lens, const TorusPoint& t);

/// Cartesian-disk chart lift directly to ℝ⁴, generic in the scalar type so the
/// same code serves values and forward-mode derivatives. Uses ρe^{iφ} = x + iy,
/// which keeps it smooth through the core circle.
template <class T>
std::array<T, 4> lift_to_r4(const LensSpace& lens, Chart chart, const T& theta, const T& x,
                            const T& y) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const double inv_p = 1.0 / lens.p;
  const double half_root = std::sqrt(0.5);
  const T radial = sqrt(T(1.0) - 0.5 * (x * x + y * y));
  const T core_angle = theta * inv_p;
  if (chart == Chart::one) {
    // z₁ = √½ (x + iy) e^{i rθ/p},  z₂ = √(1 − ρ²/2) e^{iθ/p}
    const T a = theta * (lens.r * inv_p);
    const T ca = cos(a);
    const T sa = sin(a);
    return {half_root * (x * ca - y * sa), half_root * (x * sa + y * ca),
            radial * cos(core_angle), radial * sin(core_angle)};
  }
  // z₁ = √(1 − ρ²/2) e^{iθ/p},  z₂ = √½ (x − iy) e^{i qθ/p}
  const T a = theta * (lens.q * inv_p);
  const T ca = cos(a);
  const T sa = sin(a);
  return {radial * cos(core_angle), radial * sin(core_angle), half_root * (x * ca + y * sa),
          half_root * (x * sa - y * ca)};
}

/// Deck action on ℝ⁴ coordinates, generic in the scalar type.
template <class T>
std::array<T, 4> deck_apply_r4(const LensSpace& lens, const std::array<T, 4>& v, long long k) {
  const long long kk = ((k % lens.p) + lens.p) % lens.p;
  if (kk == 0) return v;
  const double a1 = kTwoPi * static_cast<double>(kk) / lens.p;
  const double a2 = kTwoPi * static_cast<double>((kk * lens.q) % lens.p) / lens.p;
  const double c1 = std::cos(a1), s1 = std::sin(a1);
  const double c2 = std::cos(a2), s2 = std::sin(a2);
  return {c1 * v[0] - s1 * v[1], s1 * v[0] + c1 * v[1], c2 * v[2] - s2 * v[3],
          s2 * v[2] + c2 * v[3]};
}

}  // namespace lensflow
