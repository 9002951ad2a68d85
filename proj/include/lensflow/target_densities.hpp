#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <ceres/jet.h>

#include "lensflow/lens_geometry.hpp"

namespace lensflow {

using Mat3 = std::array<Vec3, 3>;

/// Value part of a scalar that may carry derivatives.
inline double scalar_value(double v) { return v; }
template <class S, int N>
double scalar_value(const ceres::Jet<S, N>& v) {
  return v.a;
}

/// log Σ exp(terms), stable for any scalar type with exp/log.
template <class T>
T log_sum_exp(const std::vector<T>& terms) {
  using std::exp;
  using std::log;
  double peak = -std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (scalar_value(terms[i]) > peak) {
      peak = scalar_value(terms[i]);
      arg = i;
    }
  }
  if (!std::isfinite(peak)) return T(peak);
  T acc(0.0);
  for (const T& t : terms) acc += exp(t - terms[arg]);
  return terms[arg] + log(acc);
}

// ---------------------------------------------------------------------------
// von Mises–Fisher on S³

/// log of the vMF normaliser κ / (4π² I₁(κ)) on S³.
double vmf_log_normalizer(double kappa);

/// log f(x; μ, κ) = log κ − log 4π² − log I₁(κ) + κ μ·x.
double vmf_logpdf(const Vec4& x, const Vec4& mu, double kappa);

struct VmfComponent {
  Vec4 mu{1.0, 0.0, 0.0, 0.0};
  double kappa = 1.0;
  double weight = 1.0;
};

// ---------------------------------------------------------------------------
// Benzene orientation potential

/// Maier–Saupe strength κ, axis c, rotor barrier V, initial normal x0,
/// initial in-plane direction y0 and the ordered basis (e2, e3) of the plane
/// normal to c used to read off the rotor angle.
struct BoltzmannParams {
  double kappa = 5.0;
  Vec3 c{1.0, 0.0, 0.0};
  double V = 20.0;
  Vec3 x0{1.0, 0.0, 0.0};
  Vec3 y0{0.0, 1.0, 0.0};
  Vec3 e2{0.0, 1.0, 0.0};
  Vec3 e3{0.0, 0.0, 1.0};
};

/// Throws std::invalid_argument unless c, x0, y0 are unit and {c, e2, e3} is
/// a right-handed orthonormal frame.
void validate(const BoltzmannParams& params);

/// Rotation matrix of a unit quaternion (w, x, y, z) under the double cover
/// S³ → SO(3).
template <class T>
std::array<std::array<T, 3>, 3> rotation_matrix(const std::array<T, 4>& q) {
  const T& w = q[0];
  const T& x = q[1];
  const T& y = q[2];
  const T& z = q[3];
  return {{{T(1.0) - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)},
           {2.0 * (x * y + w * z), T(1.0) - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)},
           {2.0 * (x * z - w * y), 2.0 * (y * z + w * x), T(1.0) - 2.0 * (x * x + y * y)}}};
}

/// Checked variant: throws std::domain_error if ‖q‖ deviates from 1 by more
/// than 1e-9.
Mat3 rotation_from_quaternion(const Vec4& q);

template <class T>
std::array<T, 3> rotate(const std::array<std::array<T, 3>, 3>& R, const Vec3& v) {
  std::array<T, 3> out;
  for (int i = 0; i < 3; ++i) out[i] = R[i][0] * v[0] + R[i][1] * v[1] + R[i][2] * v[2];
  return out;
}

template <class T>
T dot(const std::array<T, 3>& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline constexpr double kDegenerateProjection = 1e-12;

/// Rotor angle atan2(m₃, m₂) of R(q)y0 in the (e2, e3) basis. Sets
/// `degenerate` and returns 0 when the projection vanishes.
template <class T>
T hindered_angle_t(const std::array<T, 4>& q, const BoltzmannParams& params,
                   bool* degenerate = nullptr) {
  using std::atan2;
  const auto R = rotation_matrix(q);
  const auto y_rot = rotate(R, params.y0);
  const T m2 = dot(y_rot, params.e2);
  const T m3 = dot(y_rot, params.e3);
  const bool flat = std::abs(scalar_value(m2)) < kDegenerateProjection &&
                    std::abs(scalar_value(m3)) < kDegenerateProjection;
  if (degenerate) *degenerate = flat;
  if (flat) return T(0.0);
  return atan2(m3, m2);
}

/// Throws std::domain_error when R(q)y0 is parallel to c.
double hindered_angle(const Vec4& q, const BoltzmannParams& params);

/// U(q) = −κ (n·c)² + (n·c)² V (1 − cos 6φ), n = R(q)x0.
template <class T>
T boltzmann_potential_t(const std::array<T, 4>& q, const BoltzmannParams& params) {
  using std::cos;
  const auto R = rotation_matrix(q);
  const T nc = dot(rotate(R, params.x0), params.c);
  const T nc2 = nc * nc;
  const T phi = hindered_angle_t(q, params);
  return -params.kappa * nc2 + nc2 * params.V * (T(1.0) - cos(6.0 * phi));
}

double boltzmann_potential(const Vec4& q, const BoltzmannParams& params);

/// Unnormalised log-density of the Boltzmann target. The density is taken as
/// proportional to e^{+U}.
double boltzmann_logpdf_unnorm(const Vec4& q, const BoltzmannParams& params);

// ---------------------------------------------------------------------------
// Targets on S³

enum class TargetKind { vmf_mixture, boltzmann };

class TargetDensity {
 public:
  /// Mixture of vMF components. Weights must sum to 1 within 1e-12.
  static TargetDensity vmf_mixture(std::vector<VmfComponent> components);
  static TargetDensity boltzmann(const BoltzmannParams& params);

  TargetKind kind() const { return kind_; }
  bool symmetric() const { return symmetric_; }
  bool normalized() const { return kind_ == TargetKind::vmf_mixture; }
  const std::vector<VmfComponent>& components() const { return components_; }
  const BoltzmannParams& boltzmann_params() const { return boltzmann_; }

  /// Sets the symmetric flag after checking deck invariance of the log-density
  /// to 1e-9 on `n` random points. Throws std::invalid_argument otherwise.
  void declare_symmetric(const LensSpace& lens, std::uint64_t seed, int n = 1000);

  template <class T>
  T logpdf(const std::array<T, 4>& x) const {
    if (kind_ == TargetKind::boltzmann) return boltzmann_potential_t(x, boltzmann_);
    std::vector<T> terms;
    terms.reserve(components_.size());
    for (std::size_t j = 0; j < components_.size(); ++j) {
      const Vec4& mu = components_[j].mu;
      terms.push_back(log_coefficients_[j] +
                      components_[j].kappa *
                          (mu[0] * x[0] + mu[1] * x[1] + mu[2] * x[2] + mu[3] * x[3]));
    }
    return log_sum_exp(terms);
  }

  double logpdf(const SpherePoint& z) const { return logpdf<double>(z.r4()); }

 private:
  TargetKind kind_ = TargetKind::vmf_mixture;
  std::vector<VmfComponent> components_;
  std::vector<double> log_coefficients_;
  BoltzmannParams boltzmann_;
  bool symmetric_ = false;
};

/// Log-density of a vMF mixture target (alias of TargetDensity::logpdf).
double mixture_logpdf(const TargetDensity& target, const Vec4& x);

/// The two vMF mixtures of the reference experiments, on L(3;2) and L(7;3).
TargetDensity experiment1_mixture();
TargetDensity experiment2_mixture();
/// U(q; 5, e₁, 20, e₁, e₂) with the standard basis of the plane normal to e₁.
BoltzmannParams benzene_params();

/// log of (1/p) Σ_k p_target(g^k x); the target's own log-density when it is
/// flagged symmetric.
template <class T>
T symmetrize_logpdf_t(const LensSpace& lens, const TargetDensity& target,
                      const std::array<T, 4>& x) {
  if (target.symmetric()) return target.logpdf(x);
  std::vector<T> terms;
  terms.reserve(static_cast<std::size_t>(lens.p));
  for (int k = 0; k < lens.p; ++k) terms.push_back(target.logpdf(deck_apply_r4(lens, x, k)));
  return log_sum_exp(terms) - std::log(static_cast<double>(lens.p));
}

double symmetrize_logpdf(const LensSpace& lens, const TargetDensity& target,
                         const SpherePoint& x);

// ---------------------------------------------------------------------------
// Pushforward onto T₁ ∪_A T₂

/// Monte Carlo integrals I_i of the pushforward density over each solid torus,
/// kept in log form so unnormalised targets cannot overflow.
struct NormalizerEstimate {
  double log_I1 = 0.0;
  double log_I2 = 0.0;
  double rel_stderr1 = 0.0;
  double rel_stderr2 = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;

  double I1() const { return std::exp(log_I1); }
  double I2() const { return std::exp(log_I2); }
  double stderr1() const { return rel_stderr1 * I1(); }
  double stderr2() const { return rel_stderr2 * I2(); }
  double log_I(Chart c) const { return c == Chart::one ? log_I1 : log_I2; }
  /// Bernoulli mixture weight I₂ / (I₁ + I₂).
  double mixture_weight() const { return 1.0 / (1.0 + std::exp(log_I1 - log_I2)); }
  /// log(I₁ + I₂).
  double log_total() const {
    const double m = std::max(log_I1, log_I2);
    return m + std::log(std::exp(log_I1 - m) + std::exp(log_I2 - m));
  }
};

class PushforwardDensity {
 public:
  PushforwardDensity(const LensSpace& lens, TargetDensity base)
      : lens_(lens), base_(std::move(base)) {}

  const LensSpace& lens() const { return lens_; }
  const TargetDensity& base() const { return base_; }

  /// log(½ p_sym(lift(θ, x, y))), a density in dθ dx dy on the chart's torus.
  template <class T>
  T logpdf(Chart chart, const T& theta, const T& x, const T& y) const {
    return symmetrize_logpdf_t(lens_, base_, lift_to_r4(lens_, chart, theta, x, y)) -
           std::numbers::ln2;
  }
  double logpdf(const TorusPoint& t) const { return logpdf<double>(t.chart, t.theta, t.x, t.y); }

  void set_normalizers(const NormalizerEstimate& est) {
    normalizers_ = est;
    has_normalizers_ = true;
  }
  bool has_normalizers() const { return has_normalizers_; }
  /// Throws std::logic_error before set_normalizers.
  const NormalizerEstimate& normalizers() const;

  /// log q_i = pushforward log-density − log I_i.
  double normalized_logpdf(const TorusPoint& t) const;
  /// log q_i together with its gradient in (θ, x, y).
  double normalized_logpdf(Chart chart, const Vec3& point, Vec3* gradient) const;

 private:
  LensSpace lens_;
  TargetDensity base_;
  NormalizerEstimate normalizers_;
  bool has_normalizers_ = false;
};

/// Uniform Monte Carlo on [0, 2π) × D² for each chart with n samples per
/// chart. Throws std::invalid_argument for n < 10⁴ and std::runtime_error on a
/// non-finite density value.
NormalizerEstimate estimate_normalizers(const LensSpace& lens, const TargetDensity& target,
                                        std::size_t n, std::uint64_t seed);

}  // namespace lensflow
