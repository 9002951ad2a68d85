#include "lensflow/target_densities.hpp"

#include <random>
#include <sstream>

#include "lensflow/bessel.hpp"

namespace lensflow {
namespace {

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }
double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm4(const Vec4& v) {
  return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]);
}

void require_unit4(const Vec4& q, const char* what) {
  if (std::abs(norm4(q) - 1.0) > kUnitTolerance) {
    std::ostringstream os;
    os << what << ": expected a unit vector in R^4, norm is " << norm4(q);
    throw std::domain_error(os.str());
  }
}

Vec4 random_unit4(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec4 v{normal(rng), normal(rng), normal(rng), normal(rng)};
  const double n = norm4(v);
  for (double& c : v) c /= n;
  return v;
}

}  // namespace

double vmf_log_normalizer(double kappa) {
  if (!(kappa > 0.0)) throw std::invalid_argument("vMF concentration must be positive");
  return std::log(kappa) - std::log(4.0 * std::numbers::pi * std::numbers::pi) -
         log_bessel_i1(kappa);
}

double vmf_logpdf(const Vec4& x, const Vec4& mu, double kappa) {
  const double log_c = vmf_log_normalizer(kappa);
  return log_c + kappa * (mu[0] * x[0] + mu[1] * x[1] + mu[2] * x[2] + mu[3] * x[3]);
}

void validate(const BoltzmannParams& params) {
  auto unit = [](const Vec3& v, const char* name) {
    if (std::abs(norm3(v) - 1.0) > kUnitTolerance) {
      throw std::invalid_argument(std::string("Boltzmann parameter ") + name +
                                  " must be a unit vector");
    }
  };
  unit(params.c, "c");
  unit(params.x0, "x0");
  unit(params.y0, "y0");
  unit(params.e2, "e2");
  unit(params.e3, "e3");
  if (std::abs(dot3(params.c, params.e2)) > kUnitTolerance ||
      std::abs(dot3(params.c, params.e3)) > kUnitTolerance ||
      std::abs(dot3(params.e2, params.e3)) > kUnitTolerance) {
    throw std::invalid_argument("Boltzmann basis {c, e2, e3} must be orthonormal");
  }
  const Vec3& a = params.c;
  const Vec3& b = params.e2;
  const Vec3 cross{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                   a[0] * b[1] - a[1] * b[0]};
  if (dot3(cross, params.e3) < 1.0 - kUnitTolerance) {
    throw std::invalid_argument("Boltzmann basis {c, e2, e3} must be right-handed");
  }
}

Mat3 rotation_from_quaternion(const Vec4& q) {
  require_unit4(q, "rotation_from_quaternion");
  return rotation_matrix(q);
}

double hindered_angle(const Vec4& q, const BoltzmannParams& params) {
  require_unit4(q, "hindered_angle");
  bool degenerate = false;
  const double phi = hindered_angle_t(q, params, &degenerate);
  if (degenerate) {
    throw std::domain_error("hindered_angle: R(q)y0 is parallel to c, angle undefined");
  }
  return phi;
}

double boltzmann_potential(const Vec4& q, const BoltzmannParams& params) {
  return boltzmann_potential_t(q, params);
}

double boltzmann_logpdf_unnorm(const Vec4& q, const BoltzmannParams& params) {
  return boltzmann_potential(q, params);
}

TargetDensity TargetDensity::vmf_mixture(std::vector<VmfComponent> components) {
  if (components.empty()) throw std::invalid_argument("vMF mixture needs at least one component");
  double total = 0.0;
  for (const auto& c : components) {
    require_unit4(c.mu, "vMF mean direction");
    if (!(c.kappa > 0.0)) throw std::invalid_argument("vMF concentration must be positive");
    if (!(c.weight > 0.0 && c.weight <= 1.0)) {
      throw std::invalid_argument("vMF mixture weights must lie in (0, 1]");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream os;
    os.precision(17);
    os << "vMF mixture weights must sum to 1, got " << total;
    throw std::invalid_argument(os.str());
  }
  TargetDensity t;
  t.kind_ = TargetKind::vmf_mixture;
  t.components_ = std::move(components);
  for (const auto& c : t.components_) {
    t.log_coefficients_.push_back(std::log(c.weight) + vmf_log_normalizer(c.kappa));
  }
  return t;
}

TargetDensity TargetDensity::boltzmann(const BoltzmannParams& params) {
  validate(params);
  TargetDensity t;
  t.kind_ = TargetKind::boltzmann;
  t.boltzmann_ = params;
  return t;
}

void TargetDensity::declare_symmetric(const LensSpace& lens, std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  for (int i = 0; i < n; ++i) {
    const Vec4 x = random_unit4(rng);
    const double base = logpdf<double>(x);
    for (int k = 1; k < lens.p; ++k) {
      const double moved = logpdf<double>(deck_apply_r4(lens, x, k));
      if (!(std::abs(moved - base) <= 1e-9)) {
        std::ostringstream os;
        os << "target is not invariant under the deck action of L(" << lens.p << ";" << lens.q
           << "): |Δ log p| = " << std::abs(moved - base) << " at k=" << k;
        throw std::invalid_argument(os.str());
      }
    }
  }
  symmetric_ = true;
}

double mixture_logpdf(const TargetDensity& target, const Vec4& x) { return target.logpdf(x); }

TargetDensity experiment1_mixture() {
  using std::numbers::pi;
  const Vec4 c1{1.0, 0.0, 0.0, 0.0};
  const Vec4 c2{std::cos(pi / 3), std::sin(pi / 3), 0.0, 0.0};
  const Vec4 b1{0.0, 0.0, 1.0, 0.0};
  const Vec4 b2{0.0, 0.0, std::cos(pi / 4), std::sin(pi / 4)};
  const Vec4 b3{0.0, 0.0, std::cos(pi / 2), std::sin(pi / 2)};
  return TargetDensity::vmf_mixture({{c1, 35.0, 0.5 * 0.5},
                                     {c2, 35.0, 0.5 * 0.5},
                                     {b1, 35.0, 0.5 / 3.0},
                                     {b2, 35.0, 0.5 / 3.0},
                                     {b3, 35.0, 0.5 / 3.0}});
}

TargetDensity experiment2_mixture() {
  using std::numbers::pi;
  const Vec4 c1{std::sqrt(2.0 / 3.0), 0.0, std::sqrt(1.0 / 3.0), 0.0};
  const Vec4 c2{std::sqrt(0.75) * std::cos(pi / 7), std::sqrt(0.75) * std::sin(pi / 7),
                std::sqrt(0.25), 0.0};
  const Vec4 b1{0.0, std::sqrt(0.25), std::sqrt(0.75), 0.0};
  const Vec4 b2{std::sqrt(1.0 / 7.0), std::sqrt(1.0 / 7.0),
                std::sqrt(5.0 / 7.0) * std::cos(4 * pi / 21),
                std::sqrt(5.0 / 7.0) * std::sin(4 * pi / 21)};
  return TargetDensity::vmf_mixture({{c1, 65.0, (1.0 / 3.0) * (1.0 / 3.0)},
                                     {c2, 55.0, (1.0 / 3.0) * (2.0 / 3.0)},
                                     {b1, 65.0, (2.0 / 3.0) * (2.0 / 3.0)},
                                     {b2, 80.0, (2.0 / 3.0) * (1.0 / 3.0)}});
}

BoltzmannParams benzene_params() { return BoltzmannParams{}; }

double symmetrize_logpdf(const LensSpace& lens, const TargetDensity& target,
                         const SpherePoint& x) {
  return symmetrize_logpdf_t<double>(lens, target, x.r4());
}

const NormalizerEstimate& PushforwardDensity::normalizers() const {
  if (!has_normalizers_) {
    throw std::logic_error("pushforward normalizers I1, I2 have not been estimated");
  }
  return normalizers_;
}

double PushforwardDensity::normalized_logpdf(const TorusPoint& t) const {
  return logpdf(t) - normalizers().log_I(t.chart);
}

double PushforwardDensity::normalized_logpdf(Chart chart, const Vec3& point,
                                             Vec3* gradient) const {
  const double log_i = normalizers().log_I(chart);
  if (!gradient) return logpdf<double>(chart, point[0], point[1], point[2]) - log_i;
  using J = ceres::Jet<double, 3>;
  const J value = logpdf<J>(chart, J(point[0], 0), J(point[1], 1), J(point[2], 2));
  for (int i = 0; i < 3; ++i) (*gradient)[i] = value.v[i];
  return value.a - log_i;
}

NormalizerEstimate estimate_normalizers(const LensSpace& lens, const TargetDensity& target,
                                        std::size_t n, std::uint64_t seed) {
  if (n < 10000) throw std::invalid_argument("estimate_normalizers needs at least 10^4 samples");
  const PushforwardDensity density(lens, target);
  NormalizerEstimate est;
  est.n = n;
  est.seed = seed;
  std::vector<double> logs(n);
  for (Chart chart : {Chart::one, Chart::two}) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(chart_index(chart) + 1)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double theta = kTwoPi * unif(rng);
      const double radius = std::sqrt(unif(rng));
      const double angle = kTwoPi * unif(rng);
      const double l =
          density.logpdf<double>(chart, theta, radius * std::cos(angle), radius * std::sin(angle));
      if (std::isnan(l) || l == std::numeric_limits<double>::infinity()) {
        throw std::runtime_error("estimate_normalizers: non-finite density value");
      }
      logs[i] = l;
      peak = std::max(peak, l);
    }
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double l : logs) {
      const double e = std::exp(l - peak);
      sum += e;
      sum_sq += e * e;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
    const double log_i = std::log(2.0 * std::numbers::pi * std::numbers::pi) + peak + std::log(mean);
    const double rel = std::sqrt(var / static_cast<double>(n - 1)) / mean;
    if (chart == Chart::one) {
      est.log_I1 = log_i;
      est.rel_stderr1 = rel;
    } else {
      est.log_I2 = log_i;
      est.rel_stderr2 = rel;
    }
  }
  return est;
}

}  // namespace lensflow
