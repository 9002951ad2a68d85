#include "lensflow/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lensflow/bessel.hpp"
#include "lensflow/flow_model.hpp"
#include "lensflow/target_densities.hpp"

namespace lensflow {
namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << v;
  return os.str();
}

class SuiteBuilder {
 public:
  explicit SuiteBuilder(std::string suite) : suite_(std::move(suite)) {}

  // `check` returns an empty string on success and a failure detail otherwise.
  template <class Fn>
  void add(const std::string& name, Fn&& check) {
    PropertyResult r;
    r.suite = suite_;
    r.name = name;
    const auto start = Clock::now();
    try {
      r.detail = check();
      r.passed = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
      r.passed = false;
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    report_.results.push_back(std::move(r));
  }

  SuiteReport take() { return std::move(report_); }

 private:
  std::string suite_;
  SuiteReport report_;
};

std::string lens_name(const LensSpace& lens) {
  return "L(" + std::to_string(lens.p) + ";" + std::to_string(lens.q) + ")";
}

SpherePoint random_sphere(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec4 v{};
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& c : v) {
      c = normal(rng);
      n2 += c * c;
    }
  } while (n2 < 1e-12);
  const double inv = 1.0 / std::sqrt(n2);
  for (double& c : v) c *= inv;
  return SpherePoint::from_r4(v);
}

double circular_gap(double a, double b) {
  const double d = std::abs(wrap_angle(a) - wrap_angle(b));
  return std::min(d, kTwoPi - d);
}

double r4_distance(const Vec4& a, const Vec4& b) {
  double s = 0.0;
  for (int i = 0; i < 4; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Deck equivalence of two C² points, measured after the fixture's ψ.
bool quotient_equal_psi(const LensSpace& lens, const VerifyFixture& fx, const SpherePoint& a,
                        const SpherePoint& b) {
  const Vec4 target = fx.psi(b.z1(), b.z2());
  for (int k = 0; k < lens.p; ++k) {
    const SpherePoint g = deck_apply(lens, a, k);
    if (r4_distance(fx.psi(g.z1(), g.z2()), target) <= kQuotientTolerance) return true;
  }
  return false;
}

Chart chart_of(const SpherePoint& z) {
  return std::norm(z.z1()) <= 0.5 ? Chart::one : Chart::two;
}

// ---------------------------------------------------------------------------
// Finite differences

template <class Fn>
Eigen::Matrix3d jacobian_fd(Fn&& f, const Eigen::Vector3d& x, double h) {
  Eigen::Matrix3d J;
  for (int j = 0; j < 3; ++j) {
    Eigen::Vector3d xp = x;
    Eigen::Vector3d xm = x;
    xp(j) += h;
    xm(j) -= h;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

double logdet_gap(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

void randomize(FlowTransform& flow, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& nt : named_tensors(flow)) {
    for (Eigen::Index i = 0; i < nt.tensor->size(); ++i) nt.tensor->data()[i] = normal(rng);
  }
}

FlowTransform random_flow(std::mt19937_64& rng, int n_pairs, int hidden, CircleMode circle,
                          double seam) {
  FlowTransform flow = FlowTransform::zeros(n_pairs, hidden);
  flow.circle = circle;
  flow.seam = seam;
  randomize(flow, rng, 0.5);
  return flow;
}

// Smooth stand-in target on the torus with a closed-form gradient.
double smooth_target(const Vec3& p, Vec3* grad) {
  const double dx = p[1] - 0.2;
  const double dy = p[2] + 0.1;
  if (grad) {
    (*grad)[0] = -2.0 * std::sin(p[0] - 1.0);
    (*grad)[1] = -6.0 * dx;
    (*grad)[2] = -6.0 * dy;
  }
  return 2.0 * std::cos(p[0] - 1.0) - 3.0 * (dx * dx + dy * dy);
}

// Annealed loss evaluated through the forward pass only.
double forward_loss(const FlowTransform& flow, const PriorParams& prior,
                    const Eigen::Matrix3Xd& batch, double beta) {
  const FlowBatch out = flow_forward_batch(flow, batch);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < batch.cols(); ++i) {
    const double model =
        prior_logpdf(prior, batch(0, i), batch(1, i), batch(2, i)) - out.logdet(i);
    const Vec3 y{out.points(0, i), out.points(1, i), out.points(2, i)};
    sum += (1.0 + beta) * model - smooth_target(y, nullptr);
  }
  return sum / static_cast<double>(batch.cols());
}

}  // namespace

bool SuiteReport::passed() const { return failures() == 0; }

std::size_t SuiteReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.passed; }));
}

void SuiteReport::append(const SuiteReport& other) {
  results.insert(results.end(), other.results.begin(), other.results.end());
}

std::vector<LensSpace> verification_lenses() {
  return {make_lens(3, 2), make_lens(7, 3), make_lens(12, 1), make_lens(2, 1)};
}

// ---------------------------------------------------------------------------
// Geometry

SuiteReport verify_geometry(const VerifyFixture& fx) {
  SuiteBuilder suite("geometry");
  std::mt19937_64 rng(fx.seed);
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (const LensSpace& lens : verification_lenses()) {
    const std::string tag = " " + lens_name(lens);

    suite.add("gluing matrix has det 1" + tag, [&]() -> std::string {
      if (lens.gluing_determinant() != 1) {
        return "det A = " + std::to_string(lens.gluing_determinant());
      }
      if ((static_cast<long long>(lens.r) * lens.q) % lens.p != 1 % lens.p) return "rq != 1 mod p";
      return {};
    });

    suite.add("deck action preserves norm and has order p" + tag, [&]() -> std::string {
      double worst_norm = 0.0;
      double worst_order = 0.0;
      for (int i = 0; i < 1000; ++i) {
        const SpherePoint z = random_sphere(rng);
        for (int k = 0; k < lens.p; ++k) {
          worst_norm = std::max(worst_norm, std::abs(deck_apply(lens, z, k).norm() - 1.0));
        }
        worst_order = std::max(worst_order, r4_distance(deck_apply(lens, z, lens.p).r4(), z.r4()));
      }
      if (worst_norm > 1e-12 || worst_order > 1e-12) {
        return "norm drift " + fmt(worst_norm) + ", order-p drift " + fmt(worst_order);
      }
      return {};
    });

    suite.add("deck action is free" + tag, [&]() -> std::string {
      double closest = 1e300;
      for (int i = 0; i < 10000; ++i) {
        const SpherePoint z = random_sphere(rng);
        for (int k = 1; k < lens.p; ++k) {
          closest = std::min(closest, r4_distance(deck_apply(lens, z, k).r4(), z.r4()));
        }
      }
      if (!(closest > 1e-3)) return "a deck image came within " + fmt(closest);
      return {};
    });

    suite.add("chart inverse undoes chart lift" + tag, [&]() -> std::string {
      double worst = 0.0;
      for (Chart chart : {Chart::one, Chart::two}) {
        for (int i = 0; i < 1000; ++i) {
          const double theta = angle(rng);
          const double rho = 1.0 - unit(rng);  // (0, 1]
          const double phi = angle(rng);
          const ChartCoords back = chart_inverse(lens, chart, fx.lift(lens, chart, theta, rho, phi));
          worst = std::max({worst, circular_gap(back.theta, theta), std::abs(back.rho - rho),
                            circular_gap(back.phi, phi) * std::min(1.0, rho)});
        }
      }
      if (worst > 1e-9) return "largest coordinate error " + fmt(worst);
      return {};
    });

    suite.add("chart inverse is constant on fibers" + tag, [&]() -> std::string {
      double worst = 0.0;
      for (int i = 0; i < 1000; ++i) {
        const SpherePoint z = random_sphere(rng);
        const Chart chart = chart_of(z);
        const ChartCoords base = chart_inverse(lens, chart, z);
        for (int k = 1; k < lens.p; ++k) {
          const ChartCoords c = chart_inverse(lens, chart, deck_apply(lens, z, k));
          double gap = std::max(circular_gap(c.theta, base.theta), std::abs(c.rho - base.rho));
          if (base.rho > 1e-6) gap = std::max(gap, circular_gap(c.phi, base.phi));
          worst = std::max(worst, gap);
        }
      }
      if (worst > 1e-9) return "largest fiber disagreement " + fmt(worst);
      return {};
    });

    suite.add("boundary tori glue through A" + tag, [&]() -> std::string {
      int failures = 0;
      for (int i = 0; i < 1000; ++i) {
        const double theta = angle(rng);
        const double phi = angle(rng);
        const auto [theta2, phi2] = boundary_glue(lens, theta, phi);
        const SpherePoint a = fx.lift(lens, Chart::one, theta, 1.0, phi);
        const SpherePoint b = fx.lift(lens, Chart::two, theta2, 1.0, phi2);
        if (!quotient_equal_psi(lens, fx, a, b)) ++failures;
      }
      if (failures > 0) return std::to_string(failures) + " of 1000 boundary points do not glue";
      return {};
    });
  }

  suite.add("C2 and R4 coordinates round-trip", [&]() -> std::string {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const SpherePoint z = random_sphere(rng);
      const auto [z1, z2] = r4_to_c2(z.r4());
      worst = std::max({worst, std::abs(z1 - z.z1()), std::abs(z2 - z.z2()),
                        r4_distance(c2_to_r4(z1, z2), z.r4())});
    }
    if (worst != 0.0) return "round-trip error " + fmt(worst);
    return {};
  });

  suite.add("torus points agree with the polar chart lift", [&]() -> std::string {
    const LensSpace lens = make_lens(7, 3);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Chart chart = i % 2 ? Chart::one : Chart::two;
      const double theta = angle(rng);
      const double rho = std::sqrt(unit(rng));
      const double phi = angle(rng);
      const TorusPoint t{chart, theta, rho * std::cos(phi), rho * std::sin(phi)};
      worst = std::max(worst, r4_distance(torus_to_sphere(lens, t).r4(),
                                          fx.lift(lens, chart, theta, rho, phi).r4()));
    }
    if (worst > 1e-12) return "largest disagreement " + fmt(worst);
    return {};
  });
  return suite.take();
}

// ---------------------------------------------------------------------------
// Densities

SuiteReport verify_densities(const VerifyFixture& fx) {
  SuiteBuilder suite("densities");
  std::mt19937_64 rng(fx.seed + 1);
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);

  struct Case {
    std::string name;
    LensSpace lens;
    TargetDensity target;
  };
  TargetDensity boltz = TargetDensity::boltzmann(benzene_params());
  const std::vector<Case> cases{{"exp1", make_lens(3, 2), experiment1_mixture()},
                                {"exp2", make_lens(7, 3), experiment2_mixture()},
                                {"boltz", make_lens(12, 1), boltz}};

  for (const Case& c : cases) {
    suite.add("symmetrized density is deck invariant (" + c.name + ")", [&]() -> std::string {
      double worst = 0.0;
      for (int i = 0; i < 10000; ++i) {
        const SpherePoint z = random_sphere(rng);
        const double base = symmetrize_logpdf_t<double>(c.lens, c.target, fx.psi(z.z1(), z.z2()));
        const int k = 1 + i % (c.lens.p - 1);
        const SpherePoint g = deck_apply(c.lens, z, k);
        const double moved = symmetrize_logpdf_t<double>(c.lens, c.target, fx.psi(g.z1(), g.z2()));
        worst = std::max(worst, std::abs(moved - base));
      }
      if (worst > 1e-9) return "largest log-density change " + fmt(worst);
      return {};
    });

    suite.add("pushforward density is continuous across the gluing (" + c.name + ")",
              [&]() -> std::string {
                double worst = 0.0;
                for (int i = 0; i < 1000; ++i) {
                  const double theta = angle(rng);
                  const double phi = angle(rng);
                  const auto [theta2, phi2] = boundary_glue(c.lens, theta, phi);
                  const SpherePoint a = fx.lift(c.lens, Chart::one, theta, 1.0, phi);
                  const SpherePoint b = fx.lift(c.lens, Chart::two, theta2, 1.0, phi2);
                  const double pa =
                      symmetrize_logpdf_t<double>(c.lens, c.target, fx.psi(a.z1(), a.z2()));
                  const double pb =
                      symmetrize_logpdf_t<double>(c.lens, c.target, fx.psi(b.z1(), b.z2()));
                  worst = std::max(worst, std::abs(pa - pb));
                }
                if (worst > 1e-9) return "largest jump " + fmt(worst);
                return {};
              });
  }

  suite.add("Boltzmann potential is invariant under the L(12;1) deck action",
            [&]() -> std::string {
              const LensSpace lens = make_lens(12, 1);
              const BoltzmannParams params = benzene_params();
              double worst = 0.0;
              for (int i = 0; i < 10000; ++i) {
                const SpherePoint z = random_sphere(rng);
                const SpherePoint g = deck_apply(lens, z, 1 + i % 11);
                const double a = boltzmann_potential_t<double>(fx.psi(z.z1(), z.z2()), params);
                const double b = boltzmann_potential_t<double>(fx.psi(g.z1(), g.z2()), params);
                worst = std::max(worst, std::abs(a - b));
              }
              if (worst > 1e-9) return "largest potential change " + fmt(worst);
              return {};
            });

  suite.add("rotation matrices are proper orthogonal", [&]() -> std::string {
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const Mat3 R = rotation_from_quaternion(random_sphere(rng).r4());
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          double dot = 0.0;
          for (int k = 0; k < 3; ++k) dot += R[k][a] * R[k][b];
          worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
        }
      }
      const double det = R[0][0] * (R[1][1] * R[2][2] - R[1][2] * R[2][1]) -
                         R[0][1] * (R[1][0] * R[2][2] - R[1][2] * R[2][0]) +
                         R[0][2] * (R[1][0] * R[2][1] - R[1][1] * R[2][0]);
      worst = std::max(worst, std::abs(det - 1.0));
    }
    if (worst > 1e-9) return "largest deviation " + fmt(worst);
    return {};
  });

  suite.add("vMF components integrate to one", [&]() -> std::string {
    // ∫_{S³} f dvol = ∫_0^π f(cos t) 4π sin²t dt, by composite Simpson.
    double worst = 0.0;
    for (double kappa : {1.0, 5.0, 35.0, 55.0, 65.0, 80.0}) {
      const int n = 20000;
      const double h = std::numbers::pi / n;
      double sum = 0.0;
      for (int j = 0; j <= n; ++j) {
        const double t = j * h;
        const double w = (j == 0 || j == n) ? 1.0 : (j % 2 ? 4.0 : 2.0);
        const double s = std::sin(t);
        sum += w * std::exp(vmf_logpdf({std::cos(t), s, 0.0, 0.0}, {1.0, 0.0, 0.0, 0.0}, kappa)) *
               4.0 * std::numbers::pi * s * s;
      }
      worst = std::max(worst, std::abs(sum * h / 3.0 - 1.0));
    }
    if (worst > 1e-9) return "largest normalisation error " + fmt(worst);
    return {};
  });

  for (const Case& c : cases) {
    if (!c.target.normalized()) continue;
    suite.add("torus normalizers sum to one within 3 standard errors (" + c.name + ")",
              [&]() -> std::string {
                const NormalizerEstimate est =
                    estimate_normalizers(c.lens, c.target, 200000, fx.seed + 7);
                const double se = std::hypot(est.stderr1(), est.stderr2());
                const double gap = std::abs(est.I1() + est.I2() - 1.0);
                if (gap > 3.0 * se) return "I1+I2-1 = " + fmt(gap) + " vs 3SE " + fmt(3.0 * se);
                return {};
              });
  }
  return suite.take();
}

// ---------------------------------------------------------------------------
// Flow

CheckOutcome check_logdet_trial(std::uint64_t seed, double tolerance) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double h = 1e-5;
  CheckOutcome out;
  std::ostringstream detail;

  // Disk maps.
  {
    const Eigen::Vector2d v(3.0 * normal(rng), 3.0 * normal(rng));
    Eigen::Matrix2d J;
    for (int j = 0; j < 2; ++j) {
      Eigen::Vector2d vp = v, vm = v;
      vp(j) += h;
      vm(j) -= h;
      J.col(j) = (plane_to_disk(vp).point - plane_to_disk(vm).point) / (2.0 * h);
    }
    const double gap = logdet_gap(plane_to_disk(v).logdet, std::log(std::abs(J.determinant())));
    out.worst = std::max(out.worst, gap);
    if (gap > tolerance) detail << "plane_to_disk gap " << fmt(gap) << "; ";

    const double r = 0.95 * std::sqrt(unit(rng));
    const double a = kTwoPi * unit(rng);
    const Eigen::Vector2d w(r * std::cos(a), r * std::sin(a));
    for (int j = 0; j < 2; ++j) {
      Eigen::Vector2d wp = w, wm = w;
      wp(j) += h;
      wm(j) -= h;
      J.col(j) = (disk_to_plane(wp).point - disk_to_plane(wm).point) / (2.0 * h);
    }
    const double gap2 = logdet_gap(disk_to_plane(w).logdet, std::log(std::abs(J.determinant())));
    out.worst = std::max(out.worst, gap2);
    if (gap2 > tolerance) detail << "disk_to_plane gap " << fmt(gap2) << "; ";
  }

  const CircleMode circle = seed % 2 == 0 ? CircleMode::wrap : CircleMode::interval;
  const double seam = kTwoPi * unit(rng);
  const FlowTransform flow = random_flow(rng, 2, 8, circle, seam);

  // Single layers in the coupling domain.
  for (const CouplingLayer& layer : flow.layers) {
    const Eigen::Vector3d x(2.0 * normal(rng), normal(rng), normal(rng));
    auto f = [&](const Eigen::Vector3d& p) {
      const CouplingResult r = coupling_forward(layer, p(0), p.tail<2>());
      return Eigen::Vector3d(r.theta, r.v(0), r.v(1));
    };
    const double analytic = coupling_forward(layer, x(0), x.tail<2>()).logdet;
    const double numeric = std::log(std::abs(jacobian_fd(f, x, h).determinant()));
    const double gap = logdet_gap(analytic, numeric);
    out.worst = std::max(out.worst, gap);
    if (gap > tolerance) detail << to_string(layer.kind) << " layer gap " << fmt(gap) << "; ";
  }

  // Full pipeline before the final circle reduction. In interval mode inputs
  // and outputs are kept away from the seam: an output squeezed against it
  // has too few significant digits for a central difference.
  {
    Eigen::Vector3d x;
    for (;;) {
      const double r = 0.9 * std::sqrt(unit(rng));
      const double a = kTwoPi * unit(rng);
      x << kTwoPi * unit(rng), r * std::cos(a), r * std::sin(a);
      if (circle == CircleMode::wrap) break;
      if (circular_gap(x(0), seam) < 0.3) continue;
      if (circular_gap(flow_forward(flow, x(0), x(1), x(2)).theta, seam) >= 1e-3) break;
    }
    auto f = [&](const Eigen::Vector3d& p) {
      const FlowOutput o = flow_forward(flow, p(0), p(1), p(2));
      return Eigen::Vector3d(o.theta_unwrapped, o.x, o.y);
    };
    const double analytic = flow_forward(flow, x(0), x(1), x(2)).logdet;
    const double numeric = std::log(std::abs(jacobian_fd(f, x, h).determinant()));
    const double gap = logdet_gap(analytic, numeric);
    out.worst = std::max(out.worst, gap);
    if (gap > tolerance) detail << "pipeline (" << to_string(circle) << ") gap " << fmt(gap);
  }
  out.detail = detail.str();
  out.passed = out.detail.empty();
  return out;
}

CheckOutcome check_gradient_trial(std::uint64_t seed, double tolerance) {
  std::mt19937_64 rng(seed);
  const CircleMode circle = seed % 2 == 0 ? CircleMode::wrap : CircleMode::interval;
  FlowTransform flow = random_flow(rng, 1, 8, circle, std::numbers::pi);
  const PriorParams prior;
  const Eigen::Matrix3Xd batch = prior_sample(prior, 16, rng);
  const double beta = 0.3;

  const LossGradient lg = flow_backward_gradients(flow, prior, smooth_target, batch, beta);
  auto analytic = named_tensors(const_cast<FlowTransform&>(lg.grad));
  auto params = named_tensors(flow);

  CheckOutcome out;
  std::size_t bad = 0;
  std::string first_bad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Eigen::MatrixXd& p = *params[t].tensor;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double a = analytic[t].tensor->data()[i];
      const auto central = [&](double h) {
        const double saved = p.data()[i];
        p.data()[i] = saved + h;
        const double up = forward_loss(flow, prior, batch, beta);
        p.data()[i] = saved - h;
        const double down = forward_loss(flow, prior, batch, beta);
        p.data()[i] = saved;
        return (up - down) / (2.0 * h);
      };
      const auto relative = [&](double numeric) {
        const double scale = std::max(std::abs(a), std::abs(numeric));
        return scale > 0.0 ? std::abs(a - numeric) / scale : 0.0;
      };
      double numeric = central(1e-5);
      // A ReLU kink inside the stencil makes the difference quotient average
      // two slopes; retry once with a stencil ten times narrower.
      if (std::abs(a - numeric) > 1e-8 && relative(numeric) > tolerance) numeric = central(1e-6);
      const double diff = std::abs(a - numeric);
      const double rel = relative(numeric);
      if (diff > 1e-8) out.worst = std::max(out.worst, rel);
      if (diff > 1e-8 && rel > tolerance) {
        if (bad++ == 0) {
          first_bad = params[t].name + "[" + std::to_string(i) + "] analytic " + fmt(a) +
                      " numeric " + fmt(numeric);
        }
      }
    }
  }
  out.passed = bad == 0;
  if (!out.passed) out.detail = std::to_string(bad) + " mismatches, first " + first_bad;
  return out;
}

SuiteReport verify_flow(const VerifyFixture& fx) {
  SuiteBuilder suite("flow");
  std::mt19937_64 rng(fx.seed + 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  suite.add("zero-parameter flow is the identity with zero log-determinant",
            [&]() -> std::string {
              double worst_wrap = 0.0;
              double worst_interval = 0.0;
              const PriorParams prior;
              const Eigen::Matrix3Xd pts = prior_sample(prior, 1000, rng);
              for (CircleMode mode : {CircleMode::wrap, CircleMode::interval}) {
                FlowTransform flow = FlowTransform::zeros(3);
                flow.circle = mode;
                const FlowBatch out = flow_forward_batch(flow, pts);
                double w = (out.points - pts).cwiseAbs().maxCoeff();
                w = std::max(w, out.logdet.cwiseAbs().maxCoeff());
                (mode == CircleMode::wrap ? worst_wrap : worst_interval) = w;
              }
              if (worst_wrap > 1e-12) return "wrap mode deviates by " + fmt(worst_wrap);
              if (worst_interval > 1e-12) return "interval mode deviates by " + fmt(worst_interval);
              return {};
            });

  suite.add("analytic log-determinants match finite differences", [&]() -> std::string {
    for (std::uint64_t t = 0; t < 100; ++t) {
      const CheckOutcome c = check_logdet_trial(fx.seed * 1000 + t);
      if (!c.passed) return "trial " + std::to_string(t) + ": " + c.detail;
    }
    return {};
  });

  suite.add("backprop gradients match finite differences", [&]() -> std::string {
    for (std::uint64_t t = 0; t < 100; ++t) {
      const CheckOutcome c = check_gradient_trial(fx.seed * 1000 + t);
      if (!c.passed) return "trial " + std::to_string(t) + ": " + c.detail;
    }
    return {};
  });

  suite.add("flow outputs stay on the solid torus", [&]() -> std::string {
    for (CircleMode mode : {CircleMode::wrap, CircleMode::interval}) {
      const FlowTransform flow = random_flow(rng, 2, 16, mode, kTwoPi * unit(rng));
      Eigen::Matrix3Xd pts(3, 100000);
      for (Eigen::Index i = 0; i < pts.cols(); ++i) {
        const double r = std::sqrt(unit(rng));
        const double a = kTwoPi * unit(rng);
        pts.col(i) << kTwoPi * unit(rng), r * std::cos(a), r * std::sin(a);
      }
      const FlowBatch out = flow_forward_batch(flow, pts);
      for (Eigen::Index i = 0; i < pts.cols(); ++i) {
        const double th = out.points(0, i);
        const double r2 = out.points(1, i) * out.points(1, i) + out.points(2, i) * out.points(2, i);
        if (!(th >= 0.0 && th < kTwoPi) || !(r2 <= 1.0)) {
          return std::string(to_string(mode)) + " output outside the torus at sample " +
                 std::to_string(i);
        }
      }
    }
    return {};
  });

  suite.add("prior density integrates to one", [&]() -> std::string {
    const PriorParams prior;
    const int n = 1000000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = std::sqrt(unit(rng));
      const double a = kTwoPi * unit(rng);
      sum += std::exp(prior_logpdf(prior, kTwoPi * unit(rng), r * std::cos(a), r * std::sin(a)));
    }
    const double integral = kTwoPi * std::numbers::pi * sum / n;
    if (std::abs(integral - 1.0) > 0.01) return "integral " + fmt(integral);
    return {};
  });

  suite.add("prior circle samples match the von Mises mean resultant", [&]() -> std::string {
    const PriorParams prior;
    const int n = 100000;
    const Eigen::Matrix3Xd pts = prior_sample(prior, n, rng);
    double sum = 0.0;
    double sum2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double c = std::cos(pts(0, i));
      sum += c;
      sum2 += c * c;
    }
    const double mean = sum / n;
    const double sd = std::sqrt((sum2 / n - mean * mean) / n);
    const double expected = std::exp(log_bessel_i1(prior.kappa) - log_bessel_i0(prior.kappa));
    if (std::abs(mean - expected) > 3.0 * sd) {
      return "E[cos] " + fmt(mean) + " vs " + fmt(expected) + " (sd " + fmt(sd) + ")";
    }
    return {};
  });
  return suite.take();
}

SuiteReport run_verification(const std::string& suite, const VerifyFixture& fixture) {
  if (suite == "geometry") return verify_geometry(fixture);
  if (suite == "densities") return verify_densities(fixture);
  if (suite == "flow") return verify_flow(fixture);
  if (suite == "all") {
    SuiteReport r = verify_geometry(fixture);
    r.append(verify_densities(fixture));
    r.append(verify_flow(fixture));
    return r;
  }
  throw std::invalid_argument("unknown suite '" + suite +
                              "' (expected geometry, densities, flow or all)");
}

void print_report(std::ostream& os, const SuiteReport& report) {
  for (const auto& r : report.results) {
    os << (r.passed ? "PASS " : "FAIL ") << "[" << r.suite << "] " << r.name << " ("
       << std::fixed << std::setprecision(2) << r.seconds << " s)";
    if (!r.passed) os << ": " << r.detail;
    os << '\n';
  }
  os << report.results.size() - report.failures() << "/" << report.results.size()
     << " properties passed\n";
}

}  // namespace lensflow
