#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "lensflow/lens_geometry.hpp"

namespace lensflow {

struct PropertyResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct SuiteReport {
  std::vector<PropertyResult> results;

  bool passed() const;
  std::size_t failures() const;
  void append(const SuiteReport& other);
};

/// Maps the suites go through, replaceable so that a deliberately broken
/// convention can be shown to fail the relevant properties.
struct VerifyFixture {
  using LiftFn = std::function<SpherePoint(const LensSpace&, Chart, double theta, double rho,
                                           double phi)>;
  using PsiFn = std::function<Vec4(const Complex& z1, const Complex& z2)>;

  LiftFn lift = chart_lift;
  PsiFn psi = c2_to_r4;
  std::uint64_t seed = 20240611;
};

/// Lens spaces exercised by the geometry suite.
std::vector<LensSpace> verification_lenses();

SuiteReport verify_geometry(const VerifyFixture& fixture = {});
SuiteReport verify_densities(const VerifyFixture& fixture = {});
SuiteReport verify_flow(const VerifyFixture& fixture = {});

/// "geometry", "densities", "flow" or "all". Throws std::invalid_argument for
/// any other name.
SuiteReport run_verification(const std::string& suite, const VerifyFixture& fixture = {});

/// One "PASS"/"FAIL" line per property followed by a summary line.
void print_report(std::ostream& os, const SuiteReport& report);

// ---------------------------------------------------------------------------
// Individual checks shared with the acceptance suite

struct CheckOutcome {
  bool passed = false;
  double worst = 0.0;  // largest observed error measure
  std::string detail;
};

/// Largest relative gap between analytic and central-difference
/// log-determinants (disk maps, single layers, full pipeline before the
/// circle wrap) over one random small flow.
CheckOutcome check_logdet_trial(std::uint64_t seed, double tolerance = 1e-4);

/// Largest relative gap between backprop and central-difference gradients of
/// the annealed loss over every parameter of a random one-pair flow.
CheckOutcome check_gradient_trial(std::uint64_t seed, double tolerance = 1e-4);

}  // namespace lensflow
