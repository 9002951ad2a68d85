#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "lensflow/flow_model.hpp"
#include "lensflow/target_densities.hpp"

namespace lensflow {

/// Monte Carlo mean with its standard error.
struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_used = 0;
  std::size_t n_nonfinite = 0;
};

/// A trained flow on one solid torus together with its prior.
struct TorusModel {
  const FlowTransform* flow = nullptr;
  PriorParams prior;
};

/// E_z[log p_Z(z) − log|det J(z)| − log q_i(F(z))] over n fresh prior samples.
/// Non-finite summands are dropped and counted; more than 1% of them is an
/// error (std::runtime_error). Requires n ≥ 10³.
Estimate local_kl(const TorusModel& model, const LogDensityFn& target, std::size_t n,
                  std::mt19937_64& rng);

/// Direct estimate of KL(X_a | X) on T₁ ∪_A T₂: charts drawn from
/// Bernoulli(w), the model density is w_i p_Z / |det J| and the target is the
/// pushforward normalised by I₁ + I₂.
Estimate global_kl(const std::array<TorusModel, 2>& models, const PushforwardDensity& target,
                   double w, std::size_t n, std::mt19937_64& rng);

/// (1 − w) kl1 + w kl2.
double kl_decomposition(double kl1, double kl2, double w);

struct LabeledSample {
  Chart chart = Chart::one;
  double theta = 0.0;
  double x = 0.0;
  double y = 0.0;
  double log_q = 0.0;      // normalised target log-density on T₁ ∪_A T₂
  double log_model = 0.0;  // log p_Z(z) − log|det J(z)|
};

/// n draws of (1 − X_B) F₁(Y₁) + X_B F₂(Y₂), X_B ~ Bernoulli(w).
std::vector<LabeledSample> sample_model(const std::array<TorusModel, 2>& models,
                                        const PushforwardDensity& target, double w,
                                        std::size_t n, std::mt19937_64& rng);

/// Keeps the ⌈keep_fraction · n⌉ samples with the largest log_q, plus ties at
/// the threshold, either per chart or pooled. Throws on empty input or a
/// fraction outside (0, 1].
std::vector<LabeledSample> top_percentile_filter(const std::vector<LabeledSample>& samples,
                                                 double keep_fraction = 0.01,
                                                 bool per_chart = true);

/// Greedy leader clustering in descending log_q order under
/// √(d_arc(θ,θ')² + Δx² + Δy²); clusters with at least min_count members are
/// counted as modes, per chart.
std::array<int, 2> count_modes(const std::vector<LabeledSample>& samples, double radius,
                               int min_count);

struct MetricsReport {
  Estimate kl_T1;
  Estimate kl_T2;
  Estimate kl_global;
  double kl_decomposed = 0.0;
  double I1 = 0.0;
  double I2 = 0.0;
  double w = 0.0;
  std::array<int, 2> mode_counts{0, 0};
  std::vector<std::uint64_t> seeds;
  std::size_t n_kl = 0;
  std::size_t n_samples = 0;
};

void write_samples_csv(std::ostream& os, const std::vector<LabeledSample>& samples);

/// Scatter of (θ, atan2(y, x)) for one chart, coloured by log_q quantile.
void write_scatter_svg(std::ostream& os, const std::vector<LabeledSample>& samples, Chart chart);

}  // namespace lensflow
