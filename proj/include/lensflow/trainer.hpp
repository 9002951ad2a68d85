#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "lensflow/flow_model.hpp"
#include "lensflow/target_densities.hpp"

namespace lensflow {

struct TrainConfig {
  int epochs = 3000;
  int batch = 6000;
  double lr = 1e-3;
  double beta0 = 0.5;
  int anneal_epochs = 300;
  std::uint64_t seed = 0;
  int n_pairs = 6;
  CircleMode circle = CircleMode::interval;
  double seam = std::numbers::pi;
};

void validate(const TrainConfig& config);

/// Per-torus seed derived from a master seed by a fixed chart offset.
std::uint64_t torus_seed(std::uint64_t master, Chart chart);

/// Orthogonal hidden weights, gain-0.01 Xavier-uniform output weights, zero
/// biases.
FlowTransform init_flow(const TrainConfig& config, std::mt19937_64& rng);

/// β₀ · max(0, 1 − t/T); zero for T = 0.
double anneal_weight(double beta0, double epoch, double anneal_epochs);

struct AdamState {
  FlowTransform m;
  FlowTransform v;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_flow(const FlowTransform& flow);
};

/// Bias-corrected Adam update over named_tensors order. Returns false, leaving
/// everything untouched, if any gradient entry is non-finite.
bool adam_step(AdamState& state, FlowTransform& params, const FlowTransform& grads, double lr);

struct HistoryEntry {
  int epoch = 0;
  double loss = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  double anneal_weight = 0.0;
};

struct TrainResult {
  FlowTransform flow;
  std::vector<HistoryEntry> history;
  int nonfinite_epochs = 0;
  int skipped_steps = 0;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const HistoryEntry&)>;

/// Reverse-KL training of one solid torus against its normalised target q_i.
/// Aborts with TrainingAborted after 10 consecutive non-finite epochs.
TrainResult train_torus(const PushforwardDensity& target, Chart chart, const PriorParams& prior,
                        const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Circle angle where the θ-marginal of q_i is smallest, on a grid of
/// `n_theta` angles with `n_disk` fixed disk points per angle. Used to place
/// the interval-mode seam.
double least_likely_angle(const PushforwardDensity& target, Chart chart, std::uint64_t seed,
                          int n_theta = 256, int n_disk = 1024);

/// Adapts q_i of `target` to the flow's target callback.
LogDensityFn chart_target(const PushforwardDensity& target, Chart chart);

void write_history_csv(std::ostream& os, const std::vector<HistoryEntry>& history);

}  // namespace lensflow
