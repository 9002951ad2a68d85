#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lensflow/evaluator.hpp"
#include "lensflow/experiment.hpp"

namespace lensflow {

/// Failure to read or write run artifacts.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "LENSFLOW_OUT";

/// $LENSFLOW_OUT if set and non-empty, "out" otherwise.
std::filesystem::path default_output_root();

struct RunOptions {
  std::filesystem::path out_root = "out";
  int seeds = 1;
  /// Progress lines and the summary table go here when non-null.
  std::ostream* log = nullptr;
  int progress_every = 250;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::string run_id;
  std::filesystem::path dir;
  MetricsReport metrics;
  std::array<double, 2> initial_kl{0.0, 0.0};
  std::array<double, 2> seam{0.0, 0.0};
  std::array<double, 2> train_seconds{0.0, 0.0};
  std::vector<std::pair<double, std::array<int, 2>>> mode_sweep;
  double chart2_fraction = 0.0;
  nlohmann::json metrics_json;
};

struct ExperimentRun {
  std::vector<SeedRun> runs;
  /// Written next to the run directories when more than one seed ran.
  std::filesystem::path summary_path;
  nlohmann::json summary;
};

/// Seeds used by `--seeds k`: config.seed, config.seed + 1, ...
std::vector<std::uint64_t> derived_seeds(std::uint64_t base, int count);

/// Independent evaluation stream `stream` of a run seed.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream);

/// Normalizers, both tori trained (two at a time), evaluation and artifacts
/// for each derived seed. Throws ConfigError, TrainingAborted or IoError.
ExperimentRun run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Summary rows for Flow-T₁, Flow-T₂ and Flow-L(p;q), mean ± spread over seeds.
void print_summary(std::ostream& os, const ExperimentConfig& config, const ExperimentRun& run);

/// metrics.json as written, with sorted keys. Identical across repeated runs
/// apart from "timestamp".
std::string metrics_text(const nlohmann::json& metrics);

/// Re-reads a run directory, checks every manifest hash and prints the stored
/// metrics. Returns false if any file is missing or altered.
bool report_run(std::ostream& os, const std::filesystem::path& run_dir);

/// Draws n samples from a run directory (mixture over both tori with the
/// stored weight) or from a single checkpoint directory. log_q is filled in
/// when the run's config.json and metrics.json are found, NaN otherwise.
std::vector<LabeledSample> sample_from_disk(const std::filesystem::path& dir, std::size_t n,
                                            std::uint64_t seed);

}  // namespace lensflow
