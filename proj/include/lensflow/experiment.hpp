#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lensflow/flow_model.hpp"
#include "lensflow/lens_geometry.hpp"
#include "lensflow/target_densities.hpp"
#include "lensflow/trainer.hpp"

namespace lensflow {

/// Malformed or invalid experiment configuration. `line()` is 1-based and 0
/// when the problem has no source location.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& message);
  int line() const { return line_; }
  const std::string& message() const { return message_; }

 private:
  int line_;
  std::string message_;
};

struct TargetSpec {
  TargetKind kind = TargetKind::vmf_mixture;
  std::vector<VmfComponent> components;
  BoltzmannParams boltzmann;
  bool symmetric = false;
};

struct TorusSettings {
  PriorParams prior;
  TrainConfig train;
  /// Place the interval-mode seam at the least likely circle angle of the
  /// target instead of train.seam.
  bool auto_seam = true;
};

struct EvalConfig {
  std::size_t n_kl = 100000;
  std::size_t n_samples = 100000;
  double keep_fraction = 0.01;
  double mode_radius = 0.4;
  int mode_min_count = 20;
  std::vector<double> radius_sweep{0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6};
};

struct NormalizerConfig {
  std::size_t n_mc = 200000;
  std::uint64_t seed = 7;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  int p = 2;
  int q = 1;
  TargetSpec target;
  std::array<TorusSettings, 2> tori;
  EvalConfig eval;
  NormalizerConfig normalizer;

  LensSpace lens() const { return make_lens(p, q); }
  /// Builds the target, running the deck-invariance check when it is
  /// declared symmetric.
  TargetDensity make_target() const;
};

/// Parses a JSON experiment document. Unknown keys, missing required blocks
/// and invalid values raise ConfigError carrying the offending line.
ExperimentConfig parse_experiment_config(std::string_view text,
                                         const std::string& source = "<config>",
                                         const std::string& default_name = "experiment");
/// Reads and parses a file, naming the experiment after the file stem unless
/// the document has a name. A missing or unreadable file is a ConfigError at
/// line 0.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// "exp1", "exp2" or "boltz". Throws ConfigError for any other name.
ExperimentConfig builtin_experiment(const std::string& name);
bool is_builtin_experiment(const std::string& name);

/// Canonical JSON form; parse_experiment_config(to_json(c).dump()) == c.
nlohmann::json to_json(const ExperimentConfig& config);

}  // namespace lensflow
