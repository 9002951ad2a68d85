// lensflow: train, verify, sample and report normalizing flows on lens spaces.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "lensflow/checkpoint.hpp"
#include "lensflow/experiment.hpp"
#include "lensflow/run.hpp"
#include "lensflow/trainer.hpp"
#include "lensflow/verify.hpp"

namespace fs = std::filesystem;
using namespace lensflow;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;
constexpr int kExitIo = 4;

ExperimentConfig resolve_experiment(const std::string& what) {
  if (is_builtin_experiment(what)) return builtin_experiment(what);
  if (!fs::exists(what)) {
    throw ConfigError(what, 0, "not a built-in experiment (exp1, exp2, boltz) or a config file");
  }
  return load_experiment_config(what);
}

int cmd_train(const std::string& what, int seeds, const std::optional<fs::path>& out,
              const std::optional<int>& epochs, bool quiet) {
  ExperimentConfig cfg = resolve_experiment(what);
  if (epochs) {
    for (auto& t : cfg.tori) t.train.epochs = *epochs;
  }
  RunOptions opts;
  opts.out_root = out ? *out : default_output_root();
  opts.seeds = seeds;
  opts.log = quiet ? nullptr : &std::cout;
  const ExperimentRun run = run_experiment(cfg, opts);
  if (quiet) print_summary(std::cout, cfg, run);
  return 0;
}

int cmd_verify(const std::string& suite) {
  const SuiteReport report = run_verification(suite);
  print_report(std::cout, report);
  return report.passed() ? 0 : kExitFailure;
}

int cmd_sample(const fs::path& dir, std::size_t n, std::uint64_t seed,
               const std::optional<fs::path>& out) {
  const auto samples = sample_from_disk(dir, n, seed);
  if (!out) {
    write_samples_csv(std::cout, samples);
    return std::cout ? 0 : kExitIo;
  }
  std::ofstream os(*out);
  if (!os) throw IoError("cannot open " + out->string() + " for writing");
  write_samples_csv(os, samples);
  if (!os) throw IoError("failed writing " + out->string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalizing flows on lens spaces via Heegaard splittings"};
  app.require_subcommand(1);

  std::string experiment;
  int seeds = 1;
  std::optional<fs::path> out_dir;
  std::optional<int> epochs;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train both solid tori of an experiment and evaluate");
  train->add_option("experiment", experiment, "exp1, exp2, boltz or a JSON config file")
      ->required();
  train->add_option("--seeds", seeds, "number of seeds, starting at the config seed")
      ->check(CLI::PositiveNumber);
  train->add_option("--out", out_dir,
                    std::string("output root (default $") + kOutputRootEnv + " or ./out)");
  train->add_option("--epochs", epochs, "override the epoch count of both tori")
      ->check(CLI::PositiveNumber);
  train->add_flag("--quiet", quiet, "only print the final summary");

  std::string suite;
  auto* verify = app.add_subcommand("verify", "Run property suites");
  verify->add_option("suite", suite, "geometry, densities, flow or all")
      ->required()
      ->check(CLI::IsMember({"geometry", "densities", "flow", "all"}));

  fs::path sample_dir;
  std::size_t n_samples = 0;
  std::uint64_t sample_seed = 0;
  std::optional<fs::path> sample_out;
  auto* sample = app.add_subcommand("sample", "Draw samples from a trained run or checkpoint");
  sample->add_option("dir", sample_dir, "run directory or checkpoint directory")->required();
  sample->add_option("--n", n_samples, "number of samples")->required()->check(CLI::PositiveNumber);
  sample->add_option("--seed", sample_seed, "sampling seed");
  sample->add_option("--out", sample_out, "CSV file (default stdout)");

  fs::path report_dir;
  auto* report = app.add_subcommand("report", "Check a run's manifest and print its metrics");
  report->add_option("run-dir", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors share the configuration exit code; --help exits 0.
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(experiment, seeds, out_dir, epochs, quiet);
    if (*verify) return cmd_verify(suite);
    if (*sample) return cmd_sample(sample_dir, n_samples, sample_seed, sample_out);
    if (*report) return report_run(std::cout, report_dir) ? 0 : kExitFailure;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TrainingAborted& e) {
    std::cerr << e.what() << '\n';
    return kExitTraining;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const CheckpointError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
