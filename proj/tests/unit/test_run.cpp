#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "lensflow/checkpoint.hpp"
#include "lensflow/run.hpp"

using namespace lensflow;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig tiny_config() {
  return parse_experiment_config(R"({
  "name": "tiny",
  "seed": 11,
  "lens": {"p": 3, "q": 2},
  "target": {"kind": "vmf_mixture",
             "components": [{"mu": [1, 0, 0, 0], "kappa": 4, "weight": 0.5},
                            {"mu": [0, 0, 1, 0], "kappa": 4, "weight": 0.5}]},
  "train": {"epochs": 5, "batch": 64, "n_pairs": 1, "anneal_epochs": 2},
  "eval": {"n_kl": 1000, "n_samples": 2000, "mode_min_count": 2},
  "normalizer": {"n_mc": 10000}
})",
                                 "tiny.json");
}

fs::path fresh(const char* name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

json without_timestamp(const fs::path& metrics) {
  json m;
  std::ifstream(metrics) >> m;
  m.erase("timestamp");
  return m;
}

}  // namespace

TEST_CASE("seed derivation") {
  CHECK(derived_seeds(5, 3) == std::vector<std::uint64_t>{5, 6, 7});
  CHECK_THROWS_AS(derived_seeds(5, 0), std::invalid_argument);
  std::set<std::uint64_t> streams;
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    for (std::uint64_t s = 1; s <= 4; ++s) streams.insert(stream_seed(seed, s));
  }
  CHECK(streams.size() == 12);
  CHECK(stream_seed(9, 2) == stream_seed(9, 2));
}

TEST_CASE("output root from the environment") {
  ::setenv(kOutputRootEnv, "/tmp/elsewhere", 1);
  CHECK(default_output_root() == fs::path("/tmp/elsewhere"));
  ::setenv(kOutputRootEnv, "", 1);
  CHECK(default_output_root() == fs::path("out"));
  ::unsetenv(kOutputRootEnv);
  CHECK(default_output_root() == fs::path("out"));
}

TEST_CASE("a run writes every artifact and repeats byte for byte") {
  const fs::path a = fresh("lensflow_test_run_a");
  const fs::path b = fresh("lensflow_test_run_b");
  RunOptions opts;
  opts.out_root = a;
  const ExperimentRun ra = run_experiment(tiny_config(), opts);
  opts.out_root = b;
  const ExperimentRun rb = run_experiment(tiny_config(), opts);
  REQUIRE(ra.runs.size() == 1);
  CHECK(ra.summary_path.empty());
  const fs::path dir = ra.runs[0].dir;
  CHECK(dir == a / "tiny-seed11");
  for (const char* f : {"metrics.json", "history_T1.csv", "history_T2.csv", "samples.csv",
                        "checkpoint_T1", "checkpoint_T2", "scatter_T1.svg", "scatter_T2.svg",
                        "manifest.json", "config.json"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK(without_timestamp(dir / "metrics.json") ==
        without_timestamp(rb.runs[0].dir / "metrics.json"));
  json m;
  std::ifstream(dir / "metrics.json") >> m;
  CHECK(m.contains("timestamp"));
  CHECK(m["seeds"] == json::array({11}));
  CHECK(m["train"]["T1"]["epochs"] == 5);

  std::ifstream h(dir / "history_T1.csv");
  std::string line;
  int rows = 0;
  while (std::getline(h, line)) ++rows;
  CHECK(rows == 6);

  std::ostringstream report;
  CHECK(report_run(report, dir));
  CHECK(report.str().find("all files match the manifest") != std::string::npos);

  const auto from_run = sample_from_disk(dir, 500, 3);
  CHECK(from_run.size() == 500);
  CHECK(std::isfinite(from_run[0].log_q));
  const auto again = sample_from_disk(dir, 500, 3);
  CHECK(again[17].theta == from_run[17].theta);
  const auto from_ckpt = sample_from_disk(dir / "checkpoint_T2", 100, 3);
  CHECK(std::all_of(from_ckpt.begin(), from_ckpt.end(),
                    [](const LabeledSample& s) { return s.chart == Chart::two; }));

  std::ofstream(dir / "samples.csv", std::ios::app) << "tampered\n";
  std::ostringstream bad;
  CHECK_FALSE(report_run(bad, dir));
  CHECK(bad.str().find("MODIFIED") != std::string::npos);
  fs::remove(dir / "history_T2.csv");
  CHECK_FALSE(report_run(bad, dir));

  CHECK_THROWS_AS(sample_from_disk(a / "nothing-here", 10, 1), IoError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("several seeds write a summary") {
  const fs::path root = fresh("lensflow_test_run_multi");
  RunOptions opts;
  opts.out_root = root;
  opts.seeds = 2;
  const ExperimentRun r = run_experiment(tiny_config(), opts);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[1].seed == 12);
  CHECK(r.summary_path == root / "tiny-summary.json");
  CHECK(fs::exists(r.summary_path));
  std::ostringstream os;
  print_summary(os, tiny_config(), r);
  CHECK(os.str().find("Flow-L(3;2)") != std::string::npos);
  fs::remove_all(root);
}
