#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "lensflow/experiment.hpp"

using namespace lensflow;

namespace {

int error_line(const std::string& text) {
  try {
    parse_experiment_config(text, "test.json");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("test.json:" + std::to_string(e.line()) + ": ", 0) == 0);
    return e.line();
  }
  FAIL("no ConfigError for: " << text);
  return -1;
}

const char* kMinimal = R"({
  "name": "tiny",
  "lens": {"p": 5, "q": 2},
  "target": {
    "kind": "vmf_mixture",
    "components": [{"mu": [1, 0, 0, 0], "kappa": 10, "weight": 1}]
  }
})";

}  // namespace

TEST_CASE("built-in experiments") {
  const ExperimentConfig e1 = builtin_experiment("exp1");
  CHECK(e1.p == 3);
  CHECK(e1.q == 2);
  CHECK(e1.target.components.size() == 5);
  const ExperimentConfig e2 = builtin_experiment("exp2");
  CHECK(e2.p == 7);
  CHECK(e2.q == 3);
  REQUIRE(e2.target.components.size() == 4);
  CHECK(e2.target.components[3].kappa == 80.0);
  const ExperimentConfig b = builtin_experiment("boltz");
  CHECK(b.p == 12);
  CHECK(b.q == 1);
  CHECK(b.target.kind == TargetKind::boltzmann);
  CHECK(b.target.symmetric);
  for (const auto& t : b.tori) {
    CHECK(t.prior.kappa == 5.0);
    CHECK(t.prior.sigma == 0.25);
    CHECK(t.train.epochs == 3000);
    CHECK(t.auto_seam);
  }
  CHECK(is_builtin_experiment("exp2"));
  CHECK_FALSE(is_builtin_experiment("exp3"));
  CHECK_THROWS_AS(builtin_experiment("exp3"), ConfigError);
}

TEST_CASE("minimal config uses defaults") {
  const ExperimentConfig c = parse_experiment_config(kMinimal);
  CHECK(c.name == "tiny");
  CHECK(c.p == 5);
  CHECK(c.q == 2);
  CHECK(c.eval.n_kl == 100000);
  CHECK(c.tori[1].train.batch == 6000);
  CHECK(c.tori[0].train.circle == CircleMode::interval);
}

TEST_CASE("per-torus overrides") {
  const ExperimentConfig c = parse_experiment_config(R"({
  "lens": {"p": 3, "q": 1},
  "target": {"kind": "vmf_mixture",
             "components": [{"mu": [0, 1, 0, 0], "kappa": 3, "weight": 1}]},
  "prior": {"sigma": 0.3, "T2": {"kappa": 2}},
  "train": {"epochs": 10, "seam": 1.5, "T1": {"lr": 0.01, "circle": "wrap"}}
})");
  CHECK(c.tori[0].prior.sigma == 0.3);
  CHECK(c.tori[0].prior.kappa == 5.0);
  CHECK(c.tori[1].prior.kappa == 2.0);
  CHECK(c.tori[1].prior.sigma == 0.3);
  CHECK(c.tori[0].train.lr == 0.01);
  CHECK(c.tori[1].train.lr == 1e-3);
  CHECK(c.tori[0].train.circle == CircleMode::wrap);
  CHECK(c.tori[1].train.epochs == 10);
  CHECK_FALSE(c.tori[1].auto_seam);
  CHECK(c.tori[1].train.seam == 1.5);
}

TEST_CASE("errors carry the offending line") {
  CHECK(error_line("{\n  \"name\": \"x\",\n  \"target\": {\"kind\": \"boltzmann\"}\n}") == 1);
  CHECK(error_line(R"({
  "lens": {"p": 3, "q": 2},
  "target": {"kind": "vmf_mixture",
             "components": [{"mu": [1, 0, 0, 0], "kappa": 1, "weight": 1}]},
  "train": {
    "epochs": 10,
    "learning_rate": 0.1
  }
})") == 7);
  CHECK(error_line(R"({
  "lens": {"p": 4,
           "q": 2},
  "target": {"kind": "vmf_mixture",
             "components": [{"mu": [1, 0, 0, 0], "kappa": 1, "weight": 1}]}
})") == 2);
  CHECK(error_line(R"({
  "lens": {"p": 3, "q": 2},
  "target": {"kind": "vmf_mixture",
             "components": [{"mu": [1, 0, 0, 0], "kappa": 1, "weight": 0.5}]}
})") == 4);
  CHECK(error_line(R"({
  "lens": {"p": 3, "q": 2},
  "target": {"kind": "vmf_mixture", "symmetric": true,
             "components": [{"mu": [1, 0, 0, 0], "kappa": 9, "weight": 1}]}
})") == 3);
  CHECK(error_line(R"({
  "lens": {"p": 3, "q": 2},
  "target": {"kind": "vmf_mixture",
             "components": [{"mu": [1, 0, 0, 0], "kappa": 1, "weight": 1}]},
  "train": {"circle": "loop"}
})") == 5);
  CHECK(error_line("{\n  \"lens\": {\"p\": 3, \"q\": 2},\n  \"target\": [1, 2,\n") >= 3);
}

TEST_CASE("canonical JSON round trip") {
  for (const char* name : {"exp1", "exp2", "boltz"}) {
    const ExperimentConfig c = builtin_experiment(name);
    const nlohmann::json j = to_json(c);
    CHECK(to_json(parse_experiment_config(j.dump(2))) == j);
  }
  ExperimentConfig c = parse_experiment_config(kMinimal);
  c.tori[0].auto_seam = false;
  c.tori[0].train.seam = 0.75;
  const nlohmann::json j = to_json(c);
  CHECK(to_json(parse_experiment_config(j.dump())) == j);
}

TEST_CASE("loading from a file") {
  const auto dir = std::filesystem::temp_directory_path() / "lensflow_test_experiment";
  std::filesystem::create_directories(dir);
  const auto path = dir / "my_run.json";
  std::string body = kMinimal;
  body.replace(body.find("\"name\": \"tiny\","), 15, "");
  std::ofstream(path) << body;
  CHECK(load_experiment_config(path).name == "my_run");
  try {
    load_experiment_config(dir / "missing.json");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 0);
  }
  std::filesystem::remove_all(dir);
}
