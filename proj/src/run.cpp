#include "lensflow/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "lensflow/checkpoint.hpp"
#include "lensflow/hashing.hpp"
#include "lensflow/trainer.hpp"

namespace lensflow {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kScatterPoints = 5000;

enum Stream : std::uint64_t { kKlT1 = 1, kKlT2 = 2, kKlGlobal = 3, kSamples = 4 };

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  body(os);
  os.flush();
  if (!os) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

json estimate_json(const Estimate& e) {
  return {{"mean", e.mean},
          {"stderr", e.std_error},
          {"n_used", e.n_used},
          {"n_nonfinite", e.n_nonfinite}};
}

json modes_json(const std::array<int, 2>& m) { return json::array({m[0], m[1]}); }

// Every 1 in k samples of one chart so that at most kScatterPoints are drawn.
std::vector<LabeledSample> thin_for_scatter(const std::vector<LabeledSample>& samples) {
  std::array<std::size_t, 2> counts{0, 0};
  for (const auto& s : samples) ++counts[chart_index(s.chart)];
  std::array<std::size_t, 2> stride{};
  for (int c = 0; c < 2; ++c) stride[c] = std::max<std::size_t>(1, (counts[c] + kScatterPoints - 1) / kScatterPoints);
  std::array<std::size_t, 2> seen{0, 0};
  std::vector<LabeledSample> out;
  for (const auto& s : samples) {
    const int c = chart_index(s.chart);
    if (seen[c]++ % stride[c] == 0) out.push_back(s);
  }
  return out;
}

struct TorusJob {
  TrainResult result;
  double seam = 0.0;
  double seconds = 0.0;
};

TorusJob train_job(const PushforwardDensity& target, Chart chart, const TorusSettings& settings,
                   std::uint64_t seed, const std::string& tag, const RunOptions& options,
                   std::mutex& log_mutex) {
  TrainConfig tc = settings.train;
  tc.seed = torus_seed(seed, chart);
  if (tc.circle == CircleMode::interval && settings.auto_seam) {
    tc.seam = least_likely_angle(target, chart, tc.seed);
  }
  EpochCallback progress;
  if (options.log && options.progress_every > 0) {
    progress = [&, tc](const HistoryEntry& h) {
      if (h.epoch % options.progress_every != 0 && h.epoch + 1 != tc.epochs) return;
      std::lock_guard<std::mutex> lock(log_mutex);
      *options.log << "[" << tag << " T" << static_cast<int>(chart) << "] epoch " << h.epoch
                   << " kl " << h.kl << " entropy " << h.entropy << std::endl;
    };
  }
  const auto start = std::chrono::steady_clock::now();
  TorusJob job;
  job.result = train_torus(target, chart, settings.prior, tc, progress);
  job.seam = tc.seam;
  job.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return job;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json spread_json(const std::vector<double>& v) {
  return {{"mean", mean_of(v)},
          {"std", std_of(v)},
          {"min", *std::min_element(v.begin(), v.end())},
          {"max", *std::max_element(v.begin(), v.end())},
          {"values", v}};
}

void add_to_manifest(json& files, const fs::path& root, const fs::path& file) {
  files.push_back({{"path", fs::relative(file, root).generic_string()},
                   {"bytes", fs::file_size(file)},
                   {"sha256", sha256_file(file)}});
}

SeedRun run_seed(const ExperimentConfig& config, const PushforwardDensity& target,
                 std::uint64_t seed, const RunOptions& options) {
  SeedRun run;
  run.seed = seed;
  run.run_id = config.name + "-seed" + std::to_string(seed);
  run.dir = options.out_root / run.run_id;
  try {
    fs::create_directories(run.dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError(e.what());
  }

  std::mutex log_mutex;
  std::array<std::future<TorusJob>, 2> futures;
  for (Chart chart : {Chart::one, Chart::two}) {
    futures[chart_index(chart)] =
        std::async(std::launch::async, train_job, std::cref(target), chart,
                   std::cref(config.tori[chart_index(chart)]), seed, run.run_id,
                   std::cref(options), std::ref(log_mutex));
  }
  std::array<TorusJob, 2> jobs;
  // Wait on both before rethrowing so no thread outlives the target.
  std::exception_ptr failure;
  for (int c = 0; c < 2; ++c) {
    try {
      jobs[c] = futures[c].get();
    } catch (...) {
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  const NormalizerEstimate& est = target.normalizers();
  const double w = est.mixture_weight();
  std::array<TorusModel, 2> models;
  for (int c = 0; c < 2; ++c) {
    run.initial_kl[c] = jobs[c].result.history.front().kl;
    run.seam[c] = jobs[c].seam;
    run.train_seconds[c] = jobs[c].seconds;
    models[c] = TorusModel{&jobs[c].result.flow, config.tori[c].prior};
  }

  const EvalConfig& ev = config.eval;
  MetricsReport& m = run.metrics;
  std::mt19937_64 rng1(stream_seed(seed, kKlT1));
  m.kl_T1 = local_kl(models[0], chart_target(target, Chart::one), ev.n_kl, rng1);
  std::mt19937_64 rng2(stream_seed(seed, kKlT2));
  m.kl_T2 = local_kl(models[1], chart_target(target, Chart::two), ev.n_kl, rng2);
  std::mt19937_64 rng3(stream_seed(seed, kKlGlobal));
  m.kl_global = global_kl(models, target, w, ev.n_kl, rng3);
  m.kl_decomposed = kl_decomposition(m.kl_T1.mean, m.kl_T2.mean, w);
  m.I1 = est.I1();
  m.I2 = est.I2();
  m.w = w;
  m.seeds = {seed};
  m.n_kl = ev.n_kl;
  m.n_samples = ev.n_samples;

  std::mt19937_64 rng4(stream_seed(seed, kSamples));
  const std::vector<LabeledSample> samples = sample_model(models, target, w, ev.n_samples, rng4);
  const std::vector<LabeledSample> top = top_percentile_filter(samples, ev.keep_fraction, true);
  m.mode_counts = count_modes(top, ev.mode_radius, ev.mode_min_count);
  for (double r : ev.radius_sweep) {
    run.mode_sweep.emplace_back(r, count_modes(top, r, ev.mode_min_count));
  }
  std::size_t second = 0;
  for (const auto& s : samples) second += s.chart == Chart::two ? 1 : 0;
  run.chart2_fraction = static_cast<double>(second) / static_cast<double>(samples.size());

  // Artifacts.
  json metrics;
  metrics["experiment"] = config.name;
  metrics["run_id"] = run.run_id;
  metrics["lens"] = {{"p", config.p}, {"q", config.q}};
  metrics["seeds"] = m.seeds;
  metrics["kl_T1"] = estimate_json(m.kl_T1);
  metrics["kl_T2"] = estimate_json(m.kl_T2);
  metrics["kl_global"] = estimate_json(m.kl_global);
  metrics["kl_decomposed"] = m.kl_decomposed;
  metrics["kl_consistency_gap"] = std::abs(m.kl_global.mean - m.kl_decomposed);
  metrics["initial_kl"] = {{"T1", run.initial_kl[0]},
                           {"T2", run.initial_kl[1]},
                           {"decomposed", kl_decomposition(run.initial_kl[0], run.initial_kl[1], w)}};
  metrics["I1"] = m.I1;
  metrics["I2"] = m.I2;
  metrics["log_I1"] = est.log_I1;
  metrics["log_I2"] = est.log_I2;
  metrics["I1_stderr"] = est.stderr1();
  metrics["I2_stderr"] = est.stderr2();
  metrics["w"] = m.w;
  metrics["mode_counts"] = modes_json(m.mode_counts);
  metrics["mode_radius"] = ev.mode_radius;
  metrics["mode_min_count"] = ev.mode_min_count;
  json sweep = json::array();
  for (const auto& [r, counts] : run.mode_sweep) {
    sweep.push_back({{"radius", r}, {"mode_counts", modes_json(counts)}});
  }
  metrics["mode_sweep"] = sweep;
  metrics["keep_fraction"] = ev.keep_fraction;
  metrics["n_kl"] = m.n_kl;
  metrics["n_samples"] = m.n_samples;
  metrics["n_filtered"] = top.size();
  metrics["chart2_fraction"] = run.chart2_fraction;
  json train;
  for (int c = 0; c < 2; ++c) {
    const TrainResult& r = jobs[c].result;
    train[c == 0 ? "T1" : "T2"] = {{"epochs", r.history.size()},
                                   {"final_batch_kl", r.history.back().kl},
                                   {"nonfinite_epochs", r.nonfinite_epochs},
                                   {"skipped_steps", r.skipped_steps},
                                   {"circle", to_string(r.flow.circle)},
                                   {"seam", r.flow.seam}};
  }
  metrics["train"] = train;
  metrics["timestamp"] = utc_timestamp();
  run.metrics_json = metrics;

  const fs::path& dir = run.dir;
  std::vector<fs::path> written;
  try {
    for (int c = 0; c < 2; ++c) {
      const std::string t = c == 0 ? "T1" : "T2";
      const Chart chart = c == 0 ? Chart::one : Chart::two;
      const fs::path hist = dir / ("history_" + t + ".csv");
      write_file(hist, [&](std::ostream& os) { write_history_csv(os, jobs[c].result.history); });
      written.push_back(hist);
      const fs::path ckpt = dir / ("checkpoint_" + t);
      save_checkpoint(ckpt, Checkpoint{jobs[c].result.flow, config.tori[c].prior, chart,
                                       config.p, config.q});
      written.push_back(ckpt / kCheckpointManifest);
      written.push_back(ckpt / kCheckpointTensors);
    }
    const std::vector<LabeledSample> thin = thin_for_scatter(samples);
    for (Chart chart : {Chart::one, Chart::two}) {
      const fs::path svg = dir / ("scatter_T" + std::to_string(static_cast<int>(chart)) + ".svg");
      write_file(svg, [&](std::ostream& os) { write_scatter_svg(os, thin, chart); });
      written.push_back(svg);
    }
    write_file(dir / "samples.csv", [&](std::ostream& os) { write_samples_csv(os, samples); });
    written.push_back(dir / "samples.csv");
    write_file(dir / "config.json",
               [&](std::ostream& os) { os << to_json(config).dump(2) << '\n'; });
    written.push_back(dir / "config.json");
    write_file(dir / "metrics.json", [&](std::ostream& os) { os << metrics_text(metrics); });
    written.push_back(dir / "metrics.json");

    json files = json::array();
    for (const auto& f : written) add_to_manifest(files, dir, f);
    json manifest{{"run_id", run.run_id},
                  {"created", metrics["timestamp"]},
                  {"files", files},
                  {"train_seconds", {{"T1", run.train_seconds[0]}, {"T2", run.train_seconds[1]}}}};
    write_file(dir / "manifest.json", [&](std::ostream& os) { os << manifest.dump(2) << '\n'; });
  } catch (const CheckpointError& e) {
    throw IoError(e.what());
  } catch (const fs::filesystem_error& e) {
    throw IoError(e.what());
  }
  return run;
}

std::string pm(double mean, double err) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << mean << " ± " << err;
  return os.str();
}

}  // namespace

fs::path default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  if (env && *env) return env;
  return "out";
}

std::vector<std::uint64_t> derived_seeds(std::uint64_t base, int count) {
  if (count < 1) throw std::invalid_argument("--seeds must be >= 1");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(count));
  std::iota(seeds.begin(), seeds.end(), base);
  return seeds;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x6c656e73u};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string metrics_text(const json& metrics) { return metrics.dump(2) + "\n"; }

ExperimentRun run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  const std::vector<std::uint64_t> seeds = derived_seeds(config.seed, options.seeds);
  for (const auto& t : config.tori) {
    try {
      validate(t.prior);
      validate(t.train);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("<config>", 0, e.what());
    }
  }

  PushforwardDensity target(config.lens(), config.make_target());
  target.set_normalizers(estimate_normalizers(config.lens(), target.base(), config.normalizer.n_mc,
                                              config.normalizer.seed));
  if (options.log) {
    const auto& est = target.normalizers();
    *options.log << config.name << ": I1 = " << est.I1() << " ± " << est.stderr1()
                 << ", I2 = " << est.I2() << " ± " << est.stderr2()
                 << ", w = " << est.mixture_weight() << std::endl;
  }

  ExperimentRun out;
  for (std::uint64_t seed : seeds) out.runs.push_back(run_seed(config, target, seed, options));

  std::vector<double> kl1, kl2, klg, kld, init1, init2;
  json modes = json::array();
  for (const auto& r : out.runs) {
    kl1.push_back(r.metrics.kl_T1.mean);
    kl2.push_back(r.metrics.kl_T2.mean);
    klg.push_back(r.metrics.kl_global.mean);
    kld.push_back(r.metrics.kl_decomposed);
    init1.push_back(r.initial_kl[0]);
    init2.push_back(r.initial_kl[1]);
    modes.push_back(modes_json(r.metrics.mode_counts));
  }
  out.summary = {{"experiment", config.name},
                 {"seeds", seeds},
                 {"kl_T1", spread_json(kl1)},
                 {"kl_T2", spread_json(kl2)},
                 {"kl_global", spread_json(klg)},
                 {"kl_decomposed", spread_json(kld)},
                 {"initial_kl_T1", spread_json(init1)},
                 {"initial_kl_T2", spread_json(init2)},
                 {"mode_counts", modes},
                 {"w", out.runs.front().metrics.w}};
  if (out.runs.size() > 1) {
    out.summary_path = options.out_root / (config.name + "-summary.json");
    write_file(out.summary_path, [&](std::ostream& os) { os << out.summary.dump(2) << '\n'; });
  }
  if (options.log) print_summary(*options.log, config, out);
  return out;
}

void print_summary(std::ostream& os, const ExperimentConfig& config, const ExperimentRun& run) {
  const std::size_t n = run.runs.size();
  auto row = [&](const std::string& label, auto pick, auto err, auto init) {
    std::vector<double> v, i;
    for (const auto& r : run.runs) {
      v.push_back(pick(r));
      i.push_back(init(r));
    }
    const double spread = n > 1 ? std_of(v) : err(run.runs.front());
    os << "  " << std::left << std::setw(14) << label << std::setw(20) << pm(mean_of(v), spread)
       << std::fixed << std::setprecision(2) << mean_of(i) << '\n';
  };
  const std::string lens = "L(" + std::to_string(config.p) + ";" + std::to_string(config.q) + ")";
  os << config.name << " on " << lens << ", " << n << (n > 1 ? " seeds (mean ± std)" : " seed (± stderr)")
     << '\n';
  os << "  " << std::left << std::setw(14) << "model" << std::setw(20) << "KL (nats)"
     << "initial KL\n";
  row("Flow-T1", [](const SeedRun& r) { return r.metrics.kl_T1.mean; },
      [](const SeedRun& r) { return r.metrics.kl_T1.std_error; },
      [](const SeedRun& r) { return r.initial_kl[0]; });
  row("Flow-T2", [](const SeedRun& r) { return r.metrics.kl_T2.mean; },
      [](const SeedRun& r) { return r.metrics.kl_T2.std_error; },
      [](const SeedRun& r) { return r.initial_kl[1]; });
  const double w = run.runs.front().metrics.w;
  row("Flow-" + lens, [](const SeedRun& r) { return r.metrics.kl_global.mean; },
      [](const SeedRun& r) { return r.metrics.kl_global.std_error; },
      [w](const SeedRun& r) { return kl_decomposition(r.initial_kl[0], r.initial_kl[1], w); });
  const auto& m = run.runs.front().metrics;
  os << std::setprecision(4) << "  I1 = " << m.I1 << ", I2 = " << m.I2 << ", w = " << m.w << '\n';
  os << "  decomposed KL:";
  for (const auto& r : run.runs) os << ' ' << std::setprecision(3) << r.metrics.kl_decomposed;
  os << "\n  modes (T1,T2) at radius " << config.eval.mode_radius << ':';
  for (const auto& r : run.runs) {
    os << " (" << r.metrics.mode_counts[0] << ',' << r.metrics.mode_counts[1] << ')';
  }
  os << '\n';
  for (const auto& r : run.runs) os << "  wrote " << r.dir.string() << '\n';
  if (!run.summary_path.empty()) os << "  wrote " << run.summary_path.string() << '\n';
  os.unsetf(std::ios::floatfield);
}

bool report_run(std::ostream& os, const fs::path& run_dir) {
  const json manifest = read_json(run_dir / "manifest.json");
  bool ok = true;
  for (const auto& f : manifest.at("files")) {
    const fs::path path = run_dir / f.at("path").get<std::string>();
    std::string status = "ok";
    if (!fs::exists(path)) {
      status = "MISSING";
    } else if (sha256_file(path) != f.at("sha256").get<std::string>()) {
      status = "MODIFIED";
    }
    if (status != "ok") ok = false;
    os << "  " << std::left << std::setw(34) << f.at("path").get<std::string>() << status << '\n';
  }
  const json m = read_json(run_dir / "metrics.json");
  os << m.at("run_id").get<std::string>() << " (" << m.at("timestamp").get<std::string>() << ")\n";
  auto est = [&](const char* key) {
    return pm(m.at(key).at("mean").get<double>(), m.at(key).at("stderr").get<double>());
  };
  os << "  KL T1      " << est("kl_T1") << '\n'
     << "  KL T2      " << est("kl_T2") << '\n'
     << "  KL global  " << est("kl_global") << "  (decomposed " << std::setprecision(3)
     << m.at("kl_decomposed").get<double>() << ")\n"
     << "  initial KL " << m.at("initial_kl").at("T1").get<double>() << " / "
     << m.at("initial_kl").at("T2").get<double>() << '\n'
     << std::setprecision(4) << "  I1 " << m.at("I1").get<double>() << "  I2 "
     << m.at("I2").get<double>() << "  w " << m.at("w").get<double>() << '\n'
     << "  modes " << m.at("mode_counts").dump() << " at radius "
     << m.at("mode_radius").get<double>() << '\n';
  os.unsetf(std::ios::floatfield);
  os << (ok ? "all files match the manifest\n" : "manifest check FAILED\n");
  return ok;
}

std::vector<LabeledSample> sample_from_disk(const fs::path& dir, std::size_t n,
                                            std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("--n must be >= 1");
  const bool is_run = fs::exists(dir / "checkpoint_T1") && fs::exists(dir / "checkpoint_T2");
  const fs::path run_dir = is_run ? dir : dir.parent_path();

  std::vector<Checkpoint> cps;
  try {
    if (is_run) {
      cps.push_back(load_checkpoint(dir / "checkpoint_T1"));
      cps.push_back(load_checkpoint(dir / "checkpoint_T2"));
    } else {
      cps.push_back(load_checkpoint(dir));
    }
  } catch (const CheckpointError& e) {
    throw IoError(e.what());
  }

  std::unique_ptr<PushforwardDensity> target;
  double w = 0.0;
  if (fs::exists(run_dir / "config.json") && fs::exists(run_dir / "metrics.json")) {
    const ExperimentConfig cfg = load_experiment_config(run_dir / "config.json");
    const json m = read_json(run_dir / "metrics.json");
    NormalizerEstimate est;
    est.log_I1 = m.at("log_I1").get<double>();
    est.log_I2 = m.at("log_I2").get<double>();
    target = std::make_unique<PushforwardDensity>(cfg.lens(), cfg.make_target());
    target->set_normalizers(est);
    w = est.mixture_weight();
  } else if (is_run) {
    throw IoError("run directory " + dir.string() + " lacks config.json or metrics.json");
  }

  std::mt19937_64 rng(seed);
  std::array<std::size_t, 2> counts{0, 0};
  if (is_run) {
    std::bernoulli_distribution coin(w);
    for (std::size_t i = 0; i < n; ++i) ++counts[coin(rng) ? 1 : 0];
  } else {
    counts[chart_index(cps.front().chart)] = n;
  }

  std::vector<LabeledSample> out;
  out.reserve(n);
  for (const Checkpoint& cp : cps) {
    const std::size_t count = counts[chart_index(cp.chart)];
    const Eigen::Matrix3Xd z = prior_sample(cp.prior, count, rng);
    const FlowBatch fb = flow_forward_batch(cp.flow, z);
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
      LabeledSample s;
      s.chart = cp.chart;
      s.theta = fb.points(0, i);
      s.x = fb.points(1, i);
      s.y = fb.points(2, i);
      s.log_model = prior_logpdf(cp.prior, z(0, i), z(1, i), z(2, i)) - fb.logdet(i);
      s.log_q = target ? target->logpdf<double>(cp.chart, s.theta, s.x, s.y) -
                             target->normalizers().log_total()
                       : std::numeric_limits<double>::quiet_NaN();
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace lensflow
