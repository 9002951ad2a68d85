#include "lensflow/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace lensflow {
namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON with source lines

// Input iterator that publishes how many characters the parser has consumed.
class CountingIterator {
 public:
  using iterator_category = std::input_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  CountingIterator() = default;
  CountingIterator(const char* p, const char** cursor) : p_(p), cursor_(cursor) {}
  reference operator*() const { return *p_; }
  CountingIterator& operator++() {
    ++p_;
    if (cursor_) *cursor_ = p_;
    return *this;
  }
  CountingIterator operator++(int) {
    CountingIterator tmp = *this;
    ++*this;
    return tmp;
  }
  bool operator==(const CountingIterator& o) const { return p_ == o.p_; }
  bool operator!=(const CountingIterator& o) const { return p_ != o.p_; }

 private:
  const char* p_ = nullptr;
  const char** cursor_ = nullptr;
};

std::string escape_pointer_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out.push_back(c);
  }
  return out;
}

class LocatedJson {
 public:
  LocatedJson(std::string_view text, std::string source)
      : text_(text), source_(std::move(source)) {
    line_starts_.push_back(0);
    for (std::size_t i = 0; i < text_.size(); ++i) {
      if (text_[i] == '\n') line_starts_.push_back(i + 1);
    }
  }

  const std::string& source() const { return source_; }

  int line_at(std::size_t offset) const {
    const auto it = std::upper_bound(line_starts_.begin(), line_starts_.end(), offset);
    return static_cast<int>(it - line_starts_.begin());
  }

  // Line of the last non-blank character before `offset`.
  int token_line(std::size_t offset) const {
    std::size_t i = std::min(offset, text_.size());
    while (i > 0 && std::isspace(static_cast<unsigned char>(text_[i - 1]))) --i;
    return line_at(i == 0 ? 0 : i - 1);
  }

  void record(const std::string& pointer, std::size_t offset) {
    lines_.emplace(pointer, token_line(offset));
  }

  int line_of(const std::string& pointer) const {
    const auto it = lines_.find(pointer);
    return it == lines_.end() ? 0 : it->second;
  }

  [[noreturn]] void fail(const std::string& pointer, const std::string& message) const {
    throw ConfigError(source_, line_of(pointer), message);
  }

  std::string_view text() const { return text_; }

 private:
  std::string_view text_;
  std::string source_;
  std::vector<std::size_t> line_starts_;
  std::map<std::string, int> lines_;
};

class LocatingSax {
 public:
  LocatingSax(json& root, LocatedJson& located, const char* begin, const char** cursor)
      : dom_(root, true), located_(located), begin_(begin), cursor_(cursor) {}

  bool null() { return value(), dom_.null(); }
  bool boolean(bool b) { return value(), dom_.boolean(b); }
  bool number_integer(json::number_integer_t v) { return value(), dom_.number_integer(v); }
  bool number_unsigned(json::number_unsigned_t v) { return value(), dom_.number_unsigned(v); }
  bool number_float(json::number_float_t v, const json::string_t& s) {
    return value(), dom_.number_float(v, s);
  }
  bool string(json::string_t& s) { return value(), dom_.string(s); }
  bool binary(json::binary_t& b) { return value(), dom_.binary(b); }

  bool start_object(std::size_t n) {
    frames_.push_back({value(), false, 0, {}});
    return dom_.start_object(n);
  }
  bool key(json::string_t& k) {
    frames_.back().key = k;
    located_.record(frames_.back().pointer + "/" + escape_pointer_token(k), offset());
    return dom_.key(k);
  }
  bool end_object() {
    frames_.pop_back();
    return dom_.end_object();
  }
  bool start_array(std::size_t n) {
    frames_.push_back({value(), true, 0, {}});
    return dom_.start_array(n);
  }
  bool end_array() {
    frames_.pop_back();
    return dom_.end_array();
  }

  bool parse_error(std::size_t position, const std::string& /*last_token*/,
                   const nlohmann::detail::exception& ex) {
    std::string what = ex.what();
    const auto colon = what.find(": ", what.find("parse error"));
    if (colon != std::string::npos) what = what.substr(colon + 2);
    throw ConfigError(located_.source(), located_.line_at(position == 0 ? 0 : position - 1),
                      "invalid JSON: " + what);
  }

 private:
  struct Frame {
    std::string pointer;
    bool array = false;
    std::size_t index = 0;
    std::string key;
  };

  std::size_t offset() const { return static_cast<std::size_t>(*cursor_ - begin_); }

  // Records the line of the value that starts now and returns its pointer.
  std::string value() {
    std::string pointer;
    if (!frames_.empty()) {
      Frame& top = frames_.back();
      pointer = top.array ? top.pointer + "/" + std::to_string(top.index++)
                          : top.pointer + "/" + escape_pointer_token(top.key);
    }
    located_.record(pointer, offset());
    return pointer;
  }

  nlohmann::detail::json_sax_dom_parser<json> dom_;
  LocatedJson& located_;
  const char* begin_;
  const char** cursor_;
  std::vector<Frame> frames_;
};

// ---------------------------------------------------------------------------
// Typed field access

class Reader {
 public:
  Reader(const LocatedJson& loc, const json& node, std::string pointer)
      : loc_(loc), node_(node), pointer_(std::move(pointer)) {
    if (!node_.is_object()) loc_.fail(pointer_, describe() + " must be an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }
  bool is_string(const std::string& key) const { return has(key) && node_.at(key).is_string(); }

  Reader object(const std::string& key) const {
    require(key);
    return Reader(loc_, node_.at(key), child(key));
  }

  void allow_only(std::initializer_list<const char*> keys) const {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : node_.items()) {
      if (!allowed.count(k)) loc_.fail(child(k), "unknown key '" + k + "' in " + describe());
    }
  }

  double number(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number()) loc_.fail(child(key), describe(key) + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) loc_.fail(child(key), describe(key) + " must be finite");
    return d;
  }

  double number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::int64_t integer(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number_integer()) loc_.fail(child(key), describe(key) + " must be an integer");
    return v.get<std::int64_t>();
  }

  std::int64_t integer_or(const std::string& key, std::int64_t fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  std::uint64_t unsigned_or(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number_unsigned()) {
      loc_.fail(child(key), describe(key) + " must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  bool boolean_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_boolean()) loc_.fail(child(key), describe(key) + " must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) loc_.fail(child(key), describe(key) + " must be a string");
    return v.get<std::string>();
  }

  std::string string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? string(key) : fallback;
  }

  template <std::size_t N>
  std::array<double, N> vector(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_array() || v.size() != N) {
      loc_.fail(child(key), describe(key) + " must be an array of " + std::to_string(N) +
                                " numbers");
    }
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
      if (!v[i].is_number()) {
        loc_.fail(child(key) + "/" + std::to_string(i), describe(key) + " must hold numbers");
      }
      out[i] = v[i].get<double>();
    }
    return out;
  }

  std::vector<double> numbers(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_array()) loc_.fail(child(key), describe(key) + " must be an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) {
        loc_.fail(child(key) + "/" + std::to_string(i), describe(key) + " must hold numbers");
      }
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<Reader> objects(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_array()) loc_.fail(child(key), describe(key) + " must be an array of objects");
    std::vector<Reader> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.emplace_back(loc_, v[i], child(key) + "/" + std::to_string(i));
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    loc_.fail(key.empty() ? pointer_ : child(key), message);
  }

  std::string describe(const std::string& key = {}) const {
    std::string path = pointer_.empty() ? std::string() : pointer_.substr(1);
    std::replace(path.begin(), path.end(), '/', '.');
    if (!key.empty()) path = path.empty() ? key : path + "." + key;
    return path.empty() ? "configuration root" : "'" + path + "'";
  }

 private:
  std::string child(const std::string& key) const {
    return pointer_ + "/" + escape_pointer_token(key);
  }

  void require(const std::string& key) const {
    if (!node_.contains(key)) {
      loc_.fail(pointer_, "missing required " + describe(key) + " block");
    }
  }

  const json& at(const std::string& key) const {
    if (!node_.contains(key)) loc_.fail(pointer_, "missing required key " + describe(key));
    return node_.at(key);
  }

  const LocatedJson& loc_;
  const json& node_;
  std::string pointer_;
};

// Runs `check` and re-raises std::invalid_argument as a ConfigError at `where`.
template <class Fn>
void checked(const Reader& where, const std::string& key, Fn&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    where.fail(key, e.what());
  } catch (const std::domain_error& e) {
    where.fail(key, e.what());
  }
}

TargetSpec read_target(const Reader& r) {
  TargetSpec spec;
  const std::string kind = r.string("kind");
  spec.symmetric = r.boolean_or("symmetric", false);
  if (kind == "vmf_mixture") {
    r.allow_only({"kind", "symmetric", "components"});
    for (const Reader& c : r.objects("components")) {
      c.allow_only({"mu", "kappa", "weight"});
      spec.components.push_back({c.vector<4>("mu"), c.number("kappa"), c.number("weight")});
    }
    if (spec.components.empty()) r.fail("components", "a vMF mixture needs components");
    checked(r, "components", [&] { TargetDensity::vmf_mixture(spec.components); });
  } else if (kind == "boltzmann") {
    r.allow_only({"kind", "symmetric", "kappa", "c", "V", "x0", "y0", "e2", "e3"});
    BoltzmannParams& b = spec.boltzmann;
    b.kappa = r.number("kappa");
    b.c = r.vector<3>("c");
    b.V = r.number("V");
    b.x0 = r.vector<3>("x0");
    b.y0 = r.vector<3>("y0");
    if (r.has("e2")) b.e2 = r.vector<3>("e2");
    if (r.has("e3")) b.e3 = r.vector<3>("e3");
    checked(r, "", [&] { validate(b); });
  } else {
    r.fail("kind", "target kind must be 'vmf_mixture' or 'boltzmann', got '" + kind + "'");
  }
  spec.kind = kind == "boltzmann" ? TargetKind::boltzmann : TargetKind::vmf_mixture;
  return spec;
}

PriorParams read_prior(const Reader& r, PriorParams base) {
  base.kappa = r.number_or("kappa", base.kappa);
  base.sigma = r.number_or("sigma", base.sigma);
  checked(r, "", [&] { validate(base); });
  return base;
}

void read_train(const Reader& r, TorusSettings& t) {
  TrainConfig& c = t.train;
  auto bounded_int = [&](const char* key, int fallback) {
    const std::int64_t v = r.integer_or(key, fallback);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
      r.fail(key, r.describe(key) + " is out of range");
    }
    return static_cast<int>(v);
  };
  c.epochs = bounded_int("epochs", c.epochs);
  c.batch = bounded_int("batch", c.batch);
  c.lr = r.number_or("lr", c.lr);
  c.beta0 = r.number_or("beta0", c.beta0);
  c.anneal_epochs = bounded_int("anneal_epochs", c.anneal_epochs);
  c.n_pairs = bounded_int("n_pairs", c.n_pairs);
  if (r.has("circle")) {
    checked(r, "circle", [&] { c.circle = circle_mode_from_string(r.string("circle")); });
  }
  if (r.has("seam")) {
    if (r.is_string("seam")) {
      if (r.string("seam") != "auto") r.fail("seam", "train.seam must be a number or \"auto\"");
      t.auto_seam = true;
    } else {
      c.seam = r.number("seam");
      t.auto_seam = false;
    }
  }
  checked(r, "", [&] { validate(c); });
}

}  // namespace

ConfigError::ConfigError(const std::string& source, int line, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + message),
      line_(line),
      message_(message) {}

TargetDensity ExperimentConfig::make_target() const {
  TargetDensity t = target.kind == TargetKind::boltzmann
                        ? TargetDensity::boltzmann(target.boltzmann)
                        : TargetDensity::vmf_mixture(target.components);
  if (target.symmetric) t.declare_symmetric(lens(), seed);
  return t;
}

ExperimentConfig parse_experiment_config(std::string_view text, const std::string& source,
                                         const std::string& default_name) {
  LocatedJson located(text, source);
  json root;
  const char* cursor = text.data();
  LocatingSax sax(root, located, text.data(), &cursor);
  CountingIterator first(text.data(), &cursor);
  CountingIterator last(text.data() + text.size(), nullptr);
  json::sax_parse(first, last, &sax);

  const Reader top(located, root, "");
  top.allow_only({"name", "seed", "lens", "target", "prior", "train", "eval", "normalizer"});

  ExperimentConfig cfg;
  cfg.name = top.string_or("name", default_name);
  if (cfg.name.empty() || cfg.name.find_first_of("/\\") != std::string::npos) {
    top.fail("name", "name must be a non-empty string without path separators");
  }
  cfg.seed = top.unsigned_or("seed", cfg.seed);

  const Reader lens = top.object("lens");
  lens.allow_only({"p", "q"});
  const std::int64_t p = lens.integer("p");
  const std::int64_t q = lens.integer("q");
  if (p < 2 || p > 1000000 || q < 1 || q >= p) {
    lens.fail("", "lens requires p >= 2 and 1 <= q < p");
  }
  cfg.p = static_cast<int>(p);
  cfg.q = static_cast<int>(q);
  checked(lens, "", [&] { make_lens(cfg.p, cfg.q); });

  cfg.target = read_target(top.object("target"));
  if (cfg.target.symmetric) {
    checked(top.object("target"), "symmetric", [&] { cfg.make_target(); });
  }

  if (top.has("prior")) {
    const Reader prior = top.object("prior");
    prior.allow_only({"kappa", "sigma", "T1", "T2"});
    const PriorParams shared = read_prior(prior, PriorParams{});
    for (int i = 0; i < 2; ++i) {
      const std::string key = i == 0 ? "T1" : "T2";
      cfg.tori[i].prior = shared;
      if (prior.has(key)) {
        const Reader own = prior.object(key);
        own.allow_only({"kappa", "sigma"});
        cfg.tori[i].prior = read_prior(own, shared);
      }
    }
  }

  if (top.has("train")) {
    const Reader train = top.object("train");
    train.allow_only({"epochs", "batch", "lr", "beta0", "anneal_epochs", "n_pairs", "circle",
                      "seam", "T1", "T2"});
    TorusSettings shared;
    read_train(train, shared);
    for (int i = 0; i < 2; ++i) {
      const std::string key = i == 0 ? "T1" : "T2";
      const PriorParams prior = cfg.tori[i].prior;
      cfg.tori[i] = shared;
      cfg.tori[i].prior = prior;
      if (train.has(key)) {
        const Reader own = train.object(key);
        own.allow_only({"epochs", "batch", "lr", "beta0", "anneal_epochs", "n_pairs", "circle",
                        "seam"});
        read_train(own, cfg.tori[i]);
      }
    }
  }

  if (top.has("eval")) {
    const Reader ev = top.object("eval");
    ev.allow_only({"n_kl", "n_samples", "keep_fraction", "mode_radius", "mode_min_count",
                   "radius_sweep"});
    EvalConfig& e = cfg.eval;
    e.n_kl = ev.unsigned_or("n_kl", e.n_kl);
    e.n_samples = ev.unsigned_or("n_samples", e.n_samples);
    e.keep_fraction = ev.number_or("keep_fraction", e.keep_fraction);
    e.mode_radius = ev.number_or("mode_radius", e.mode_radius);
    e.mode_min_count = static_cast<int>(ev.integer_or("mode_min_count", e.mode_min_count));
    if (ev.has("radius_sweep")) e.radius_sweep = ev.numbers("radius_sweep");
    if (e.n_kl < 1000) ev.fail("n_kl", "eval.n_kl must be at least 1000");
    if (e.n_samples < 1) ev.fail("n_samples", "eval.n_samples must be at least 1");
    if (!(e.keep_fraction > 0.0 && e.keep_fraction <= 1.0)) {
      ev.fail("keep_fraction", "eval.keep_fraction must lie in (0, 1]");
    }
    if (!(e.mode_radius > 0.0)) ev.fail("mode_radius", "eval.mode_radius must be positive");
    if (e.mode_min_count < 1) ev.fail("mode_min_count", "eval.mode_min_count must be >= 1");
    for (double r : e.radius_sweep) {
      if (!(r > 0.0)) ev.fail("radius_sweep", "eval.radius_sweep entries must be positive");
    }
  }

  if (top.has("normalizer")) {
    const Reader nz = top.object("normalizer");
    nz.allow_only({"n_mc", "seed"});
    cfg.normalizer.n_mc = nz.unsigned_or("n_mc", cfg.normalizer.n_mc);
    cfg.normalizer.seed = nz.unsigned_or("seed", cfg.normalizer.seed);
    if (cfg.normalizer.n_mc < 10000) nz.fail("n_mc", "normalizer.n_mc must be at least 10000");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), 0, "cannot open configuration file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), path.string(), path.stem().string());
}

bool is_builtin_experiment(const std::string& name) {
  return name == "exp1" || name == "exp2" || name == "boltz";
}

ExperimentConfig builtin_experiment(const std::string& name) {
  ExperimentConfig cfg;
  cfg.name = name;
  if (name == "exp1") {
    cfg.p = 3;
    cfg.q = 2;
    cfg.target.components = experiment1_mixture().components();
  } else if (name == "exp2") {
    cfg.p = 7;
    cfg.q = 3;
    cfg.target.components = experiment2_mixture().components();
  } else if (name == "boltz") {
    cfg.p = 12;
    cfg.q = 1;
    cfg.target.kind = TargetKind::boltzmann;
    cfg.target.boltzmann = benzene_params();
    cfg.target.symmetric = true;
  } else {
    throw ConfigError("<builtin>", 0,
                      "unknown experiment '" + name + "' (expected exp1, exp2 or boltz)");
  }
  return cfg;
}

json to_json(const ExperimentConfig& c) {
  json target;
  if (c.target.kind == TargetKind::vmf_mixture) {
    target["kind"] = "vmf_mixture";
    json comps = json::array();
    for (const auto& comp : c.target.components) {
      comps.push_back({{"mu", comp.mu}, {"kappa", comp.kappa}, {"weight", comp.weight}});
    }
    target["components"] = comps;
  } else {
    const BoltzmannParams& b = c.target.boltzmann;
    target = {{"kind", "boltzmann"}, {"kappa", b.kappa}, {"c", b.c},   {"V", b.V},
              {"x0", b.x0},          {"y0", b.y0},       {"e2", b.e2}, {"e3", b.e3}};
  }
  target["symmetric"] = c.target.symmetric;

  json prior;
  json train;
  for (int i = 0; i < 2; ++i) {
    const TorusSettings& t = c.tori[i];
    const std::string key = i == 0 ? "T1" : "T2";
    prior[key] = {{"kappa", t.prior.kappa}, {"sigma", t.prior.sigma}};
    train[key] = {{"epochs", t.train.epochs},
                  {"batch", t.train.batch},
                  {"lr", t.train.lr},
                  {"beta0", t.train.beta0},
                  {"anneal_epochs", t.train.anneal_epochs},
                  {"n_pairs", t.train.n_pairs},
                  {"circle", to_string(t.train.circle)}};
    if (t.auto_seam) {
      train[key]["seam"] = "auto";
    } else {
      train[key]["seam"] = t.train.seam;
    }
  }

  return {{"name", c.name},
          {"seed", c.seed},
          {"lens", {{"p", c.p}, {"q", c.q}}},
          {"target", target},
          {"prior", prior},
          {"train", train},
          {"eval",
           {{"n_kl", c.eval.n_kl},
            {"n_samples", c.eval.n_samples},
            {"keep_fraction", c.eval.keep_fraction},
            {"mode_radius", c.eval.mode_radius},
            {"mode_min_count", c.eval.mode_min_count},
            {"radius_sweep", c.eval.radius_sweep}}},
          {"normalizer", {{"n_mc", c.normalizer.n_mc}, {"seed", c.normalizer.seed}}}};
}

}  // namespace lensflow
