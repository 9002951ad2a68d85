#include "lensflow/trainer.hpp"

#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace lensflow {
namespace {

constexpr int kMaxConsecutiveFailures = 10;

Eigen::MatrixXd orthogonal(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) a(i, j) = normal(rng);
  const bool tall = rows >= cols;
  if (!tall) a.transposeInPlace();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  const Eigen::MatrixXd r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  if (!tall) q.transposeInPlace();
  return q;
}

Eigen::MatrixXd xavier_uniform(int rows, int cols, double gain, std::mt19937_64& rng) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> unif(-bound, bound);
  Eigen::MatrixXd w(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) w(i, j) = unif(rng);
  return w;
}

void init_mlp(MlpParams& m, std::mt19937_64& rng) {
  m.W1 = orthogonal(m.hidden(), m.d_in(), rng);
  m.b1.setZero();
  m.W2 = xavier_uniform(m.d_out(), m.hidden(), 0.01, rng);
  m.b2.setZero();
}

}  // namespace

void validate(const TrainConfig& config) {
  if (config.epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (config.batch < 1) throw std::invalid_argument("train.batch must be >= 1");
  if (!(config.lr > 0.0)) throw std::invalid_argument("train.lr must be > 0");
  if (!(config.beta0 >= 0.0)) throw std::invalid_argument("train.beta0 must be >= 0");
  if (config.anneal_epochs < 0) throw std::invalid_argument("train.anneal_epochs must be >= 0");
  if (config.n_pairs < 1) throw std::invalid_argument("train.n_pairs must be >= 1");
  if (!std::isfinite(config.seam)) throw std::invalid_argument("train.seam must be finite");
}

std::uint64_t torus_seed(std::uint64_t master, Chart chart) {
  return master + 1000003ULL * static_cast<std::uint64_t>(chart_index(chart) + 1);
}

FlowTransform init_flow(const TrainConfig& config, std::mt19937_64& rng) {
  FlowTransform flow = FlowTransform::zeros(config.n_pairs);
  flow.circle = config.circle;
  flow.seam = config.seam;
  for (auto& layer : flow.layers) {
    init_mlp(layer.s, rng);
    init_mlp(layer.t, rng);
  }
  return flow;
}

double anneal_weight(double beta0, double epoch, double anneal_epochs) {
  if (anneal_epochs <= 0.0) return 0.0;
  return beta0 * std::max(0.0, 1.0 - epoch / anneal_epochs);
}

AdamState AdamState::for_flow(const FlowTransform& flow) {
  AdamState s;
  s.m = zeros_like(flow);
  s.v = zeros_like(flow);
  return s;
}

bool adam_step(AdamState& state, FlowTransform& params, const FlowTransform& grads, double lr) {
  auto p = named_tensors(params);
  auto g = named_tensors(const_cast<FlowTransform&>(grads));
  auto m = named_tensors(state.m);
  auto v = named_tensors(state.v);
  if (p.size() != g.size() || p.size() != m.size()) {
    throw std::invalid_argument("adam_step: parameter and gradient layouts differ");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].tensor->rows() != g[i].tensor->rows() || p[i].tensor->cols() != g[i].tensor->cols()) {
      throw std::invalid_argument("adam_step: shape mismatch in " + p[i].name);
    }
    if (!g[i].tensor->allFinite()) return false;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    Eigen::MatrixXd& mi = *m[i].tensor;
    Eigen::MatrixXd& vi = *v[i].tensor;
    const Eigen::MatrixXd& gi = *g[i].tensor;
    mi = state.beta1 * mi + (1.0 - state.beta1) * gi;
    vi = state.beta2 * vi + (1.0 - state.beta2) * gi.cwiseProduct(gi);
    p[i].tensor->array() -=
        lr * (mi.array() / c1) / ((vi.array() / c2).sqrt() + state.eps);
  }
  return true;
}

double least_likely_angle(const PushforwardDensity& target, Chart chart, std::uint64_t seed,
                          int n_theta, int n_disk) {
  if (n_theta < 1 || n_disk < 1) throw std::invalid_argument("least_likely_angle: empty grid");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::array<double, 2>> disk(static_cast<std::size_t>(n_disk));
  for (auto& d : disk) {
    const double r = std::sqrt(unif(rng));
    const double a = kTwoPi * unif(rng);
    d = {r * std::cos(a), r * std::sin(a)};
  }
  double best_angle = 0.0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> terms(disk.size());
  for (int k = 0; k < n_theta; ++k) {
    const double theta = kTwoPi * (k + 0.5) / n_theta;
    for (std::size_t j = 0; j < disk.size(); ++j) {
      terms[j] = target.logpdf<double>(chart, theta, disk[j][0], disk[j][1]);
    }
    const double marginal = log_sum_exp(terms);
    if (marginal < best) {
      best = marginal;
      best_angle = theta;
    }
  }
  return best_angle;
}

LogDensityFn chart_target(const PushforwardDensity& target, Chart chart) {
  return [&target, chart](const Vec3& point, Vec3* gradient) {
    return target.normalized_logpdf(chart, point, gradient);
  };
}

TrainResult train_torus(const PushforwardDensity& target, Chart chart, const PriorParams& prior,
                        const TrainConfig& config, const EpochCallback& on_epoch) {
  validate(config);
  validate(prior);
  target.normalizers();  // throws if missing

  std::mt19937_64 rng(config.seed);
  TrainResult result;
  result.flow = init_flow(config, rng);
  AdamState adam = AdamState::for_flow(result.flow);
  const LogDensityFn q = chart_target(target, chart);
  int consecutive = 0;
  result.history.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double beta = anneal_weight(config.beta0, epoch, config.anneal_epochs);
    const Eigen::Matrix3Xd batch =
        prior_sample(prior, static_cast<std::size_t>(config.batch), rng);
    HistoryEntry entry{epoch, 0.0, 0.0, 0.0, beta};
    try {
      const LossGradient lg = flow_backward_gradients(result.flow, prior, q, batch, beta);
      entry.kl = lg.kl;
      entry.entropy = lg.entropy;
      entry.loss = lg.kl - beta * lg.entropy;
      if (!adam_step(adam, result.flow, lg.grad, config.lr)) ++result.skipped_steps;
      consecutive = 0;
    } catch (const NonFiniteLoss& e) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      entry.loss = entry.kl = entry.entropy = nan;
      ++result.nonfinite_epochs;
      if (++consecutive >= kMaxConsecutiveFailures) {
        throw TrainingAborted("training aborted after " + std::to_string(consecutive) +
                              " consecutive non-finite epochs (last: " + e.what() + ")");
      }
    }
    result.history.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

void write_history_csv(std::ostream& os, const std::vector<HistoryEntry>& history) {
  os << "epoch,loss,kl,entropy,anneal_weight\n";
  os << std::setprecision(17);
  for (const auto& h : history) {
    os << h.epoch << ',' << h.loss << ',' << h.kl << ',' << h.entropy << ',' << h.anneal_weight
       << '\n';
  }
}

}  // namespace lensflow
