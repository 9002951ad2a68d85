#include "lensflow/flow_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "lensflow/bessel.hpp"

namespace lensflow {
namespace {

void apply_cap(Eigen::MatrixXd& out, OutputCap cap) {
  if (cap == OutputCap::tanh) out = out.array().tanh().matrix();
}

struct LayerTape {
  Eigen::RowVectorXd theta;
  Eigen::Matrix2Xd v;
  MlpCache s;
  MlpCache t;
};

// Runs the coupling stack in (θ ∈ ℝ, v ∈ ℝ²), adding each layer's log|det|.
void run_layers(const FlowTransform& flow, Eigen::RowVectorXd& theta, Eigen::Matrix2Xd& v,
                Eigen::RowVectorXd& logdet, std::vector<LayerTape>* tape) {
  if (tape) tape->resize(flow.layers.size());
  for (std::size_t li = 0; li < flow.layers.size(); ++li) {
    const CouplingLayer& layer = flow.layers[li];
    MlpCache* s_cache = nullptr;
    MlpCache* t_cache = nullptr;
    if (tape) {
      LayerTape& lt = (*tape)[li];
      lt.theta = theta;
      lt.v = v;
      s_cache = &lt.s;
      t_cache = &lt.t;
    }
    if (layer.kind == CouplingKind::fix_circle) {
      const Eigen::MatrixXd cond = theta;
      const Eigen::MatrixXd s = mlp_forward_batch(layer.s, cond, OutputCap::tanh, s_cache);
      const Eigen::MatrixXd t = mlp_forward_batch(layer.t, cond, OutputCap::linear, t_cache);
      v = (v.array() * s.array().exp() + t.array()).matrix();
      logdet += s.colwise().sum();
    } else {
      const Eigen::MatrixXd cond = v;
      const Eigen::MatrixXd s = mlp_forward_batch(layer.s, cond, OutputCap::tanh, s_cache);
      const Eigen::MatrixXd t = mlp_forward_batch(layer.t, cond, OutputCap::linear, t_cache);
      theta = (theta.array() * s.row(0).array().exp() + t.row(0).array()).matrix();
      logdet += s.row(0);
    }
  }
}

// Maps torus coordinates into the coupling domain (θ or u, v ∈ ℝ²), adding
// the entry log-determinants. Returns the number of clamped samples.
std::size_t enter_latent(const FlowTransform& flow, const Eigen::Matrix3Xd& points,
                         Eigen::RowVectorXd& theta, Eigen::Matrix2Xd& v,
                         Eigen::RowVectorXd& logdet) {
  std::size_t clamped = 0;
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const DiskMap m = disk_to_plane(points.block<2, 1>(1, i));
    v.col(i) = m.point;
    logdet(i) += m.logdet;
    bool c = m.clamped;
    if (flow.circle == CircleMode::interval) {
      const LineMap u = circle_to_line(points(0, i), flow.seam);
      theta(i) = u.value;
      logdet(i) += u.logdet;
      c = c || u.clamped;
    }
    clamped += c ? 1 : 0;
  }
  return clamped;
}

}  // namespace

MlpParams MlpParams::zeros(int d_in, int d_out, int hidden) {
  MlpParams m;
  m.W1 = Eigen::MatrixXd::Zero(hidden, d_in);
  m.b1 = Eigen::MatrixXd::Zero(hidden, 1);
  m.W2 = Eigen::MatrixXd::Zero(d_out, hidden);
  m.b2 = Eigen::MatrixXd::Zero(d_out, 1);
  return m;
}

Eigen::VectorXd mlp_forward(const MlpParams& m, const Eigen::VectorXd& u, OutputCap cap) {
  const Eigen::MatrixXd in = u;
  return mlp_forward_batch(m, in, cap).col(0);
}

Eigen::MatrixXd mlp_forward_batch(const MlpParams& m, const Eigen::MatrixXd& inputs,
                                  OutputCap cap, MlpCache* cache) {
  if (inputs.rows() != m.d_in()) {
    std::ostringstream os;
    os << "mlp_forward: expected input dimension " << m.d_in() << ", got " << inputs.rows();
    throw std::invalid_argument(os.str());
  }
  Eigen::MatrixXd hidden = m.W1 * inputs;
  hidden.colwise() += m.b1.col(0);
  hidden = hidden.cwiseMax(0.0);
  Eigen::MatrixXd out = m.W2 * hidden;
  out.colwise() += m.b2.col(0);
  apply_cap(out, cap);
  if (cache) {
    cache->input = inputs;
    cache->hidden = std::move(hidden);
    cache->output = out;
  }
  return out;
}

Eigen::MatrixXd mlp_backward_batch(const MlpParams& m, const MlpCache& cache, OutputCap cap,
                                   const Eigen::MatrixXd& d_output, MlpParams& grad) {
  Eigen::MatrixXd d_pre = d_output;
  if (cap == OutputCap::tanh) {
    d_pre = (d_output.array() * (1.0 - cache.output.array().square())).matrix();
  }
  grad.W2.noalias() += d_pre * cache.hidden.transpose();
  grad.b2.col(0) += d_pre.rowwise().sum();
  Eigen::MatrixXd d_hidden = m.W2.transpose() * d_pre;
  d_hidden = (cache.hidden.array() > 0.0).select(d_hidden, 0.0);
  grad.W1.noalias() += d_hidden * cache.input.transpose();
  grad.b1.col(0) += d_hidden.rowwise().sum();
  return m.W1.transpose() * d_hidden;
}

DiskMap plane_to_disk(const Eigen::Vector2d& v) {
  const double r = v.norm();
  return {v / (1.0 + r), -3.0 * std::log1p(r), false};
}

DiskMap disk_to_plane(const Eigen::Vector2d& w) {
  Eigen::Vector2d point = w;
  double r = w.norm();
  bool clamped = false;
  if (!(r < kDiskClamp)) {
    clamped = true;
    point = r > 0.0 ? Eigen::Vector2d(w * (kDiskClamp / r)) : Eigen::Vector2d::Zero();
    r = kDiskClamp;
  }
  return {point / (1.0 - r), -3.0 * std::log1p(-r), clamped};
}

const char* to_string(CircleMode mode) {
  return mode == CircleMode::wrap ? "wrap" : "interval";
}

CircleMode circle_mode_from_string(const std::string& name) {
  if (name == "wrap") return CircleMode::wrap;
  if (name == "interval") return CircleMode::interval;
  throw std::invalid_argument("unknown circle mode '" + name + "'");
}

LineMap circle_to_line(double theta, double seam) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = wrap_angle(theta - seam);
  bool clamped = false;
  const double lo = two_pi * kSeamClamp;
  if (a < lo || a > two_pi - lo) {
    a = std::clamp(a, lo, two_pi - lo);
    clamped = true;
  }
  const double rest = two_pi - a;
  return {std::log(a) - std::log(rest), std::log(two_pi) - std::log(a) - std::log(rest), clamped};
}

LineMap line_to_circle(double u, double seam) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  // log σ(u) = −softplus(−u), log(1 − σ(u)) = −softplus(u)
  const double softplus_pos = std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
  const double softplus_neg = softplus_pos - u;
  const double sigma = std::exp(-softplus_neg);
  return {wrap_angle(seam + two_pi * sigma), std::log(two_pi) - softplus_pos - softplus_neg,
          false};
}

const char* to_string(CouplingKind kind) {
  return kind == CouplingKind::fix_circle ? "fix_circle" : "fix_disk";
}

CouplingLayer CouplingLayer::zeros(CouplingKind kind, int hidden) {
  CouplingLayer layer;
  layer.kind = kind;
  const int d_in = kind == CouplingKind::fix_circle ? 1 : 2;
  const int d_out = kind == CouplingKind::fix_circle ? 2 : 1;
  layer.s = MlpParams::zeros(d_in, d_out, hidden);
  layer.t = MlpParams::zeros(d_in, d_out, hidden);
  return layer;
}

CouplingResult coupling_forward(const CouplingLayer& layer, double theta,
                                const Eigen::Vector2d& v) {
  CouplingResult out;
  if (layer.kind == CouplingKind::fix_circle) {
    const Eigen::VectorXd cond = Eigen::VectorXd::Constant(1, theta);
    const Eigen::VectorXd s = mlp_forward(layer.s, cond, OutputCap::tanh);
    const Eigen::VectorXd t = mlp_forward(layer.t, cond, OutputCap::linear);
    out.theta = theta;
    out.v = v.array() * s.array().exp() + t.array();
    out.logdet = s.sum();
  } else {
    const Eigen::VectorXd cond = v;
    const double s = mlp_forward(layer.s, cond, OutputCap::tanh)(0);
    const double t = mlp_forward(layer.t, cond, OutputCap::linear)(0);
    out.theta = theta * std::exp(s) + t;
    out.v = v;
    out.logdet = s;
  }
  return out;
}

CouplingResult coupling_inverse(const CouplingLayer& layer, double theta,
                                const Eigen::Vector2d& v) {
  CouplingResult out;
  if (layer.kind == CouplingKind::fix_circle) {
    const Eigen::VectorXd cond = Eigen::VectorXd::Constant(1, theta);
    const Eigen::VectorXd s = mlp_forward(layer.s, cond, OutputCap::tanh);
    const Eigen::VectorXd t = mlp_forward(layer.t, cond, OutputCap::linear);
    out.theta = theta;
    out.v = (v.array() - t.array()) * (-s.array()).exp();
    out.logdet = -s.sum();
  } else {
    const Eigen::VectorXd cond = v;
    const double s = mlp_forward(layer.s, cond, OutputCap::tanh)(0);
    const double t = mlp_forward(layer.t, cond, OutputCap::linear)(0);
    out.theta = (theta - t) * std::exp(-s);
    out.v = v;
    out.logdet = -s;
  }
  return out;
}

FlowTransform FlowTransform::zeros(int n_pairs, int hidden) {
  FlowTransform flow;
  for (int i = 0; i < n_pairs; ++i) {
    flow.layers.push_back(CouplingLayer::zeros(CouplingKind::fix_circle, hidden));
    flow.layers.push_back(CouplingLayer::zeros(CouplingKind::fix_disk, hidden));
  }
  return flow;
}

FlowTransform zeros_like(const FlowTransform& flow) {
  FlowTransform out = flow;
  for (auto& nt : named_tensors(out)) nt.tensor->setZero();
  return out;
}

std::vector<NamedTensor> named_tensors(FlowTransform& flow) {
  std::vector<NamedTensor> out;
  out.reserve(flow.layers.size() * 8);
  for (std::size_t li = 0; li < flow.layers.size(); ++li) {
    CouplingLayer& layer = flow.layers[li];
    const int idx = static_cast<int>(li);
    for (auto [net, params] : {std::pair{"s", &layer.s}, std::pair{"t", &layer.t}}) {
      const std::string prefix = "layer" + std::to_string(li) + "." + net + ".";
      out.push_back({prefix + "W1", idx, layer.kind, &params->W1});
      out.push_back({prefix + "b1", idx, layer.kind, &params->b1});
      out.push_back({prefix + "W2", idx, layer.kind, &params->W2});
      out.push_back({prefix + "b2", idx, layer.kind, &params->b2});
    }
  }
  return out;
}

std::size_t parameter_count(const FlowTransform& flow) {
  std::size_t n = 0;
  for (const auto& nt : named_tensors(const_cast<FlowTransform&>(flow))) {
    n += static_cast<std::size_t>(nt.tensor->size());
  }
  return n;
}

FlowBatch flow_forward_batch(const FlowTransform& flow, const Eigen::Matrix3Xd& points) {
  const Eigen::Index n = points.cols();
  FlowBatch out;
  Eigen::RowVectorXd theta = points.row(0);
  Eigen::Matrix2Xd v(2, n);
  out.logdet = Eigen::RowVectorXd::Zero(n);
  out.clamped = enter_latent(flow, points, theta, v, out.logdet);
  run_layers(flow, theta, v, out.logdet, nullptr);
  out.points.resize(3, n);
  out.theta_unwrapped.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const DiskMap m = plane_to_disk(v.col(i));
    if (flow.circle == CircleMode::wrap) {
      out.theta_unwrapped(i) = theta(i);
      out.points(0, i) = wrap_angle(theta(i));
    } else {
      const LineMap c = line_to_circle(theta(i), 0.0);
      out.theta_unwrapped(i) = c.value;
      out.points(0, i) = wrap_angle(c.value + flow.seam);
      out.logdet(i) += c.logdet;
    }
    out.points.block<2, 1>(1, i) = m.point;
    out.logdet(i) += m.logdet;
  }
  return out;
}

FlowOutput flow_forward(const FlowTransform& flow, double theta, double x, double y) {
  Eigen::Matrix3Xd in(3, 1);
  in << theta, x, y;
  const FlowBatch b = flow_forward_batch(flow, in);
  return {b.points(0, 0), b.theta_unwrapped(0), b.points(1, 0), b.points(2, 0), b.logdet(0),
          b.clamped > 0};
}

void validate(const PriorParams& prior) {
  if (!(prior.kappa >= 0.0)) throw std::invalid_argument("prior kappa must be >= 0");
  if (!(prior.sigma > 0.0)) throw std::invalid_argument("prior sigma must be > 0");
}

double prior_logpdf(const PriorParams& prior, double theta, double x, double y) {
  const double r2 = x * x + y * y;
  if (r2 > 1.0 + 1e-12) throw std::domain_error("prior_logpdf: point outside the unit disk");
  const double s2 = prior.sigma * prior.sigma;
  const double circle =
      prior.kappa * std::cos(theta) - std::log(2.0 * std::numbers::pi) - log_bessel_i0(prior.kappa);
  const double disk = -r2 / (2.0 * s2) -
                      std::log(2.0 * std::numbers::pi * s2 * -std::expm1(-1.0 / (2.0 * s2)));
  return circle + disk;
}

double sample_von_mises(double kappa, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (kappa < 1e-8) return std::numbers::pi * (2.0 * unif(rng) - 1.0);
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double u1 = unif(rng);
    const double u2 = unif(rng);
    const double u3 = unif(rng);
    const double z = std::cos(std::numbers::pi * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
      const double angle = std::acos(std::clamp(f, -1.0, 1.0));
      return u3 > 0.5 ? angle : -angle;
    }
  }
  throw std::runtime_error("von Mises sampler exceeded its retry cap");
}

Eigen::Matrix3Xd prior_sample(const PriorParams& prior, std::size_t n, std::mt19937_64& rng) {
  validate(prior);
  std::normal_distribution<double> normal(0.0, prior.sigma);
  Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    out(0, col) = wrap_angle(sample_von_mises(prior.kappa, rng));
    bool accepted = false;
    for (int attempt = 0; attempt < 100000 && !accepted; ++attempt) {
      const double x = normal(rng);
      const double y = normal(rng);
      if (x * x + y * y <= 1.0) {
        out(1, col) = x;
        out(2, col) = y;
        accepted = true;
      }
    }
    if (!accepted) throw std::runtime_error("truncated normal sampler exceeded its retry cap");
  }
  return out;
}

namespace {

// Forward pass, loss terms and backprop for one block of columns; gradients
// are added into `grad`, per-sample sums into the two accumulators.
void accumulate_block(const FlowTransform& flow, const PriorParams& prior,
                      const LogDensityFn& target, const Eigen::Matrix3Xd& batch, double inv_n,
                      double entropy_weight, FlowTransform& grad, double& sum_kl,
                      double& sum_model) {
  const Eigen::Index n = batch.cols();
  Eigen::RowVectorXd theta = batch.row(0);
  Eigen::Matrix2Xd v(2, n);
  Eigen::RowVectorXd logdet = Eigen::RowVectorXd::Zero(n);
  enter_latent(flow, batch, theta, v, logdet);
  std::vector<LayerTape> tape;
  run_layers(flow, theta, v, logdet, &tape);

  // Coefficient of each sample's log|det J| in the loss.
  const double ld_coef = -(1.0 + entropy_weight) * inv_n;
  Eigen::RowVectorXd g_theta(n);
  Eigen::Matrix2Xd g_v(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d vc = v.col(i);
    const DiskMap m = plane_to_disk(vc);
    double ld = logdet(i) + m.logdet;
    double theta_out = wrap_angle(theta(i));
    // d(θ_out)/du and d(exit log|det|)/du for the interval circle map
    double dtheta_du = 1.0;
    double dld_du = 0.0;
    if (flow.circle == CircleMode::interval) {
      const LineMap c = line_to_circle(theta(i), flow.seam);
      theta_out = c.value;
      ld += c.logdet;
      const double sig = 1.0 / (1.0 + std::exp(-theta(i)));
      dtheta_du = 2.0 * std::numbers::pi * sig * (1.0 - sig);
      dld_du = 1.0 - 2.0 * sig;
    }
    const Vec3 out{theta_out, m.point.x(), m.point.y()};
    Vec3 grad_q{0.0, 0.0, 0.0};
    const double log_q = target(out, &grad_q);
    const double model = prior_logpdf(prior, batch(0, i), batch(1, i), batch(2, i)) - ld;
    const double kl_term = model - log_q;
    if (!std::isfinite(kl_term) || !std::isfinite(grad_q[0]) || !std::isfinite(grad_q[1]) ||
        !std::isfinite(grad_q[2])) {
      std::ostringstream os;
      os << "non-finite loss term at prior sample (" << batch(0, i) << ", " << batch(1, i) << ", "
         << batch(2, i) << ")";
      throw NonFiniteLoss(os.str(), {batch(0, i), batch(1, i), batch(2, i)});
    }
    sum_kl += kl_term;
    sum_model += model;

    // Adjoint of the final plane → disk map, including its log|det| term.
    const Eigen::Vector2d g_w(-grad_q[1] * inv_n, -grad_q[2] * inv_n);
    const double r = vc.norm();
    Eigen::Vector2d gv = g_w / (1.0 + r);
    if (r > 0.0) {
      gv -= vc * (vc.dot(g_w) / (r * (1.0 + r) * (1.0 + r)));
      gv += ld_coef * (-3.0 / ((1.0 + r) * r)) * vc;
    }
    g_v.col(i) = gv;
    g_theta(i) = -grad_q[0] * inv_n * dtheta_du + ld_coef * dld_du;
  }

  for (std::size_t li = flow.layers.size(); li-- > 0;) {
    const CouplingLayer& layer = flow.layers[li];
    const LayerTape& lt = tape[li];
    CouplingLayer& g = grad.layers[li];
    const Eigen::ArrayXXd es = lt.s.output.array().exp();
    if (layer.kind == CouplingKind::fix_circle) {
      const Eigen::MatrixXd d_t = g_v;
      const Eigen::MatrixXd d_s = (g_v.array() * lt.v.array() * es + ld_coef).matrix();
      g_v = (g_v.array() * es).matrix();
      g_theta += mlp_backward_batch(layer.s, lt.s, OutputCap::tanh, d_s, g.s);
      g_theta += mlp_backward_batch(layer.t, lt.t, OutputCap::linear, d_t, g.t);
    } else {
      const Eigen::MatrixXd d_t = g_theta;
      const Eigen::MatrixXd d_s =
          (g_theta.array() * lt.theta.array() * es.row(0) + ld_coef).matrix();
      g_theta = (g_theta.array() * es.row(0)).matrix();
      g_v += mlp_backward_batch(layer.s, lt.s, OutputCap::tanh, d_s, g.s);
      g_v += mlp_backward_batch(layer.t, lt.t, OutputCap::linear, d_t, g.t);
    }
  }
}

constexpr Eigen::Index kBlockColumns = 128;

}  // namespace

LossGradient flow_backward_gradients(const FlowTransform& flow, const PriorParams& prior,
                                     const LogDensityFn& target, const Eigen::Matrix3Xd& batch,
                                     double entropy_weight) {
  const Eigen::Index n = batch.cols();
  if (n == 0) throw std::invalid_argument("flow_backward_gradients: empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);

  LossGradient result;
  result.grad = zeros_like(flow);
  double sum_kl = 0.0;
  double sum_model = 0.0;
  // Fixed block order keeps the reduction deterministic.
  for (Eigen::Index start = 0; start < n; start += kBlockColumns) {
    const Eigen::Index width = std::min(kBlockColumns, n - start);
    const Eigen::Matrix3Xd block = batch.middleCols(start, width);
    accumulate_block(flow, prior, target, block, inv_n, entropy_weight, result.grad, sum_kl,
                     sum_model);
  }
  result.kl = sum_kl * inv_n;
  result.entropy = -sum_model * inv_n;
  result.loss = result.kl - entropy_weight * result.entropy;
  return result;
}

}  // namespace lensflow
