#pragma once

#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lensflow/lens_geometry.hpp"

namespace lensflow {

inline constexpr int kHiddenWidth = 64;
/// Largest disk radius accepted by disk_to_plane.
inline constexpr double kDiskClamp = 1.0 - 1e-12;

enum class OutputCap { linear, tanh };

/// Linear(d_in, 64) → ReLU → Linear(64, d_out). Biases are stored as
/// one-column matrices so every tensor has the same type.
struct MlpParams {
  Eigen::MatrixXd W1;
  Eigen::MatrixXd b1;
  Eigen::MatrixXd W2;
  Eigen::MatrixXd b2;

  static MlpParams zeros(int d_in, int d_out, int hidden = kHiddenWidth);
  int d_in() const { return static_cast<int>(W1.cols()); }
  int d_out() const { return static_cast<int>(W2.rows()); }
  int hidden() const { return static_cast<int>(W1.rows()); }
};

Eigen::VectorXd mlp_forward(const MlpParams& m, const Eigen::VectorXd& u, OutputCap cap);

/// Activations kept by the batched forward pass for backprop.
struct MlpCache {
  Eigen::MatrixXd input;
  Eigen::MatrixXd hidden;  // post-ReLU
  Eigen::MatrixXd output;  // post-cap
};

/// Columns of `inputs` are samples. Throws std::invalid_argument on a shape
/// mismatch.
Eigen::MatrixXd mlp_forward_batch(const MlpParams& m, const Eigen::MatrixXd& inputs,
                                  OutputCap cap, MlpCache* cache = nullptr);

/// Backprop of d(loss)/d(output) through the cached pass. Adds parameter
/// gradients into `grad` and returns d(loss)/d(input).
Eigen::MatrixXd mlp_backward_batch(const MlpParams& m, const MlpCache& cache, OutputCap cap,
                                   const Eigen::MatrixXd& d_output, MlpParams& grad);

// ---------------------------------------------------------------------------
// Disk ↔ plane

struct DiskMap {
  Eigen::Vector2d point;
  double logdet = 0.0;
  bool clamped = false;
};

/// w = v / (1 + ‖v‖), log|det| = −3 log(1 + ‖v‖).
DiskMap plane_to_disk(const Eigen::Vector2d& v);
/// v = w / (1 − ‖w‖), log|det| = −3 log(1 − ‖w‖). Radii at or beyond
/// 1 − 1e-12 are clamped and flagged.
DiskMap disk_to_plane(const Eigen::Vector2d& w);

// ---------------------------------------------------------------------------
// Coupling layers

/// fix_circle keeps θ and moves the plane coordinates; fix_disk keeps the
/// plane coordinates and moves θ.
enum class CouplingKind { fix_circle, fix_disk };

const char* to_string(CouplingKind kind);

struct CouplingLayer {
  CouplingKind kind = CouplingKind::fix_circle;
  MlpParams s;  // tanh-capped scale
  MlpParams t;  // linear translation

  static CouplingLayer zeros(CouplingKind kind, int hidden = kHiddenWidth);
};

struct CouplingResult {
  double theta = 0.0;
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  double logdet = 0.0;
};

/// fix_circle: v' = v ⊙ e^{s(θ)} + t(θ); fix_disk: θ' = θ e^{s(v)} + t(v).
CouplingResult coupling_forward(const CouplingLayer& layer, double theta,
                                const Eigen::Vector2d& v);
/// Closed-form inverse at the conditioner's fixed input.
CouplingResult coupling_inverse(const CouplingLayer& layer, double theta,
                                const Eigen::Vector2d& v);

// ---------------------------------------------------------------------------
// Circle coordinate handling

/// wrap: couplings act on θ ∈ [0, 2π) directly and the result is reduced
/// mod 2π, which is not injective once the net θ stretch exceeds 1.
/// interval: the circle is cut at `seam`, the open arc is mapped onto ℝ by
/// a logit and back by a sigmoid, so the flow is a diffeomorphism of the
/// cut torus.
enum class CircleMode { wrap, interval };

const char* to_string(CircleMode mode);
/// Throws std::invalid_argument for an unknown name.
CircleMode circle_mode_from_string(const std::string& name);

/// Arc lengths within 2π·1e-12 of the seam are clamped.
inline constexpr double kSeamClamp = 1e-12;

struct LineMap {
  double value = 0.0;
  double logdet = 0.0;
  bool clamped = false;
};

/// a = (θ − seam) mod 2π, u = log(a / (2π − a)), log|du/dθ| = log 2π − log a − log(2π − a).
LineMap circle_to_line(double theta, double seam);
/// θ = (seam + 2π·sigmoid(u)) mod 2π, log|dθ/du| = log 2π + log σ(u) + log(1 − σ(u)).
LineMap line_to_circle(double u, double seam);

/// Alternating fix_circle / fix_disk pairs.
struct FlowTransform {
  std::vector<CouplingLayer> layers;
  CircleMode circle = CircleMode::wrap;
  double seam = std::numbers::pi;  // used by CircleMode::interval only

  static FlowTransform zeros(int n_pairs, int hidden = kHiddenWidth);
  int n_pairs() const { return static_cast<int>(layers.size() / 2); }
};

/// Same-shaped zero tensors, used to hold gradients and optimizer moments.
FlowTransform zeros_like(const FlowTransform& flow);

struct NamedTensor {
  std::string name;
  int layer = 0;
  CouplingKind kind = CouplingKind::fix_circle;
  Eigen::MatrixXd* tensor = nullptr;
};

/// Every parameter tensor in a fixed order: layer by layer, s before t,
/// W1, b1, W2, b2.
std::vector<NamedTensor> named_tensors(FlowTransform& flow);
std::size_t parameter_count(const FlowTransform& flow);

struct FlowOutput {
  double theta = 0.0;            // in [0, 2π)
  double theta_unwrapped = 0.0;  // before the final modulus (wrap) or seam shift (interval)
  double x = 0.0;
  double y = 0.0;
  double logdet = 0.0;
  bool clamped = false;
};

/// Disk → plane, coupling stack, θ back to the circle and plane → disk.
FlowOutput flow_forward(const FlowTransform& flow, double theta, double x, double y);

/// Batched flow_forward. Rows of `points` are (θ, x, y).
struct FlowBatch {
  Eigen::Matrix3Xd points;       // θ wrapped
  Eigen::RowVectorXd theta_unwrapped;
  Eigen::RowVectorXd logdet;
  std::size_t clamped = 0;
};
FlowBatch flow_forward_batch(const FlowTransform& flow, const Eigen::Matrix3Xd& points);

// ---------------------------------------------------------------------------
// Prior: von Mises(0, κ) on the circle times N(0, σ²I) truncated to D²

struct PriorParams {
  double kappa = 5.0;
  double sigma = 0.25;
};

void validate(const PriorParams& prior);

/// Throws std::domain_error for points outside the closed disk.
double prior_logpdf(const PriorParams& prior, double theta, double x, double y);

/// Best–Fisher von Mises sampler; returns θ in (−π, π].
double sample_von_mises(double kappa, std::mt19937_64& rng);

/// θ in [0, 2π), (x, y) by Gaussian rejection into the disk. Throws
/// std::runtime_error if a rejection loop exceeds its retry cap.
Eigen::Matrix3Xd prior_sample(const PriorParams& prior, std::size_t n, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Reverse-KL loss and its gradient

/// Target log-density at a mapped point; fills the gradient in (θ, x, y) when
/// asked.
using LogDensityFn = std::function<double(const Vec3& point, Vec3* gradient)>;

struct LossGradient {
  FlowTransform grad;
  double loss = 0.0;     // kl − entropy_weight · entropy
  double kl = 0.0;       // mean of log p_Z − log|det J| − log q
  double entropy = 0.0;  // −mean of log p_Z − log|det J|
};

/// Thrown when a batch produces a non-finite loss term.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, Vec3 sample)
      : std::runtime_error(what), sample_(sample) {}
  const Vec3& sample() const { return sample_; }

 private:
  Vec3 sample_;
};

/// Reverse-mode gradient of the loss over a prior batch with respect to every
/// MLP parameter.
LossGradient flow_backward_gradients(const FlowTransform& flow, const PriorParams& prior,
                                     const LogDensityFn& target, const Eigen::Matrix3Xd& batch,
                                     double entropy_weight);

}  // namespace lensflow
