#include "lensflow/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace lensflow {
namespace {

constexpr std::size_t kEvalBlock = 4096;

class Accumulator {
 public:
  void add(double v) {
    if (!std::isfinite(v)) {
      ++nonfinite_;
      return;
    }
    // Welford
    ++n_;
    const double delta = v - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (v - mean_);
  }

  Estimate finish(const char* what) const {
    const std::size_t total = n_ + nonfinite_;
    if (total > 0 && static_cast<double>(nonfinite_) > 0.01 * static_cast<double>(total)) {
      std::ostringstream os;
      os << what << ": " << nonfinite_ << " of " << total << " summands are non-finite";
      throw std::runtime_error(os.str());
    }
    Estimate e;
    e.mean = mean_;
    e.n_used = n_;
    e.n_nonfinite = nonfinite_;
    e.std_error = n_ > 1 ? std::sqrt(m2_ / static_cast<double>(n_ - 1) / static_cast<double>(n_))
                         : 0.0;
    return e;
  }

 private:
  std::size_t n_ = 0;
  std::size_t nonfinite_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// Pushes `count` prior samples of one chart through its flow and reports each
// (z, F(z), log p_Z − log|det J|) to `visit`.
template <class Visit>
void push_samples(const TorusModel& model, std::size_t count, std::mt19937_64& rng,
                  Visit&& visit) {
  if (!model.flow) throw std::invalid_argument("torus model without a flow");
  std::size_t done = 0;
  while (done < count) {
    const std::size_t m = std::min(kEvalBlock, count - done);
    const Eigen::Matrix3Xd z = prior_sample(model.prior, m, rng);
    const FlowBatch out = flow_forward_batch(*model.flow, z);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(m); ++i) {
      const double log_model = prior_logpdf(model.prior, z(0, i), z(1, i), z(2, i)) - out.logdet(i);
      visit(Vec3{out.points(0, i), out.points(1, i), out.points(2, i)}, log_model);
    }
    done += m;
  }
}

std::array<std::size_t, 2> split_charts(double w, std::size_t n, std::mt19937_64& rng) {
  if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("mixture weight must lie in [0, 1]");
  std::bernoulli_distribution coin(w);
  std::size_t second = 0;
  for (std::size_t i = 0; i < n; ++i) second += coin(rng) ? 1 : 0;
  return {n - second, second};
}

double arc_distance(double a, double b) {
  const double d = std::abs(wrap_angle(a) - wrap_angle(b));
  return std::min(d, kTwoPi - d);
}

bool sample_order(const LabeledSample& a, const LabeledSample& b) {
  if (a.log_q != b.log_q) return a.log_q > b.log_q;
  if (a.chart != b.chart) return chart_index(a.chart) < chart_index(b.chart);
  if (a.theta != b.theta) return a.theta < b.theta;
  if (a.x != b.x) return a.x < b.x;
  return a.y < b.y;
}

}  // namespace

Estimate local_kl(const TorusModel& model, const LogDensityFn& target, std::size_t n,
                  std::mt19937_64& rng) {
  if (n < 1000) throw std::invalid_argument("local_kl needs at least 10^3 samples");
  Accumulator acc;
  push_samples(model, n, rng, [&](const Vec3& x, double log_model) {
    acc.add(log_model - target(x, nullptr));
  });
  return acc.finish("local_kl");
}

Estimate global_kl(const std::array<TorusModel, 2>& models, const PushforwardDensity& target,
                   double w, std::size_t n, std::mt19937_64& rng) {
  if (n < 1000) throw std::invalid_argument("global_kl needs at least 10^3 samples");
  const auto counts = split_charts(w, n, rng);
  const double log_total = target.normalizers().log_total();
  Accumulator acc;
  for (Chart chart : {Chart::one, Chart::two}) {
    const int c = chart_index(chart);
    const double log_weight = std::log(chart == Chart::one ? 1.0 - w : w);
    push_samples(models[c], counts[c], rng, [&](const Vec3& x, double log_model) {
      const double log_q = target.logpdf<double>(chart, x[0], x[1], x[2]) - log_total;
      acc.add(log_weight + log_model - log_q);
    });
  }
  return acc.finish("global_kl");
}

double kl_decomposition(double kl1, double kl2, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("mixture weight must lie in [0, 1]");
  return (1.0 - w) * kl1 + w * kl2;
}

std::vector<LabeledSample> sample_model(const std::array<TorusModel, 2>& models,
                                        const PushforwardDensity& target, double w,
                                        std::size_t n, std::mt19937_64& rng) {
  const auto counts = split_charts(w, n, rng);
  const double log_total = target.has_normalizers() ? target.normalizers().log_total() : 0.0;
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (Chart chart : {Chart::one, Chart::two}) {
    const int c = chart_index(chart);
    push_samples(models[c], counts[c], rng, [&](const Vec3& x, double log_model) {
      const double log_q = target.logpdf<double>(chart, x[0], x[1], x[2]) - log_total;
      out.push_back({chart, x[0], x[1], x[2], log_q, log_model});
    });
  }
  return out;
}

std::vector<LabeledSample> top_percentile_filter(const std::vector<LabeledSample>& samples,
                                                 double keep_fraction, bool per_chart) {
  if (samples.empty()) throw std::invalid_argument("top_percentile_filter: no samples");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw std::invalid_argument("top_percentile_filter: keep_fraction must lie in (0, 1]");
  }
  auto keep_group = [keep_fraction](std::vector<LabeledSample> group,
                                    std::vector<LabeledSample>& out) {
    if (group.empty()) return;
    std::sort(group.begin(), group.end(), sample_order);
    const auto k = static_cast<std::size_t>(
        std::ceil(keep_fraction * static_cast<double>(group.size()) - 1e-9));
    const std::size_t keep = std::clamp<std::size_t>(k, 1, group.size());
    const double threshold = group[keep - 1].log_q;
    for (const auto& s : group) {
      if (s.log_q >= threshold) out.push_back(s);
    }
  };
  std::vector<LabeledSample> out;
  if (per_chart) {
    std::array<std::vector<LabeledSample>, 2> groups;
    for (const auto& s : samples) groups[chart_index(s.chart)].push_back(s);
    keep_group(std::move(groups[0]), out);
    keep_group(std::move(groups[1]), out);
  } else {
    keep_group(samples, out);
  }
  return out;
}

std::array<int, 2> count_modes(const std::vector<LabeledSample>& samples, double radius,
                               int min_count) {
  if (!(radius > 0.0)) throw std::invalid_argument("count_modes: radius must be positive");
  std::vector<LabeledSample> ordered = samples;
  std::sort(ordered.begin(), ordered.end(), sample_order);
  struct Cluster {
    LabeledSample leader;
    int members = 0;
  };
  std::array<std::vector<Cluster>, 2> clusters;
  for (const auto& s : ordered) {
    auto& list = clusters[chart_index(s.chart)];
    bool assigned = false;
    for (auto& c : list) {
      const double da = arc_distance(s.theta, c.leader.theta);
      const double dx = s.x - c.leader.x;
      const double dy = s.y - c.leader.y;
      if (std::sqrt(da * da + dx * dx + dy * dy) <= radius) {
        ++c.members;
        assigned = true;
        break;
      }
    }
    if (!assigned) list.push_back({s, 1});
  }
  std::array<int, 2> modes{0, 0};
  for (int c = 0; c < 2; ++c) {
    for (const auto& cl : clusters[c]) modes[c] += cl.members >= min_count ? 1 : 0;
  }
  return modes;
}

void write_samples_csv(std::ostream& os, const std::vector<LabeledSample>& samples) {
  os << "chart,theta,x,y,log_q,log_model\n" << std::setprecision(17);
  for (const auto& s : samples) {
    os << static_cast<int>(s.chart) << ',' << s.theta << ',' << s.x << ',' << s.y << ','
       << s.log_q << ',' << s.log_model << '\n';
  }
}

void write_scatter_svg(std::ostream& os, const std::vector<LabeledSample>& samples, Chart chart) {
  constexpr double kWidth = 640.0;
  constexpr double kHeight = 640.0;
  constexpr double kMargin = 40.0;
  std::vector<LabeledSample> pts;
  for (const auto& s : samples) {
    if (s.chart == chart) pts.push_back(s);
  }
  std::vector<double> sorted_q;
  sorted_q.reserve(pts.size());
  for (const auto& s : pts) sorted_q.push_back(s.log_q);
  std::sort(sorted_q.begin(), sorted_q.end());

  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kMargin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">T"
     << static_cast<int>(chart) << ": theta (horizontal) vs disk angle (vertical)</text>\n";
  os << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin
     << "\" height=\"" << kHeight - 2 * kMargin << "\" fill=\"none\" stroke=\"black\"/>\n";
  const double span_x = kWidth - 2 * kMargin;
  const double span_y = kHeight - 2 * kMargin;
  for (const auto& s : pts) {
    const auto rank = std::lower_bound(sorted_q.begin(), sorted_q.end(), s.log_q) - sorted_q.begin();
    const double u = sorted_q.size() > 1
                         ? static_cast<double>(rank) / static_cast<double>(sorted_q.size() - 1)
                         : 1.0;
    // red (low) → yellow (high)
    const int green = static_cast<int>(std::lround(255.0 * u));
    const double px = kMargin + span_x * s.theta / kTwoPi;
    const double py = kMargin + span_y * (1.0 - wrap_angle(std::atan2(s.y, s.x)) / kTwoPi);
    os << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"1.5\" fill=\"rgb(255," << green
       << ",0)\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace lensflow
