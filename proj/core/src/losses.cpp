#include "actseg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace actseg {

std::string to_string(SmoothingMode m) {
  return m == SmoothingMode::plain_mse ? "plain_mse" : "truncated_adjacent";
}

SmoothingMode parse_smoothing_mode(const std::string& s) {
  if (s == "plain_mse") return SmoothingMode::plain_mse;
  if (s == "truncated_adjacent") return SmoothingMode::truncated_adjacent;
  throw ConfigError("unknown smoothing_mode '" + s + "'");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("loss lambda must be >= 0");
  if (!(truncation > 0.0)) throw ConfigError("loss truncation must be > 0");
}

namespace {

template <typename S>
void check_labels(Index rows, Index cols, std::span<const int> labels) {
  if (rows == 0) throw EmptyInput("loss over zero frames");
  if (static_cast<Index>(labels.size()) != rows)
    throw ShapeError(std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " frames");
  for (int l : labels)
    if (l < 0 || l >= cols) throw RangeError("label " + std::to_string(l) + " outside [0," + std::to_string(cols) + ")");
}

double safe_log(double p) { return std::log(std::max(p, kProbabilityFloor)); }

// Squared truncated difference between current log-probabilities and a
// constant previous-frame reference; optionally accumulates d/d(logp).
template <typename S>
double truncated_adjacent_term(const Mat<S>& logp, const Mat<S>& reference_logp, double tau, Mat<S>* d_logp) {
  const Index t = logp.rows();
  const Index k = logp.cols();
  if (d_logp) d_logp->setZero(t, k);
  if (t < 2) return 0.0;
  const double n = static_cast<double>((t - 1) * k);
  double sum = 0.0;
  for (Index r = 1; r < t; ++r)
    for (Index c = 0; c < k; ++c) {
      const double delta = static_cast<double>(logp(r, c)) - static_cast<double>(reference_logp(r - 1, c));
      const double clipped = std::min(std::abs(delta), tau);
      sum += clipped * clipped;
      if (d_logp && std::abs(delta) < tau) (*d_logp)(r, c) = static_cast<S>(2.0 * delta / n);
    }
  return sum / n;
}

}  // namespace

template <typename S>
Mat<S> softmax(const Mat<S>& logits) {
  Mat<S> out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const S mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename S>
Mat<S> log_softmax(const Mat<S>& logits) {
  Mat<S> out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const S mx = logits.row(r).maxCoeff();
    const S lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

template <typename S>
double framewise_cross_entropy(const Mat<S>& probs, std::span<const int> labels) {
  check_labels<S>(probs.rows(), probs.cols(), labels);
  double sum = 0.0;
  for (Index t = 0; t < probs.rows(); ++t) sum -= safe_log(static_cast<double>(probs(t, labels[static_cast<std::size_t>(t)])));
  return sum / static_cast<double>(probs.rows());
}

template <typename S>
double multi_stage_cross_entropy(std::span<const Mat<S>> stage_probs, std::span<const int> labels) {
  if (stage_probs.empty()) throw EmptyInput("multi-stage loss over zero stages");
  double sum = 0.0;
  for (const auto& p : stage_probs) sum += framewise_cross_entropy(p, labels);
  return sum;
}

template <typename S>
double mse_probability_loss(const Mat<S>& probs, std::span<const int> labels, const LossConfig& cfg) {
  check_labels<S>(probs.rows(), probs.cols(), labels);
  if (cfg.smoothing_mode == SmoothingMode::plain_mse) {
    double sum = 0.0;
    for (Index t = 0; t < probs.rows(); ++t)
      for (Index k = 0; k < probs.cols(); ++k) {
        const double y = labels[static_cast<std::size_t>(t)] == k ? 1.0 : 0.0;
        const double d = y - static_cast<double>(probs(t, k));
        sum += d * d;
      }
    return sum / static_cast<double>(probs.rows() * probs.cols());
  }
  Mat<S> logp(probs.rows(), probs.cols());
  for (Index i = 0; i < probs.size(); ++i)
    logp.data()[i] = static_cast<S>(std::log(std::max(static_cast<double>(probs.data()[i]), 1e-300)));
  return truncated_adjacent_term<S>(logp, logp, cfg.truncation, nullptr);
}

template <typename S>
LossBreakdown combined_loss(std::span<const Mat<S>> stage_logits, std::span<const int> labels,
                            const LossConfig& cfg, std::vector<Mat<S>>* grad_logits,
                            std::span<const Mat<S>> detached_reference) {
  cfg.validate();
  if (stage_logits.empty()) throw EmptyInput("combined loss over zero stages");
  if (!detached_reference.empty() && detached_reference.size() != stage_logits.size())
    throw ShapeError("detached reference stage count mismatch");
  const std::size_t num_stages = stage_logits.size();
  LossBreakdown out;
  if (grad_logits) grad_logits->assign(num_stages, Mat<S>());
  for (std::size_t s = 0; s < num_stages; ++s) {
    const Mat<S>& z = stage_logits[s];
    check_labels<S>(z.rows(), z.cols(), labels);
    if (s > 0 && (z.rows() != stage_logits[0].rows() || z.cols() != stage_logits[0].cols()))
      throw ShapeError("stage logits differ in shape");
    const Mat<S> p = softmax(z);
    const double inv_t = 1.0 / static_cast<double>(z.rows());
    out.ce_sum += framewise_cross_entropy(p, labels);

    Mat<S> g;
    if (grad_logits) {
      // d CE / dz = (p - onehot) / T, zero where the log was clamped.
      g = p * static_cast<S>(inv_t);
      for (Index t = 0; t < z.rows(); ++t) {
        const int y = labels[static_cast<std::size_t>(t)];
        if (static_cast<double>(p(t, y)) >= kProbabilityFloor) {
          g(t, y) -= static_cast<S>(inv_t);
        } else {
          g.row(t).setZero();
        }
      }
    }

    const bool with_mse = !cfg.mse_final_stage_only || s + 1 == num_stages;
    if (with_mse) {
      if (cfg.smoothing_mode == SmoothingMode::plain_mse) {
        out.mse_sum += mse_probability_loss(p, labels, cfg);
        if (grad_logits && cfg.lambda != 0.0) {
          // dp = 2 (p - y) / (T K); softmax backward dz = p * (dp - <dp, p>).
          const double scale = 2.0 / static_cast<double>(z.rows() * z.cols());
          Mat<S> dp = p;
          for (Index t = 0; t < z.rows(); ++t) dp(t, labels[static_cast<std::size_t>(t)]) -= S(1);
          dp *= static_cast<S>(scale * cfg.lambda);
          for (Index t = 0; t < z.rows(); ++t) {
            const S inner = dp.row(t).dot(p.row(t));
            g.row(t).array() += p.row(t).array() * (dp.row(t).array() - inner);
          }
        }
      } else {
        const Mat<S> logp = log_softmax(z);
        const Mat<S> ref = detached_reference.empty() ? logp : log_softmax(detached_reference[s]);
        Mat<S> d_logp;
        out.mse_sum += truncated_adjacent_term<S>(logp, ref, cfg.truncation, grad_logits ? &d_logp : nullptr);
        if (grad_logits && cfg.lambda != 0.0) {
          d_logp *= static_cast<S>(cfg.lambda);
          // log-softmax backward: dz = dlogp - p * sum(dlogp).
          for (Index t = 0; t < z.rows(); ++t) g.row(t) += d_logp.row(t) - p.row(t) * d_logp.row(t).sum();
        }
      }
    }
    if (grad_logits) (*grad_logits)[s] = std::move(g);
  }
  out.total = out.ce_sum + cfg.lambda * out.mse_sum;
  return out;
}

template <typename S>
std::vector<int> argmax_rows(const Mat<S>& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index r = 0; r < m.rows(); ++r) {
    Index best = 0;
    m.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

#define ACTSEG_INSTANTIATE(S)                                                                          \
  template Mat<S> softmax<S>(const Mat<S>&);                                                           \
  template Mat<S> log_softmax<S>(const Mat<S>&);                                                       \
  template double framewise_cross_entropy<S>(const Mat<S>&, std::span<const int>);                     \
  template double multi_stage_cross_entropy<S>(std::span<const Mat<S>>, std::span<const int>);         \
  template double mse_probability_loss<S>(const Mat<S>&, std::span<const int>, const LossConfig&);     \
  template LossBreakdown combined_loss<S>(std::span<const Mat<S>>, std::span<const int>,               \
                                          const LossConfig&, std::vector<Mat<S>>*, std::span<const Mat<S>>); \
  template std::vector<int> argmax_rows<S>(const Mat<S>&);

ACTSEG_INSTANTIATE(float)
ACTSEG_INSTANTIATE(double)
#undef ACTSEG_INSTANTIATE

}  // namespace actseg
