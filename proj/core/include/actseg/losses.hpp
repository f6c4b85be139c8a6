#pragma once

#include <span>
#include <string>
#include <vector>

#include "actseg/tensor.hpp"

namespace actseg {

enum class SmoothingMode { plain_mse, truncated_adjacent };

std::string to_string(SmoothingMode m);
SmoothingMode parse_smoothing_mode(const std::string& s);

struct LossConfig {
  double lambda = 0.15;
  SmoothingMode smoothing_mode = SmoothingMode::plain_mse;
  double truncation = 4.0;  // only used by truncated_adjacent
  bool mse_final_stage_only = false;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double ce_sum = 0.0;
  double mse_sum = 0.0;
};

/// Probabilities below this floor are clamped before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

template <typename S>
Mat<S> softmax(const Mat<S>& logits);

template <typename S>
Mat<S> log_softmax(const Mat<S>& logits);

/// -(1/T) sum_t log(max(p[t, y_t], 1e-12)). Throws EmptyInput for T = 0.
template <typename S>
double framewise_cross_entropy(const Mat<S>& probs, std::span<const int> labels);

/// Unweighted sum of per-stage cross-entropies.
template <typename S>
double multi_stage_cross_entropy(std::span<const Mat<S>> stage_probs, std::span<const int> labels);

/// plain_mse: mean over frames and classes of (onehot - p)^2.
/// truncated_adjacent: mean over t >= 1 and k of min(|log p[t,k] - log p[t-1,k]|, tau)^2;
/// a single frame gives 0.
template <typename S>
double mse_probability_loss(const Mat<S>& probs, std::span<const int> labels, const LossConfig& cfg);

/// Sum over stages of CE + lambda * MSE on softmaxed logits, returned as
/// ce_sum + lambda * mse_sum.
///
/// When `grad_logits` is non-null it receives dL/dlogits per stage. In
/// truncated_adjacent mode the previous-frame log-probabilities are held
/// constant; if `detached_reference` is non-empty those constants are taken
/// from it instead of from `stage_logits`, which lets finite differences
/// reproduce the held-constant gradient.
template <typename S>
LossBreakdown combined_loss(std::span<const Mat<S>> stage_logits, std::span<const int> labels,
                            const LossConfig& cfg, std::vector<Mat<S>>* grad_logits = nullptr,
                            std::span<const Mat<S>> detached_reference = {});

template <typename S>
std::vector<int> argmax_rows(const Mat<S>& m);

}  // namespace actseg
