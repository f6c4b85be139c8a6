#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "actseg/losses.hpp"
#include "actseg/tensor.hpp"

namespace actseg {

template <typename S>
struct StageOutputs {
  std::vector<Mat<S>> stage_logits;  // S stages, each T x K
  Mat<S> frame_features;             // T x F, input of the final classifier

  const Mat<S>& final_logits() const { return stage_logits.back(); }
};

struct GradientStep {
  LossBreakdown loss;
  Index correct_frames = 0;
  Index frames = 0;
};

/// Per-frame segmentation model trained through the combined multi-stage
/// loss. Inputs are T x D feature matrices (D = V*C for skeleton data).
template <typename S>
class SegmentationModel {
 public:
  virtual ~SegmentationModel() = default;

  virtual std::string kind() const = 0;
  virtual int num_classes() const = 0;
  virtual Index input_width() const = 0;
  virtual Index feature_width() const = 0;
  virtual int num_stages() const = 0;

  virtual ParameterSet<S>& parameters() = 0;
  virtual const ParameterSet<S>& parameters() const = 0;

  /// Inference pass (dropout off). Pure given the parameters.
  virtual StageOutputs<S> forward(const Mat<S>& features) const = 0;

  /// Forward + backward of combined_loss on one sequence; adds
  /// weight * dL/dtheta into `grads`. Dropout is active iff `dropout_rng`
  /// is non-null. `detached_reference` is forwarded to combined_loss.
  virtual GradientStep accumulate_gradients(const Mat<S>& features, std::span<const int> labels,
                                            const LossConfig& loss, S weight, ParameterSet<S>& grads,
                                            std::mt19937_64* dropout_rng,
                                            std::span<const Mat<S>> detached_reference = {}) const = 0;

  /// Architecture echo; enough to rebuild an identically shaped model.
  virtual nlohmann::json config_json() const = 0;

 protected:
  void check_input(const Mat<S>& features) const {
    if (features.cols() != input_width())
      throw ShapeError(kind() + ": input width " + std::to_string(features.cols()) + " != expected " +
                       std::to_string(input_width()));
    if (features.rows() == 0) throw EmptyInput(kind() + ": empty sequence");
  }
};

/// Precision-erased handle used by the CLI and the fusion pipeline.
class AnyModel {
 public:
  AnyModel() = default;
  explicit AnyModel(std::unique_ptr<SegmentationModel<float>> m) : model_(std::move(m)) {}
  explicit AnyModel(std::unique_ptr<SegmentationModel<double>> m) : model_(std::move(m)) {}

  bool is_double() const { return std::holds_alternative<std::unique_ptr<SegmentationModel<double>>>(model_); }
  std::string kind() const;
  int num_classes() const;
  Index input_width() const;
  Index feature_width() const;

  /// Final-stage logits and frame features, computed in the model's own
  /// precision and widened to double.
  StageOutputs<double> forward(const MatD& features) const;
  std::vector<int> predict(const MatD& features) const;

  template <typename S>
  SegmentationModel<S>* get() {
    auto* p = std::get_if<std::unique_ptr<SegmentationModel<S>>>(&model_);
    return p ? p->get() : nullptr;
  }
  template <typename S>
  const SegmentationModel<S>* get() const {
    auto* p = std::get_if<std::unique_ptr<SegmentationModel<S>>>(&model_);
    return p ? p->get() : nullptr;
  }

 private:
  std::variant<std::monostate, std::unique_ptr<SegmentationModel<float>>, std::unique_ptr<SegmentationModel<double>>>
      model_;
};

}  // namespace actseg
