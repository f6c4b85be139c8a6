#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "actseg/data.hpp"
#include "actseg/model.hpp"
#include "actseg/trainer.hpp"

namespace actseg {

/// Input preprocessing a model was trained with. Stored in checkpoints so
/// feature extraction feeds each model what it saw during training.
struct InputView {
  int decimation = 1;
  std::vector<int> zero_channels;

  SequenceSample apply(const SequenceSample& sample) const;
  friend bool operator==(const InputView&, const InputView&) = default;
};

nlohmann::json to_json(const InputView& v);
InputView input_view_from_json(const nlohmann::json& j);

/// Per-frame horizontal concatenation [a | b]. Throws ShapeError when the
/// frame counts differ.
MatD concat_features(const MatD& a, const MatD& b);

struct FusedSample {
  std::string sample_id;
  MatD features;
  std::vector<int> labels;
};

struct FusedFeatureSet {
  std::vector<FusedSample> samples;
  int num_classes = 0;
  nlohmann::json provenance = nlohmann::json::object();

  Index width() const { return samples.empty() ? 0 : samples.front().features.cols(); }
};

struct FusionSource {
  const AnyModel* model = nullptr;
  InputView view;
  std::string name;  // recorded in provenance
};

/// Runs both models in inference mode and concatenates their frame
/// features, first source's columns first.
FusedFeatureSet extract_fused_features(const FusionSource& first, const FusionSource& second,
                                       std::span<const SequenceSample> samples);

/// Same, loading both models (and their input views) from checkpoints.
FusedFeatureSet extract_fused_dataset(const std::filesystem::path& first_checkpoint,
                                      const std::filesystem::path& second_checkpoint,
                                      std::span<const SequenceSample> samples);

/// One directory per sample holding fused_features.csv and labels.csv, plus
/// provenance.json at the top.
void write_fused_dataset(const std::filesystem::path& dir, const FusedFeatureSet& set);
FusedFeatureSet read_fused_dataset(const std::filesystem::path& dir);

struct FusionClassifierConfig {
  Index input_width = 0;
  int hidden_width = 64;
  int num_classes = 0;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  void validate() const;
};

nlohmann::json to_json(const FusionClassifierConfig& cfg);
FusionClassifierConfig fusion_config_from_json(const nlohmann::json& j);

/// Batch norm -> dense + ReLU -> flatten (per-frame no-op) -> dense logits.
/// Running statistics live in the parameter set as non-trainable arrays.
class FusionClassifier {
 public:
  FusionClassifier(const FusionClassifierConfig& cfg, std::uint64_t seed);

  const FusionClassifierConfig& config() const { return cfg_; }
  ParameterSet<double>& parameters() { return params_; }
  const ParameterSet<double>& parameters() const { return params_; }

  /// Inference mode: normalizes with the running statistics.
  MatD forward(const MatD& fused) const;
  std::vector<int> predict(const MatD& fused) const;

  /// Training-mode pass over a batch of stacked frames. Per-frame CE terms
  /// are weighted by `frame_weights`; gradients are added into `grads` and
  /// the running statistics are updated. Returns the weighted loss.
  double train_step(const MatD& batch, std::span<const int> labels, std::span<const double> frame_weights,
                    ParameterSet<double>& grads, Index* correct = nullptr);

 private:
  FusionClassifierConfig cfg_;
  ParameterSet<double> params_;
  std::size_t gain_, bias_, mean_, var_, hidden_w_, hidden_b_, out_w_, out_b_;
};

/// Adam + framewise CE. A batch stacks batch_size whole sequences; each
/// sequence's mean CE counts equally. Throws InsufficientData when empty.
TrainHistory train_fusion(FusionClassifier& clf, const FusedFeatureSet& train, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

void save_fusion_checkpoint(const std::filesystem::path& dir, const FusionClassifier& clf, std::uint64_t seed,
                            int epoch, nlohmann::json extra = nlohmann::json::object());
FusionClassifier load_fusion_checkpoint(const std::filesystem::path& dir);

}  // namespace actseg
