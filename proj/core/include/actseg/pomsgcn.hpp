#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "actseg/graph.hpp"
#include "actseg/model.hpp"

namespace actseg {

struct PomsgcnConfig {
  int num_stages = 4;
  int stage1_layers = 10;
  int refinement_layers = 10;
  int feature_width = 64;
  int kernel_size = 3;
  std::vector<int> dilations;  // empty: 2^layer
  double dropout_rate = 0.0;
  int num_classes = 0;
  int input_channels = 0;
  bool graph_refinement = false;
  AdjacencyStrategy adjacency = AdjacencyStrategy::uniform;

  void validate() const;
  int dilation(int layer) const { return dilations.empty() ? (1 << layer) : dilations.at(static_cast<std::size_t>(layer)); }
};

nlohmann::json to_json(const PomsgcnConfig& cfg);
PomsgcnConfig pomsgcn_config_from_json(const nlohmann::json& j);

/// Weights of one spatial-temporal graph block, for standalone use.
template <typename S>
struct StgcnBlockParams {
  std::vector<Mat<S>> spatial_weights;  // one Cin x Cout per adjacency partition
  Mat<S> spatial_bias;                  // 1 x Cout
  Mat<S> temporal_weight;               // (kernel * Cout) x Cout
  Mat<S> temporal_bias;                 // 1 x Cout
  std::optional<Mat<S>> residual_weight;  // Cin x Cout, required when Cin != Cout
  std::optional<Mat<S>> residual_bias;
  int kernel = 3;
  int dilation = 1;
};

/// ReLU(temporal(sum_p A_p X[t] W_p + b) + residual(X)) on a (T*V) x Cin input.
template <typename S>
Mat<S> stgcn_block_forward(const StgcnBlockParams<S>& block, const Mat<S>& x, const NormalizedAdjacency& adj);

/// Mean over joints: (T*V) x F -> T x F.
template <typename S>
Mat<S> joint_pool(const Mat<S>& x, Index num_joints);

/// Multi-stage spatial-temporal graph network. Stage 1 runs graph blocks,
/// pools joints and classifies each frame; stages 2..S refine the previous
/// stage's softmax with residual dilated temporal convolutions (or, with
/// graph_refinement, with graph blocks over [probabilities, stage-1 joint
/// features]).
template <typename S>
class PomsgcnModel final : public SegmentationModel<S> {
 public:
  PomsgcnModel(const PomsgcnConfig& cfg, const SkeletonGraph& graph, std::uint64_t seed);

  std::string kind() const override { return "pomsgcn"; }
  int num_classes() const override { return cfg_.num_classes; }
  Index input_width() const override { return static_cast<Index>(graph_.num_joints()) * cfg_.input_channels; }
  Index feature_width() const override { return cfg_.feature_width; }
  int num_stages() const override { return cfg_.num_stages; }

  ParameterSet<S>& parameters() override { return params_; }
  const ParameterSet<S>& parameters() const override { return params_; }

  StageOutputs<S> forward(const Mat<S>& features) const override;
  GradientStep accumulate_gradients(const Mat<S>& features, std::span<const int> labels, const LossConfig& loss,
                                    S weight, ParameterSet<S>& grads, std::mt19937_64* dropout_rng,
                                    std::span<const Mat<S>> detached_reference = {}) const override;
  nlohmann::json config_json() const override;

  const PomsgcnConfig& config() const { return cfg_; }
  const SkeletonGraph& graph() const { return graph_; }
  const NormalizedAdjacency& adjacency() const { return adj_; }

  /// Block `layer` of stage 1 as standalone parameters.
  StgcnBlockParams<S> stage1_block(int layer) const;

  struct Block {
    std::vector<std::size_t> spatial_w;
    std::size_t spatial_b = 0;
    std::size_t temporal_w = 0;
    std::size_t temporal_b = 0;
    std::optional<std::size_t> residual_w;
    std::optional<std::size_t> residual_b;
    int dilation = 1;
  };
  struct RefineLayer {
    std::size_t dilated_w = 0, dilated_b = 0, pointwise_w = 0, pointwise_b = 0;
    int dilation = 1;
  };
  struct Stage {
    std::vector<Block> blocks;         // stage 1, or refinement in graph mode
    std::size_t input_w = 0, input_b = 0;  // temporal refinement only
    std::vector<RefineLayer> layers;   // temporal refinement only
    std::size_t classifier_w = 0, classifier_b = 0;
  };
  struct Cache;

 private:
  StageOutputs<S> run(const Mat<S>& features, Cache* cache, std::mt19937_64* rng) const;
  Block add_block(const std::string& prefix, Index cin, Index cout, int dilation);

  PomsgcnConfig cfg_;
  SkeletonGraph graph_;
  NormalizedAdjacency adj_;
  ParameterSet<S> params_;
  std::vector<Stage> stages_;
};

template <typename S>
std::unique_ptr<PomsgcnModel<S>> init_pomsgcn(const PomsgcnConfig& cfg, const SkeletonGraph& graph,
                                              std::uint64_t seed) {
  return std::make_unique<PomsgcnModel<S>>(cfg, graph, seed);
}

/// Initializes every ".weight" array from U(+-sqrt(1/rows)) in insertion
/// order, ".gain" arrays to one and everything else to zero.
template <typename S>
void initialize_parameters(ParameterSet<S>& params, std::uint64_t seed);

}  // namespace actseg
