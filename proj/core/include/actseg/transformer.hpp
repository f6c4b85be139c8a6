#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "actseg/model.hpp"

namespace actseg {

struct TransformerConfig {
  int model_dim = 64;
  int num_heads = 4;
  int num_layers = 2;
  int feedforward_dim = 128;
  double dropout_rate = 0.0;
  int num_classes = 0;
  int input_size = 0;
  double layer_norm_epsilon = 1e-5;

  void validate() const;
};

nlohmann::json to_json(const TransformerConfig& cfg);
TransformerConfig transformer_config_from_json(const nlohmann::json& j);

template <typename S>
struct AttentionResult {
  Mat<S> output;   // T x d
  Mat<S> weights;  // T x T, row-stochastic
};

/// softmax(Q K^T / sqrt(d)) V.
template <typename S>
AttentionResult<S> scaled_dot_attention(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v);

/// weights[layer][head] is the T x T attention matrix of that head.
template <typename S>
using AttentionWeights = std::vector<std::vector<Mat<S>>>;

/// Encoder-only per-frame classifier: input projection, pre-norm
/// self-attention/feed-forward blocks and a per-frame head. There is no
/// positional encoding, so the network is equivariant to frame
/// permutations.
template <typename S>
class TransformerModel final : public SegmentationModel<S> {
 public:
  TransformerModel(const TransformerConfig& cfg, std::uint64_t seed);

  std::string kind() const override { return "transformer"; }
  int num_classes() const override { return cfg_.num_classes; }
  Index input_width() const override { return cfg_.input_size; }
  Index feature_width() const override { return cfg_.model_dim; }
  int num_stages() const override { return 1; }

  ParameterSet<S>& parameters() override { return params_; }
  const ParameterSet<S>& parameters() const override { return params_; }

  StageOutputs<S> forward(const Mat<S>& features) const override;
  std::pair<StageOutputs<S>, AttentionWeights<S>> forward_with_attention(const Mat<S>& features) const;

  GradientStep accumulate_gradients(const Mat<S>& features, std::span<const int> labels, const LossConfig& loss,
                                    S weight, ParameterSet<S>& grads, std::mt19937_64* dropout_rng,
                                    std::span<const Mat<S>> detached_reference = {}) const override;
  nlohmann::json config_json() const override;

  const TransformerConfig& config() const { return cfg_; }

  struct Layer {
    std::size_t ln1_gain, ln1_bias;
    std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    std::size_t ln2_gain, ln2_bias;
    std::size_t ff_in_w, ff_in_b, ff_out_w, ff_out_b;
  };
  struct Cache;

 private:
  StageOutputs<S> run(const Mat<S>& features, Cache* cache, std::mt19937_64* rng, AttentionWeights<S>* attn) const;

  TransformerConfig cfg_;
  ParameterSet<S> params_;
  std::size_t input_w_ = 0, input_b_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<Layer> layers_;
};

template <typename S>
std::unique_ptr<TransformerModel<S>> init_transformer(const TransformerConfig& cfg, std::uint64_t seed) {
  return std::make_unique<TransformerModel<S>>(cfg, seed);
}

}  // namespace actseg
