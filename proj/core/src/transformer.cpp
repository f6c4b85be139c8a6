#include "actseg/transformer.hpp"

#include <cmath>

#include "actseg/nn.hpp"
#include "actseg/pomsgcn.hpp"

namespace actseg {

void TransformerConfig::validate() const {
  if (model_dim < 1 || num_heads < 1) throw ConfigError("transformer model_dim and num_heads must be >= 1");
  if (model_dim % num_heads != 0)
    throw ConfigError("transformer model_dim " + std::to_string(model_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  if (num_layers < 1) throw ConfigError("transformer num_layers must be >= 1");
  if (feedforward_dim < 1) throw ConfigError("transformer feedforward_dim must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("transformer dropout_rate must lie in [0,1)");
  if (num_classes < 1) throw ConfigError("transformer num_classes must be >= 1");
  if (input_size < 1) throw ConfigError("transformer input_size must be >= 1");
  if (!(layer_norm_epsilon > 0.0)) throw ConfigError("transformer layer_norm_epsilon must be > 0");
}

nlohmann::json to_json(const TransformerConfig& cfg) {
  return {{"model_dim", cfg.model_dim},
          {"num_heads", cfg.num_heads},
          {"num_layers", cfg.num_layers},
          {"feedforward_dim", cfg.feedforward_dim},
          {"dropout_rate", cfg.dropout_rate},
          {"num_classes", cfg.num_classes},
          {"input_size", cfg.input_size},
          {"layer_norm_epsilon", cfg.layer_norm_epsilon}};
}

TransformerConfig transformer_config_from_json(const nlohmann::json& j) {
  TransformerConfig cfg;
  try {
    cfg.model_dim = j.value("model_dim", cfg.model_dim);
    cfg.num_heads = j.value("num_heads", cfg.num_heads);
    cfg.num_layers = j.value("num_layers", cfg.num_layers);
    cfg.feedforward_dim = j.value("feedforward_dim", cfg.feedforward_dim);
    cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.input_size = j.value("input_size", cfg.input_size);
    cfg.layer_norm_epsilon = j.value("layer_norm_epsilon", cfg.layer_norm_epsilon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("transformer config: ") + e.what());
  }
  return cfg;
}

template <typename S>
AttentionResult<S> scaled_dot_attention(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v) {
  if (q.cols() == 0) throw ShapeError("attention with zero key dimension");
  if (q.cols() != k.cols() || q.rows() != k.rows() || v.rows() != k.rows())
    throw ShapeError("attention: Q, K, V shapes disagree");
  AttentionResult<S> r;
  Mat<S> scores = q * k.transpose();
  scores *= static_cast<S>(1.0 / std::sqrt(static_cast<double>(q.cols())));
  r.weights = softmax(scores);
  r.output = r.weights * v;
  return r;
}

template <typename S>
struct TransformerModel<S>::Cache {
  struct LayerCache {
    nn::NormCache<S> ln1, ln2;
    Mat<S> norm1, q, k, v, concat, attn_mask, norm2, hidden, ffn_mask;
    std::vector<Mat<S>> weights;
  };
  Mat<S> input;
  std::vector<LayerCache> layers;
  Mat<S> features;
};

template <typename S>
TransformerModel<S>::TransformerModel(const TransformerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const Index d = cfg_.input_size, m = cfg_.model_dim, ff = cfg_.feedforward_dim, k = cfg_.num_classes;
  input_w_ = params_.add("input.weight", {d, m}, d, m);
  input_b_ = params_.add("input.bias", {m}, 1, m);
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "l" + std::to_string(l);
    Layer L;
    L.ln1_gain = params_.add(p + ".ln1.gain", {m}, 1, m);
    L.ln1_bias = params_.add(p + ".ln1.bias", {m}, 1, m);
    L.q_w = params_.add(p + ".attn.q.weight", {m, m}, m, m);
    L.q_b = params_.add(p + ".attn.q.bias", {m}, 1, m);
    L.k_w = params_.add(p + ".attn.k.weight", {m, m}, m, m);
    L.k_b = params_.add(p + ".attn.k.bias", {m}, 1, m);
    L.v_w = params_.add(p + ".attn.v.weight", {m, m}, m, m);
    L.v_b = params_.add(p + ".attn.v.bias", {m}, 1, m);
    L.o_w = params_.add(p + ".attn.out.weight", {m, m}, m, m);
    L.o_b = params_.add(p + ".attn.out.bias", {m}, 1, m);
    L.ln2_gain = params_.add(p + ".ln2.gain", {m}, 1, m);
    L.ln2_bias = params_.add(p + ".ln2.bias", {m}, 1, m);
    L.ff_in_w = params_.add(p + ".ffn.in.weight", {m, ff}, m, ff);
    L.ff_in_b = params_.add(p + ".ffn.in.bias", {ff}, 1, ff);
    L.ff_out_w = params_.add(p + ".ffn.out.weight", {ff, m}, ff, m);
    L.ff_out_b = params_.add(p + ".ffn.out.bias", {m}, 1, m);
    layers_.push_back(L);
  }
  head_w_ = params_.add("head.weight", {m, k}, m, k);
  head_b_ = params_.add("head.bias", {k}, 1, k);
  initialize_parameters(params_, seed);
}

template <typename S>
StageOutputs<S> TransformerModel<S>::run(const Mat<S>& features, Cache* cache, std::mt19937_64* rng,
                                         AttentionWeights<S>* attn) const {
  this->check_input(features);
  const double drop = rng ? cfg_.dropout_rate : 0.0;
  const Index heads = cfg_.num_heads;
  const Index dh = cfg_.model_dim / heads;
  const double eps = cfg_.layer_norm_epsilon;
  if (cache) cache->input = features;

  Mat<S> x = nn::dense(features, params_[input_w_], params_[input_b_]);
  for (const auto& L : layers_) {
    typename Cache::LayerCache* lc = cache ? &cache->layers.emplace_back() : nullptr;
    Mat<S> n1 = nn::layer_norm(x, params_[L.ln1_gain], params_[L.ln1_bias], eps, lc ? &lc->ln1 : nullptr);
    Mat<S> q = nn::dense(n1, params_[L.q_w], params_[L.q_b]);
    Mat<S> k = nn::dense(n1, params_[L.k_w], params_[L.k_b]);
    Mat<S> v = nn::dense(n1, params_[L.v_w], params_[L.v_b]);
    Mat<S> concat(x.rows(), cfg_.model_dim);
    std::vector<Mat<S>> weights;
    for (Index h = 0; h < heads; ++h) {
      auto r = scaled_dot_attention<S>(q.middleCols(h * dh, dh), k.middleCols(h * dh, dh), v.middleCols(h * dh, dh));
      concat.middleCols(h * dh, dh) = r.output;
      weights.push_back(std::move(r.weights));
    }
    Mat<S> a = nn::dense(concat, params_[L.o_w], params_[L.o_b]);
    Mat<S> attn_mask = nn::dropout_inplace(a, drop, rng);
    x += a;
    Mat<S> n2 = nn::layer_norm(x, params_[L.ln2_gain], params_[L.ln2_bias], eps, lc ? &lc->ln2 : nullptr);
    Mat<S> hidden = nn::dense(n2, params_[L.ff_in_w], params_[L.ff_in_b]);
    nn::relu_inplace(hidden);
    Mat<S> f = nn::dense(hidden, params_[L.ff_out_w], params_[L.ff_out_b]);
    Mat<S> ffn_mask = nn::dropout_inplace(f, drop, rng);
    x += f;
    if (attn) attn->push_back(weights);
    if (lc) {
      lc->norm1 = std::move(n1);
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->concat = std::move(concat);
      lc->weights = std::move(weights);
      lc->attn_mask = std::move(attn_mask);
      lc->norm2 = std::move(n2);
      lc->hidden = std::move(hidden);
      lc->ffn_mask = std::move(ffn_mask);
    }
  }
  StageOutputs<S> out;
  out.stage_logits.push_back(nn::dense(x, params_[head_w_], params_[head_b_]));
  out.frame_features = std::move(x);
  if (cache) cache->features = out.frame_features;
  return out;
}

template <typename S>
StageOutputs<S> TransformerModel<S>::forward(const Mat<S>& features) const {
  return run(features, nullptr, nullptr, nullptr);
}

template <typename S>
std::pair<StageOutputs<S>, AttentionWeights<S>> TransformerModel<S>::forward_with_attention(
    const Mat<S>& features) const {
  AttentionWeights<S> w;
  auto out = run(features, nullptr, nullptr, &w);
  return {std::move(out), std::move(w)};
}

template <typename S>
GradientStep TransformerModel<S>::accumulate_gradients(const Mat<S>& features, std::span<const int> labels,
                                                       const LossConfig& loss, S weight, ParameterSet<S>& grads,
                                                       std::mt19937_64* dropout_rng,
                                                       std::span<const Mat<S>> detached_reference) const {
  Cache cache;
  StageOutputs<S> out = run(features, &cache, dropout_rng, nullptr);
  std::vector<Mat<S>> dlogits;
  GradientStep step;
  step.loss = combined_loss<S>(out.stage_logits, labels, loss, &dlogits, detached_reference);
  dlogits[0] *= weight;
  const auto pred = argmax_rows(out.final_logits());
  for (std::size_t i = 0; i < pred.size(); ++i) step.correct_frames += pred[i] == labels[i];
  step.frames = static_cast<Index>(pred.size());

  const Index t = features.rows();
  const Index m = cfg_.model_dim;
  const Index heads = cfg_.num_heads;
  const Index dh = m / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<S> dx = Mat<S>::Zero(t, m);
  nn::dense_backward(cache.features, params_[head_w_], dlogits[0], &dx, grads[head_w_], grads[head_b_]);

  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& L = layers_[li];
    const auto& lc = cache.layers[li];
    // Feed-forward branch.
    Mat<S> df = dx;
    if (lc.ffn_mask.size() > 0) df.array() *= lc.ffn_mask.array();
    Mat<S> dhidden = Mat<S>::Zero(t, cfg_.feedforward_dim);
    nn::dense_backward(lc.hidden, params_[L.ff_out_w], df, &dhidden, grads[L.ff_out_w], grads[L.ff_out_b]);
    nn::relu_backward_inplace(dhidden, lc.hidden);
    Mat<S> dn2 = Mat<S>::Zero(t, m);
    nn::dense_backward(lc.norm2, params_[L.ff_in_w], dhidden, &dn2, grads[L.ff_in_w], grads[L.ff_in_b]);
    nn::layer_norm_backward(lc.ln2, params_[L.ln2_gain], dn2, dx, grads[L.ln2_gain], grads[L.ln2_bias]);

    // Attention branch.
    Mat<S> da = dx;
    if (lc.attn_mask.size() > 0) da.array() *= lc.attn_mask.array();
    Mat<S> dconcat = Mat<S>::Zero(t, m);
    nn::dense_backward(lc.concat, params_[L.o_w], da, &dconcat, grads[L.o_w], grads[L.o_b]);
    Mat<S> dq(t, m), dk(t, m), dv(t, m);
    for (Index h = 0; h < heads; ++h) {
      const Mat<S>& w = lc.weights[static_cast<std::size_t>(h)];
      const auto dout = dconcat.middleCols(h * dh, dh);
      Mat<S> dw = dout * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = w.transpose() * dout;
      Mat<S> dscores = nn::softmax_backward(w, dw) * scale;
      dq.middleCols(h * dh, dh).noalias() = dscores * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * lc.q.middleCols(h * dh, dh);
    }
    Mat<S> dn1 = Mat<S>::Zero(t, m);
    nn::dense_backward(lc.norm1, params_[L.q_w], dq, &dn1, grads[L.q_w], grads[L.q_b]);
    nn::dense_backward(lc.norm1, params_[L.k_w], dk, &dn1, grads[L.k_w], grads[L.k_b]);
    nn::dense_backward(lc.norm1, params_[L.v_w], dv, &dn1, grads[L.v_w], grads[L.v_b]);
    nn::layer_norm_backward(lc.ln1, params_[L.ln1_gain], dn1, dx, grads[L.ln1_gain], grads[L.ln1_bias]);
  }
  nn::dense_backward<S>(cache.input, params_[input_w_], dx, nullptr, grads[input_w_], grads[input_b_]);
  return step;
}

template <typename S>
nlohmann::json TransformerModel<S>::config_json() const {
  return {{"transformer", to_json(cfg_)}};
}

template class TransformerModel<float>;
template class TransformerModel<double>;
template AttentionResult<float> scaled_dot_attention<float>(const Mat<float>&, const Mat<float>&, const Mat<float>&);
template AttentionResult<double> scaled_dot_attention<double>(const Mat<double>&, const Mat<double>&,
                                                              const Mat<double>&);

}  // namespace actseg
