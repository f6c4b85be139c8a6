#include "actseg/pomsgcn.hpp"

#include "actseg/nn.hpp"

namespace actseg {

void PomsgcnConfig::validate() const {
  if (num_stages < 2) throw ConfigError("pomsgcn num_stages must be >= 2 (one extraction + refinement)");
  if (stage1_layers < 1 || refinement_layers < 1) throw ConfigError("pomsgcn layer counts must be >= 1");
  if (feature_width < 1) throw ConfigError("pomsgcn feature_width must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("pomsgcn kernel_size must be odd and >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("pomsgcn dropout_rate must lie in [0,1)");
  if (num_classes < 1) throw ConfigError("pomsgcn num_classes must be >= 1");
  if (input_channels < 1) throw ConfigError("pomsgcn input_channels must be >= 1");
  if (!dilations.empty()) {
    if (static_cast<int>(dilations.size()) < std::max(stage1_layers, refinement_layers))
      throw ConfigError("pomsgcn dilation schedule shorter than the layer count");
    for (int d : dilations)
      if (d < 1) throw ConfigError("pomsgcn dilations must be >= 1");
  }
}

nlohmann::json to_json(const PomsgcnConfig& cfg) {
  return {{"num_stages", cfg.num_stages},
          {"stage1_layers", cfg.stage1_layers},
          {"refinement_layers", cfg.refinement_layers},
          {"feature_width", cfg.feature_width},
          {"kernel_size", cfg.kernel_size},
          {"dilations", cfg.dilations},
          {"dropout_rate", cfg.dropout_rate},
          {"num_classes", cfg.num_classes},
          {"input_channels", cfg.input_channels},
          {"graph_refinement", cfg.graph_refinement},
          {"adjacency", to_string(cfg.adjacency)}};
}

PomsgcnConfig pomsgcn_config_from_json(const nlohmann::json& j) {
  PomsgcnConfig cfg;
  try {
    cfg.num_stages = j.value("num_stages", cfg.num_stages);
    cfg.stage1_layers = j.value("stage1_layers", cfg.stage1_layers);
    cfg.refinement_layers = j.value("refinement_layers", cfg.refinement_layers);
    cfg.feature_width = j.value("feature_width", cfg.feature_width);
    cfg.kernel_size = j.value("kernel_size", cfg.kernel_size);
    cfg.dilations = j.value("dilations", cfg.dilations);
    cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.input_channels = j.value("input_channels", cfg.input_channels);
    cfg.graph_refinement = j.value("graph_refinement", cfg.graph_refinement);
    cfg.adjacency = parse_adjacency_strategy(j.value("adjacency", std::string("uniform")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pomsgcn config: ") + e.what());
  }
  return cfg;
}

template <typename S>
void initialize_parameters(ParameterSet<S>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : params) {
    const std::string& n = p.name;
    auto ends_with = [&](std::string_view suffix) {
      return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".weight")) {
      init_uniform(p.value, p.value.rows(), rng);
    } else if (ends_with(".gain")) {
      p.value.setOnes();
    } else {
      p.value.setZero();
    }
  }
}

namespace {

template <typename S>
struct BlockCache {
  Mat<S> input;
  std::vector<Mat<S>> mixed;
  Mat<S> spatial;
  Mat<S> activated;  // ReLU output before dropout
  Mat<S> mask;
};

// Shared by the model and the standalone stgcn_block_forward.
template <typename S, typename Block>
Mat<S> block_forward(const ParameterSet<S>& params, const Block& b, const Mat<S>& x, const NormalizedAdjacency& adj,
                     int kernel, double dropout, std::mt19937_64* rng, BlockCache<S>* cache) {
  const Index v = adj.num_joints();
  if (v == 0 || x.rows() % v != 0) throw ShapeError("graph block: input rows not a multiple of the joint count");
  if (b.spatial_w.size() != adj.num_partitions()) throw ShapeError("graph block: partition count mismatch");
  const Mat<S>& w0 = params[b.spatial_w.front()];
  if (x.cols() != w0.rows())
    throw ShapeError("graph block: input channels " + std::to_string(x.cols()) + " != " + std::to_string(w0.rows()));
  const Index cout = w0.cols();

  Mat<S> spatial = Mat<S>::Zero(x.rows(), cout);
  std::vector<Mat<S>> mixed;
  for (std::size_t p = 0; p < adj.num_partitions(); ++p) {
    Mat<S> m = nn::joint_mix(x, adj.matrices[p]);
    spatial.noalias() += m * params[b.spatial_w[p]];
    if (cache) mixed.push_back(std::move(m));
  }
  spatial.rowwise() += params[b.spatial_b].row(0);

  Mat<S> y = nn::temporal_conv(spatial, params[b.temporal_w], params[b.temporal_b], v, kernel, b.dilation);
  if (b.residual_w) {
    y.noalias() += x * params[*b.residual_w];
    y.rowwise() += params[*b.residual_b].row(0);
  } else {
    if (x.cols() != cout) throw ShapeError("graph block: identity residual needs Cin == Cout");
    y += x;
  }
  nn::relu_inplace(y);
  if (cache) {
    cache->input = x;
    cache->mixed = std::move(mixed);
    cache->spatial = std::move(spatial);
    cache->activated = y;
  }
  Mat<S> mask = nn::dropout_inplace(y, dropout, rng);
  if (cache) cache->mask = std::move(mask);
  return y;
}

template <typename S, typename Block>
void block_backward(const ParameterSet<S>& params, ParameterSet<S>& grads, const Block& b, const BlockCache<S>& c,
                    Mat<S> dy, const NormalizedAdjacency& adj, int kernel, Mat<S>* dx) {
  const Index v = adj.num_joints();
  if (c.mask.size() > 0) dy.array() *= c.mask.array();
  nn::relu_backward_inplace(dy, c.activated);
  if (b.residual_w) {
    nn::dense_backward(c.input, params[*b.residual_w], dy, dx, grads[*b.residual_w], grads[*b.residual_b]);
  } else if (dx) {
    *dx += dy;
  }
  Mat<S> dspatial = Mat<S>::Zero(c.spatial.rows(), c.spatial.cols());
  nn::temporal_conv_backward(c.spatial, params[b.temporal_w], dy, v, kernel, b.dilation, &dspatial,
                             grads[b.temporal_w], grads[b.temporal_b]);
  grads[b.spatial_b].row(0) += dspatial.colwise().sum();
  for (std::size_t p = 0; p < adj.num_partitions(); ++p) {
    grads[b.spatial_w[p]].noalias() += c.mixed[p].transpose() * dspatial;
    if (dx) {
      Mat<S> dmixed = dspatial * params[b.spatial_w[p]].transpose();
      nn::joint_mix_backward(dmixed, adj.matrices[p], *dx);
    }
  }
}

}  // namespace

template <typename S>
struct PomsgcnModel<S>::Cache {
  struct Layer {
    Mat<S> input;
    Mat<S> activated;
    Mat<S> mask;
    Mat<S> dropped;
  };
  struct StageCache {
    std::vector<BlockCache<S>> blocks;
    Mat<S> joint_out;  // output of the last graph block, (T*V) x F
    Mat<S> probs;      // softmax of the previous stage
    Mat<S> stage_input;
    std::vector<Layer> layers;
    Mat<S> features;  // classifier input, T x F
  };
  std::vector<StageCache> stages;
};

template <typename S>
PomsgcnModel<S>::PomsgcnModel(const PomsgcnConfig& cfg, const SkeletonGraph& graph, std::uint64_t seed)
    : cfg_(cfg), graph_(graph) {
  cfg_.validate();
  if (graph_.num_joints() < 1) throw InvalidGraph("pomsgcn needs a graph with >= 1 joint");
  adj_ = normalized_adjacency(graph_, cfg_.adjacency);
  const Index f = cfg_.feature_width;
  const Index k = cfg_.num_classes;

  Stage first;
  for (int l = 0; l < cfg_.stage1_layers; ++l)
    first.blocks.push_back(add_block("s1.l" + std::to_string(l), l == 0 ? cfg_.input_channels : f, f, cfg_.dilation(l)));
  first.classifier_w = params_.add("s1.classifier.weight", {f, k}, f, k);
  first.classifier_b = params_.add("s1.classifier.bias", {k}, 1, k);
  stages_.push_back(std::move(first));

  for (int s = 2; s <= cfg_.num_stages; ++s) {
    const std::string prefix = "s" + std::to_string(s);
    Stage st;
    if (cfg_.graph_refinement) {
      for (int l = 0; l < cfg_.refinement_layers; ++l)
        st.blocks.push_back(add_block(prefix + ".l" + std::to_string(l), l == 0 ? k + f : f, f, cfg_.dilation(l)));
    } else {
      st.input_w = params_.add(prefix + ".input.weight", {k, f}, k, f);
      st.input_b = params_.add(prefix + ".input.bias", {f}, 1, f);
      const Index kernel = cfg_.kernel_size;
      for (int l = 0; l < cfg_.refinement_layers; ++l) {
        const std::string lp = prefix + ".l" + std::to_string(l);
        RefineLayer layer;
        layer.dilated_w = params_.add(lp + ".dilated.weight", {kernel, f, f}, kernel * f, f);
        layer.dilated_b = params_.add(lp + ".dilated.bias", {f}, 1, f);
        layer.pointwise_w = params_.add(lp + ".pointwise.weight", {f, f}, f, f);
        layer.pointwise_b = params_.add(lp + ".pointwise.bias", {f}, 1, f);
        layer.dilation = cfg_.dilation(l);
        st.layers.push_back(layer);
      }
    }
    st.classifier_w = params_.add(prefix + ".classifier.weight", {f, k}, f, k);
    st.classifier_b = params_.add(prefix + ".classifier.bias", {k}, 1, k);
    stages_.push_back(std::move(st));
  }
  initialize_parameters(params_, seed);
}

template <typename S>
typename PomsgcnModel<S>::Block PomsgcnModel<S>::add_block(const std::string& prefix, Index cin, Index cout,
                                                           int dilation) {
  Block b;
  for (std::size_t p = 0; p < adj_.num_partitions(); ++p)
    b.spatial_w.push_back(
        params_.add(prefix + ".spatial.p" + std::to_string(p) + ".weight", {cin, cout}, cin, cout));
  b.spatial_b = params_.add(prefix + ".spatial.bias", {cout}, 1, cout);
  const Index kernel = cfg_.kernel_size;
  b.temporal_w = params_.add(prefix + ".temporal.weight", {kernel, cout, cout}, kernel * cout, cout);
  b.temporal_b = params_.add(prefix + ".temporal.bias", {cout}, 1, cout);
  if (cin != cout) {
    b.residual_w = params_.add(prefix + ".residual.weight", {cin, cout}, cin, cout);
    b.residual_b = params_.add(prefix + ".residual.bias", {cout}, 1, cout);
  }
  b.dilation = dilation;
  return b;
}

template <typename S>
StageOutputs<S> PomsgcnModel<S>::run(const Mat<S>& features, Cache* cache, std::mt19937_64* rng) const {
  this->check_input(features);
  const Index v = graph_.num_joints();
  const Index t = features.rows();
  const Index c = cfg_.input_channels;
  const double drop = rng ? cfg_.dropout_rate : 0.0;
  if (cache) cache->stages.assign(stages_.size(), {});

  StageOutputs<S> out;
  // T x (V*C) row-major is (T*V) x C row-major.
  Mat<S> x = Eigen::Map<const Mat<S>>(features.data(), t * v, c);
  const Stage& first = stages_.front();
  for (std::size_t l = 0; l < first.blocks.size(); ++l)
    x = block_forward(params_, first.blocks[l], x, adj_, cfg_.kernel_size, drop, rng,
                      cache ? &cache->stages[0].blocks.emplace_back() : nullptr);
  Mat<S> pooled = nn::joint_mean(x, v);
  out.stage_logits.push_back(nn::dense(pooled, params_[first.classifier_w], params_[first.classifier_b]));
  if (cache) {
    cache->stages[0].joint_out = x;
    cache->stages[0].features = pooled;
  }
  Mat<S> feats = std::move(pooled);
  const Mat<S> joint_out = std::move(x);

  for (std::size_t s = 1; s < stages_.size(); ++s) {
    const Stage& st = stages_[s];
    Mat<S> probs = softmax(out.stage_logits.back());
    if (cfg_.graph_refinement) {
      const Index k = probs.cols();
      const Index f = joint_out.cols();
      Mat<S> in(t * v, k + f);
      for (Index r = 0; r < t; ++r)
        for (Index j = 0; j < v; ++j) {
          in.block(r * v + j, 0, 1, k) = probs.row(r);
          in.block(r * v + j, k, 1, f) = joint_out.row(r * v + j);
        }
      if (cache) cache->stages[s].stage_input = in;
      Mat<S> h = std::move(in);
      for (const auto& b : st.blocks)
        h = block_forward(params_, b, h, adj_, cfg_.kernel_size, drop, rng,
                          cache ? &cache->stages[s].blocks.emplace_back() : nullptr);
      feats = nn::joint_mean(h, v);
    } else {
      Mat<S> e = nn::dense(probs, params_[st.input_w], params_[st.input_b]);
      for (const auto& layer : st.layers) {
        Mat<S> a = nn::temporal_conv(e, params_[layer.dilated_w], params_[layer.dilated_b], 1, cfg_.kernel_size,
                                     layer.dilation);
        nn::relu_inplace(a);
        typename Cache::Layer* lc = cache ? &cache->stages[s].layers.emplace_back() : nullptr;
        if (lc) {
          lc->input = e;
          lc->activated = a;
        }
        Mat<S> mask = nn::dropout_inplace(a, drop, rng);
        e += nn::dense(a, params_[layer.pointwise_w], params_[layer.pointwise_b]);
        if (lc) {
          lc->mask = std::move(mask);
          lc->dropped = std::move(a);
        }
      }
      feats = std::move(e);
    }
    out.stage_logits.push_back(nn::dense(feats, params_[st.classifier_w], params_[st.classifier_b]));
    if (cache) {
      cache->stages[s].probs = std::move(probs);
      cache->stages[s].features = feats;
    }
  }
  out.frame_features = std::move(feats);
  return out;
}

template <typename S>
StageOutputs<S> PomsgcnModel<S>::forward(const Mat<S>& features) const {
  return run(features, nullptr, nullptr);
}

template <typename S>
GradientStep PomsgcnModel<S>::accumulate_gradients(const Mat<S>& features, std::span<const int> labels,
                                                   const LossConfig& loss, S weight, ParameterSet<S>& grads,
                                                   std::mt19937_64* dropout_rng,
                                                   std::span<const Mat<S>> detached_reference) const {
  Cache cache;
  StageOutputs<S> out = run(features, &cache, dropout_rng);
  std::vector<Mat<S>> dlogits;
  GradientStep step;
  step.loss = combined_loss<S>(out.stage_logits, labels, loss, &dlogits, detached_reference);
  for (auto& d : dlogits) d *= weight;
  const auto pred = argmax_rows(out.final_logits());
  for (std::size_t i = 0; i < pred.size(); ++i) step.correct_frames += pred[i] == labels[i];
  step.frames = static_cast<Index>(pred.size());

  const Index v = graph_.num_joints();
  const Index t = features.rows();
  const Index f = cfg_.feature_width;
  const Index k = cfg_.num_classes;
  const int kernel = cfg_.kernel_size;
  Mat<S> d_joint_out = Mat<S>::Zero(t * v, f);

  for (std::size_t s = stages_.size() - 1; s >= 1; --s) {
    const Stage& st = stages_[s];
    const auto& sc = cache.stages[s];
    Mat<S> dfeats = Mat<S>::Zero(t, f);
    nn::dense_backward(sc.features, params_[st.classifier_w], dlogits[s], &dfeats, grads[st.classifier_w],
                       grads[st.classifier_b]);
    Mat<S> dprobs = Mat<S>::Zero(t, k);
    if (cfg_.graph_refinement) {
      Mat<S> dh = Mat<S>::Zero(t * v, f);
      nn::joint_mean_backward(dfeats, v, dh);
      for (std::size_t l = st.blocks.size(); l-- > 0;) {
        Mat<S> dx = Mat<S>::Zero(sc.blocks[l].input.rows(), sc.blocks[l].input.cols());
        block_backward(params_, grads, st.blocks[l], sc.blocks[l], std::move(dh), adj_, kernel, &dx);
        dh = std::move(dx);
      }
      for (Index r = 0; r < t; ++r)
        for (Index j = 0; j < v; ++j) {
          dprobs.row(r) += dh.block(r * v + j, 0, 1, k);
          d_joint_out.row(r * v + j) += dh.block(r * v + j, k, 1, f);
        }
    } else {
      Mat<S> de = std::move(dfeats);
      for (std::size_t l = st.layers.size(); l-- > 0;) {
        const auto& layer = st.layers[l];
        const auto& lc = sc.layers[l];
        Mat<S> da = Mat<S>::Zero(t, f);
        nn::dense_backward(lc.dropped, params_[layer.pointwise_w], de, &da, grads[layer.pointwise_w],
                           grads[layer.pointwise_b]);
        if (lc.mask.size() > 0) da.array() *= lc.mask.array();
        nn::relu_backward_inplace(da, lc.activated);
        nn::temporal_conv_backward(lc.input, params_[layer.dilated_w], da, 1, kernel, layer.dilation, &de,
                                   grads[layer.dilated_w], grads[layer.dilated_b]);
      }
      nn::dense_backward(sc.probs, params_[st.input_w], de, &dprobs, grads[st.input_w], grads[st.input_b]);
    }
    dlogits[s - 1] += nn::softmax_backward(sc.probs, dprobs);
  }

  const Stage& first = stages_.front();
  const auto& fc = cache.stages[0];
  Mat<S> dpooled = Mat<S>::Zero(t, f);
  nn::dense_backward(fc.features, params_[first.classifier_w], dlogits[0], &dpooled, grads[first.classifier_w],
                     grads[first.classifier_b]);
  Mat<S> dx = std::move(d_joint_out);
  nn::joint_mean_backward(dpooled, v, dx);
  for (std::size_t l = first.blocks.size(); l-- > 0;) {
    if (l == 0) {
      block_backward(params_, grads, first.blocks[l], fc.blocks[l], std::move(dx), adj_, kernel, static_cast<Mat<S>*>(nullptr));
      break;
    }
    Mat<S> dprev = Mat<S>::Zero(fc.blocks[l].input.rows(), fc.blocks[l].input.cols());
    block_backward(params_, grads, first.blocks[l], fc.blocks[l], std::move(dx), adj_, kernel, &dprev);
    dx = std::move(dprev);
  }
  return step;
}

template <typename S>
nlohmann::json PomsgcnModel<S>::config_json() const {
  nlohmann::json edges = nlohmann::json::array();
  for (auto [i, j] : graph_.edges()) edges.push_back({i, j});
  return {{"pomsgcn", to_json(cfg_)}, {"graph", {{"num_joints", graph_.num_joints()}, {"edges", edges}}}};
}

template <typename S>
StgcnBlockParams<S> PomsgcnModel<S>::stage1_block(int layer) const {
  const Block& b = stages_.front().blocks.at(static_cast<std::size_t>(layer));
  StgcnBlockParams<S> out;
  for (auto i : b.spatial_w) out.spatial_weights.push_back(params_[i]);
  out.spatial_bias = params_[b.spatial_b];
  out.temporal_weight = params_[b.temporal_w];
  out.temporal_bias = params_[b.temporal_b];
  if (b.residual_w) {
    out.residual_weight = params_[*b.residual_w];
    out.residual_bias = params_[*b.residual_b];
  }
  out.kernel = cfg_.kernel_size;
  out.dilation = b.dilation;
  return out;
}

template <typename S>
Mat<S> stgcn_block_forward(const StgcnBlockParams<S>& block, const Mat<S>& x, const NormalizedAdjacency& adj) {
  if (block.spatial_weights.empty()) throw ShapeError("graph block without spatial weights");
  ParameterSet<S> ps;
  typename PomsgcnModel<S>::Block b;
  const Index cin = block.spatial_weights.front().rows();
  const Index cout = block.spatial_weights.front().cols();
  for (std::size_t p = 0; p < block.spatial_weights.size(); ++p) {
    const auto& w = block.spatial_weights[p];
    if (w.rows() != cin || w.cols() != cout) throw ShapeError("graph block: inconsistent spatial weight shapes");
    b.spatial_w.push_back(ps.add("w" + std::to_string(p), {cin, cout}, cin, cout));
    ps[b.spatial_w.back()] = w;
  }
  auto put = [&](const std::string& name, const Mat<S>& m) {
    auto i = ps.add(name, {m.rows(), m.cols()}, m.rows(), m.cols());
    ps[i] = m;
    return i;
  };
  if (block.temporal_weight.rows() != block.kernel * cout || block.temporal_weight.cols() != cout)
    throw ShapeError("graph block: temporal weight must be (kernel*Cout) x Cout");
  auto is_row = [&](const Mat<S>& m) { return m.rows() == 1 && m.cols() == cout; };
  if (!is_row(block.spatial_bias) || !is_row(block.temporal_bias)) throw ShapeError("graph block: biases must be 1 x Cout");
  if (block.residual_weight && (block.residual_weight->rows() != cin || block.residual_weight->cols() != cout))
    throw ShapeError("graph block: residual weight must be Cin x Cout");
  if (block.residual_bias && !is_row(*block.residual_bias)) throw ShapeError("graph block: biases must be 1 x Cout");
  b.spatial_b = put("sb", block.spatial_bias);
  b.temporal_w = put("tw", block.temporal_weight);
  b.temporal_b = put("tb", block.temporal_bias);
  if (block.residual_weight) {
    b.residual_w = put("rw", *block.residual_weight);
    b.residual_b = put("rb", block.residual_bias ? *block.residual_bias : Mat<S>::Zero(1, cout));
  }
  b.dilation = block.dilation;
  return block_forward<S>(ps, b, x, adj, block.kernel, 0.0, nullptr, nullptr);
}

template <typename S>
Mat<S> joint_pool(const Mat<S>& x, Index num_joints) {
  if (num_joints < 1 || x.rows() % num_joints != 0) throw ShapeError("joint_pool: rows not a multiple of joint count");
  return nn::joint_mean(x, num_joints);
}

template class PomsgcnModel<float>;
template class PomsgcnModel<double>;
template void initialize_parameters<float>(ParameterSet<float>&, std::uint64_t);
template void initialize_parameters<double>(ParameterSet<double>&, std::uint64_t);
template Mat<float> stgcn_block_forward<float>(const StgcnBlockParams<float>&, const Mat<float>&,
                                               const NormalizedAdjacency&);
template Mat<double> stgcn_block_forward<double>(const StgcnBlockParams<double>&, const Mat<double>&,
                                                 const NormalizedAdjacency&);
template Mat<float> joint_pool<float>(const Mat<float>&, Index);
template Mat<double> joint_pool<double>(const Mat<double>&, Index);

}  // namespace actseg
