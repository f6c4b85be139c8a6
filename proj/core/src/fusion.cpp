#include "actseg/fusion.hpp"

#include <algorithm>
#include <fstream>

#include "actseg/checkpoint.hpp"
#include "actseg/losses.hpp"
#include "actseg/nn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace actseg {

SequenceSample InputView::apply(const SequenceSample& sample) const {
  if (sample.num_frames() == 0) throw EmptyInput("sample '" + sample.sample_id + "' has no frames");
  SequenceSample out = decimation > 1 ? decimate(sample, decimation) : sample;
  if (!zero_channels.empty()) out = actseg::zero_channels(out, zero_channels);
  return out;
}

json to_json(const InputView& v) { return {{"decimation", v.decimation}, {"zero_channels", v.zero_channels}}; }

InputView input_view_from_json(const json& j) {
  InputView v;
  v.decimation = j.value("decimation", 1);
  v.zero_channels = j.value("zero_channels", std::vector<int>{});
  if (v.decimation < 1) throw ConfigError("decimation must be >= 1");
  return v;
}

MatD concat_features(const MatD& a, const MatD& b) {
  if (a.rows() != b.rows())
    throw ShapeError("cannot concatenate " + std::to_string(a.rows()) + " frames with " + std::to_string(b.rows()));
  MatD out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

FusedFeatureSet extract_fused_features(const FusionSource& first, const FusionSource& second,
                                       std::span<const SequenceSample> samples) {
  if (!first.model || !second.model) throw ConfigError("fusion source without a model");
  if (first.view.decimation != second.view.decimation)
    throw CompatibilityError("sources were trained at different decimation factors (" +
                             std::to_string(first.view.decimation) + " vs " +
                             std::to_string(second.view.decimation) + ")");
  if (first.model->num_classes() != second.model->num_classes())
    throw CompatibilityError("sources disagree on the number of classes");
  FusedFeatureSet set;
  set.num_classes = first.model->num_classes();
  set.provenance = {{"first", {{"source", first.name}, {"kind", first.model->kind()},
                               {"feature_width", first.model->feature_width()}, {"input_view", to_json(first.view)}}},
                    {"second", {{"source", second.name}, {"kind", second.model->kind()},
                                {"feature_width", second.model->feature_width()}, {"input_view", to_json(second.view)}}}};
  for (const auto& s : samples) {
    for (const auto* m : {first.model, second.model})
      if (s.features.cols() != m->input_width())
        throw CompatibilityError("sample '" + s.sample_id + "' width " + std::to_string(s.features.cols()) +
                                 " does not match " + m->kind() + " input " + std::to_string(m->input_width()));
    const SequenceSample a = first.view.apply(s);
    const SequenceSample b = second.view.apply(s);
    FusedSample fused;
    fused.sample_id = s.sample_id;
    fused.features = concat_features(first.model->forward(a.features).frame_features,
                                     second.model->forward(b.features).frame_features);
    fused.labels = a.labels;
    set.samples.push_back(std::move(fused));
  }
  return set;
}

namespace {

InputView view_from_manifest(const CheckpointManifest& m) {
  if (m.info.extra.contains("input_view")) return input_view_from_json(m.info.extra.at("input_view"));
  return {};
}

}  // namespace

FusedFeatureSet extract_fused_dataset(const fs::path& first_checkpoint, const fs::path& second_checkpoint,
                                      std::span<const SequenceSample> samples) {
  const AnyModel a = load_model(first_checkpoint);
  const AnyModel b = load_model(second_checkpoint);
  return extract_fused_features({&a, view_from_manifest(read_manifest(first_checkpoint)), first_checkpoint.string()},
                                {&b, view_from_manifest(read_manifest(second_checkpoint)), second_checkpoint.string()},
                                samples);
}

void write_fused_dataset(const fs::path& dir, const FusedFeatureSet& set) {
  fs::create_directories(dir);
  json prov = set.provenance;
  prov["num_classes"] = set.num_classes;
  prov["width"] = set.width();
  {
    std::ofstream out(dir / "provenance.json");
    if (!out) throw FormatError("cannot write '" + (dir / "provenance.json").string() + "'");
    out << prov.dump(2) << "\n";
  }
  for (const auto& s : set.samples) {
    fs::create_directories(dir / s.sample_id);
    write_matrix_csv(dir / s.sample_id / "fused_features.csv", s.features);
    write_labels_csv(dir / s.sample_id / "labels.csv", s.labels);
  }
}

FusedFeatureSet read_fused_dataset(const fs::path& dir) {
  std::ifstream in(dir / "provenance.json");
  if (!in) throw FormatError("no provenance.json in '" + dir.string() + "'");
  FusedFeatureSet set;
  try {
    set.provenance = json::parse(in);
    set.num_classes = set.provenance.at("num_classes").get<int>();
  } catch (const json::exception& e) {
    throw FormatError("provenance.json: " + std::string(e.what()));
  }
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "fused_features.csv")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    FusedSample s;
    s.sample_id = d.filename().string();
    s.features = read_matrix_csv(d / "fused_features.csv");
    s.labels = read_labels_csv(d / "labels.csv");
    if (static_cast<Index>(s.labels.size()) != s.features.rows())
      throw FormatError("sample '" + s.sample_id + "': feature and label frame counts differ");
    if (!set.samples.empty() && s.features.cols() != set.width())
      throw FormatError("sample '" + s.sample_id + "': inconsistent fused width");
    set.samples.push_back(std::move(s));
  }
  return set;
}

void FusionClassifierConfig::validate() const {
  if (input_width <= 0) throw ConfigError("fusion input width must be positive");
  if (hidden_width <= 0) throw ConfigError("fusion hidden width must be positive");
  if (num_classes <= 0) throw ConfigError("fusion num_classes must be positive");
  if (!(bn_epsilon > 0)) throw ConfigError("batch norm epsilon must be positive");
  if (!(bn_momentum > 0 && bn_momentum <= 1)) throw ConfigError("batch norm momentum must lie in (0, 1]");
}

json to_json(const FusionClassifierConfig& cfg) {
  return {{"input_width", cfg.input_width}, {"hidden_width", cfg.hidden_width}, {"num_classes", cfg.num_classes},
          {"bn_epsilon", cfg.bn_epsilon},   {"bn_momentum", cfg.bn_momentum}};
}

FusionClassifierConfig fusion_config_from_json(const json& j) {
  FusionClassifierConfig cfg;
  try {
    cfg.input_width = j.value("input_width", Index{0});
    cfg.hidden_width = j.value("hidden_width", cfg.hidden_width);
    cfg.num_classes = j.value("num_classes", 0);
    cfg.bn_epsilon = j.value("bn_epsilon", cfg.bn_epsilon);
    cfg.bn_momentum = j.value("bn_momentum", cfg.bn_momentum);
  } catch (const json::exception& e) {
    throw ConfigError("fusion config: " + std::string(e.what()));
  }
  return cfg;
}

FusionClassifier::FusionClassifier(const FusionClassifierConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const Index w = cfg_.input_width, h = cfg_.hidden_width, k = cfg_.num_classes;
  gain_ = params_.add("bn.gain", {w}, 1, w);
  bias_ = params_.add("bn.bias", {w}, 1, w);
  mean_ = params_.add("bn.running_mean", {w}, 1, w, false);
  var_ = params_.add("bn.running_var", {w}, 1, w, false);
  hidden_w_ = params_.add("hidden.weight", {w, h}, w, h);
  hidden_b_ = params_.add("hidden.bias", {h}, 1, h);
  out_w_ = params_.add("out.weight", {h, k}, h, k);
  out_b_ = params_.add("out.bias", {k}, 1, k);
  params_[gain_].setOnes();
  params_[var_].setOnes();
  std::mt19937_64 rng(seed);
  init_uniform(params_[hidden_w_], w, rng);
  init_uniform(params_[out_w_], h, rng);
}

MatD FusionClassifier::forward(const MatD& fused) const {
  if (fused.cols() != cfg_.input_width)
    throw ShapeError("fused width " + std::to_string(fused.cols()) + " != " + std::to_string(cfg_.input_width));
  MatD x = nn::batch_norm_infer(fused, params_[gain_], params_[bias_], params_[mean_], params_[var_], cfg_.bn_epsilon);
  MatD hidden = nn::dense(x, params_[hidden_w_], params_[hidden_b_]);
  nn::relu_inplace(hidden);
  // Flatten: each frame is already a flat vector.
  return nn::dense(hidden, params_[out_w_], params_[out_b_]);
}

std::vector<int> FusionClassifier::predict(const MatD& fused) const { return argmax_rows(forward(fused)); }

double FusionClassifier::train_step(const MatD& batch, std::span<const int> labels,
                                    std::span<const double> frame_weights, ParameterSet<double>& grads,
                                    Index* correct) {
  if (batch.cols() != cfg_.input_width)
    throw ShapeError("fused width " + std::to_string(batch.cols()) + " != " + std::to_string(cfg_.input_width));
  const Index n = batch.rows();
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(frame_weights.size()) != n)
    throw ShapeError("labels and weights must have one entry per frame");

  nn::NormCache<double> bn_cache;
  MatD mean, var;
  const MatD x = nn::batch_norm_train(batch, params_[gain_], params_[bias_], cfg_.bn_epsilon, &bn_cache, mean, var);
  MatD hidden = nn::dense(x, params_[hidden_w_], params_[hidden_b_]);
  nn::relu_inplace(hidden);
  const MatD logits = nn::dense(hidden, params_[out_w_], params_[out_b_]);
  const MatD probs = softmax(logits);

  double loss = 0.0;
  Index hits = 0;
  MatD dlogits = probs;
  for (Index t = 0; t < n; ++t) {
    const int y = labels[static_cast<std::size_t>(t)];
    if (y < 0 || y >= cfg_.num_classes) throw RangeError("label " + std::to_string(y) + " outside [0, K)");
    const double wt = frame_weights[static_cast<std::size_t>(t)];
    const double p = probs(t, y);
    loss -= wt * std::log(std::max(p, kProbabilityFloor));
    Index arg = 0;
    probs.row(t).maxCoeff(&arg);
    hits += arg == y;
    dlogits(t, y) -= 1.0;
    if (p < kProbabilityFloor) dlogits.row(t).setZero();
    dlogits.row(t) *= wt;
  }
  if (correct) *correct += hits;

  MatD dhidden = MatD::Zero(n, cfg_.hidden_width);
  nn::dense_backward(hidden, params_[out_w_], dlogits, &dhidden, grads[out_w_], grads[out_b_]);
  nn::relu_backward_inplace(dhidden, hidden);
  MatD dx = MatD::Zero(n, cfg_.input_width);
  nn::dense_backward(x, params_[hidden_w_], dhidden, &dx, grads[hidden_w_], grads[hidden_b_]);
  MatD dbatch = MatD::Zero(n, cfg_.input_width);
  nn::batch_norm_backward(bn_cache, params_[gain_], dx, dbatch, grads[gain_], grads[bias_]);

  const double m = cfg_.bn_momentum;
  params_[mean_] = (1.0 - m) * params_[mean_] + m * mean;
  if (n > 1) params_[var_] = (1.0 - m) * params_[var_] + m * var * (static_cast<double>(n) / static_cast<double>(n - 1));
  return loss;
}

TrainHistory train_fusion(FusionClassifier& clf, const FusedFeatureSet& train, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.samples.empty()) throw InsufficientData("fusion training set is empty");
  for (const auto& s : train.samples) {
    if (s.features.rows() == 0) throw EmptyInput("sample '" + s.sample_id + "' has no frames");
    if (s.features.cols() != clf.config().input_width)
      throw ShapeError("sample '" + s.sample_id + "' fused width does not match the classifier");
  }
  ParameterSet<double>& params = clf.parameters();
  ParameterSet<double> grads = params.zeros_like();
  AdamState<double> adam = AdamState<double>::for_parameters(params);
  const auto orders = epoch_orders(train.samples.size(), cfg.epochs, cfg.seed);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  TrainHistory history;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto& order = orders[static_cast<std::size_t>(e)];
    EpochRecord rec;
    rec.epoch = e + 1;
    Index correct = 0, frames = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      Index rows = 0;
      for (std::size_t i = b0; i < b1; ++i) rows += train.samples[order[i]].features.rows();
      MatD x(rows, clf.config().input_width);
      std::vector<int> labels;
      std::vector<double> weights;
      labels.reserve(static_cast<std::size_t>(rows));
      weights.reserve(static_cast<std::size_t>(rows));
      Index r = 0;
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& s = train.samples[order[i]];
        x.middleRows(r, s.features.rows()) = s.features;
        r += s.features.rows();
        labels.insert(labels.end(), s.labels.begin(), s.labels.end());
        const double w = 1.0 / (static_cast<double>(b1 - b0) * static_cast<double>(s.features.rows()));
        weights.insert(weights.end(), s.labels.size(), w);
      }
      grads.set_zero();
      rec.loss += clf.train_step(x, labels, weights, grads, &correct) * static_cast<double>(b1 - b0);
      frames += rows;
      adam_step(params, grads, adam, cfg);
    }
    rec.loss /= static_cast<double>(order.size());
    rec.ce = rec.loss;
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(frames);
    if (!std::isfinite(rec.loss)) throw NonFiniteGradient("epoch " + std::to_string(rec.epoch) + ": non-finite loss");
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

void save_fusion_checkpoint(const fs::path& dir, const FusionClassifier& clf, std::uint64_t seed, int epoch,
                            json extra) {
  CheckpointInfo info;
  info.model_type = "fusion";
  info.config = {{"fusion", to_json(clf.config())}};
  info.seed = seed;
  info.epoch = epoch;
  info.extra = std::move(extra);
  save_checkpoint(dir, clf.parameters(), info);
}

FusionClassifier load_fusion_checkpoint(const fs::path& dir) {
  const CheckpointManifest m = read_manifest(dir);
  if (m.info.model_type != "fusion") throw CompatibilityError("checkpoint holds a '" + m.info.model_type + "' model");
  FusionClassifier clf(fusion_config_from_json(m.info.config.at("fusion")), 0);
  load_parameters(dir, clf.parameters());
  return clf;
}

}  // namespace actseg
