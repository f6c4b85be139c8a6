#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "actseg/error.hpp"
#include "actseg/checkpoint.hpp"
#include "actseg/fusion.hpp"
#include "actseg/pomsgcn.hpp"
#include "actseg/trainer.hpp"
#include "actseg/transformer.hpp"
#include "temp_dir.hpp"

using namespace actseg;

namespace {

ParameterSet<double> scalar_params(std::initializer_list<double> values) {
  ParameterSet<double> p;
  int i = 0;
  for (double v : values) {
    const auto idx = p.add("p" + std::to_string(i++), {1}, 1, 1);
    p[idx](0, 0) = v;
  }
  return p;
}

Dataset tiny_dataset(int n, std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.num_classes = 3;
  cfg.num_joints = 3;
  cfg.channels = 2;
  cfg.num_sequences = n;
  cfg.frames_per_sequence = 48;
  cfg.min_segment_length = 8;
  cfg.max_segment_length = 16;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

TransformerConfig tiny_transformer(const Dataset& d) {
  TransformerConfig cfg;
  cfg.num_classes = d.meta.num_classes;
  cfg.input_size = d.meta.num_joints * d.meta.channels;
  cfg.model_dim = 8;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.feedforward_dim = 16;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("adam: first step from zero with unit gradient") {
  auto p = scalar_params({0.0});
  auto g = scalar_params({1.0});
  auto st = AdamState<double>::for_parameters(p);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  adam_step(p, g, st, cfg);
  CHECK(p[0](0, 0) == doctest::Approx(-0.001).epsilon(1e-6));
  CHECK(st.step == 1);
}

TEST_CASE("adam: zero gradient leaves parameters, coordinates are independent, steps are bounded") {
  auto p = scalar_params({0.5, -2.0, 3.0});
  auto st = AdamState<double>::for_parameters(p);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  adam_step(p, scalar_params({0.0, 0.0, 0.0}), st, cfg);
  CHECK(p == scalar_params({0.5, -2.0, 3.0}));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 10.0);
  auto a = scalar_params({1.0, 1.0});
  auto b = scalar_params({1.0, 7.0});
  auto sa = AdamState<double>::for_parameters(a), sb = sa;
  for (int k = 0; k < 50; ++k) {
    const double g0 = n(rng);
    const auto before = a[0](0, 0);
    adam_step(a, scalar_params({g0, n(rng)}), sa, cfg);
    adam_step(b, scalar_params({g0, n(rng)}), sb, cfg);
    CHECK(a[0](0, 0) == b[0](0, 0));
    CHECK(std::abs(a[0](0, 0) - before) <= 1.01 * cfg.learning_rate);
  }
}

TEST_CASE("adam: non-trainable arrays stay fixed, non-finite gradients throw before any change") {
  ParameterSet<double> p;
  p.add("w", {2}, 1, 2);
  p.add("stat", {2}, 1, 2, false);
  auto g = p.zeros_like();
  g[0].setOnes();
  g[1].setOnes();
  auto st = AdamState<double>::for_parameters(p);
  adam_step(p, g, st, TrainConfig{});
  CHECK(!p[0].isZero());
  CHECK(p[1].isZero());

  const auto snapshot = p;
  g[0](0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(p, g, st, TrainConfig{}), NonFiniteGradient);
  CHECK(p == snapshot);
  CHECK(st.step == 1);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.beta2 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_precision("single") == Precision::single);
  CHECK_THROWS_AS(parse_precision("half"), ConfigError);
}

TEST_CASE("finite-difference gradcheck on closed-form losses") {
  const auto params = scalar_params({0.3, -1.2, 2.0});
  const LossWithGradient quadratic = [](const ParameterSet<double>& p, ParameterSet<double>* g) {
    double l = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x = p[i](0, 0);
      l += 0.5 * (i + 1.0) * x * x;
      if (g) (*g)[i](0, 0) = (i + 1.0) * x;
    }
    return l;
  };
  const auto r = finite_difference_gradcheck(quadratic, params);
  CHECK(r.max_relative_error < 1e-8);
  CHECK(r.coordinates_checked == 3);

  const LossWithGradient constant = [](const ParameterSet<double>&, ParameterSet<double>* g) {
    if (g) g->set_zero();
    return 4.0;
  };
  CHECK(finite_difference_gradcheck(constant, params).max_relative_error == 0.0);

  const LossWithGradient wrong = [&](const ParameterSet<double>& p, ParameterSet<double>* g) {
    const double l = quadratic(p, g);
    if (g) (*g)[1](0, 0) *= 2.0;
    return l;
  };
  const auto bad = finite_difference_gradcheck(wrong, params);
  CHECK(bad.max_relative_error > 0.1);
  CHECK(bad.worst_parameter == "p1");

  CHECK_THROWS_AS(finite_difference_gradcheck(quadratic, params, 1e-2), ConfigError);
  CHECK_THROWS_AS(finite_difference_gradcheck(quadratic, params, 1e-9), ConfigError);
}

TEST_CASE("epoch orders are permutations and seed-determined") {
  const auto a = epoch_orders(7, 3, 5), b = epoch_orders(7, 3, 5), c = epoch_orders(7, 3, 6);
  CHECK(a == b);
  CHECK(a != c);
  REQUIRE(a.size() == 3);
  for (auto order : a) {
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < 7; ++i) CHECK(order[i] == i);
  }
}

TEST_CASE("training: determinism, loss decrease, small sets, empty sets") {
  const auto data = tiny_dataset(4, 3);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.learning_rate = 5e-3;
  cfg.seed = 9;
  TransformerModel<double> a(tiny_transformer(data), 1), b(tiny_transformer(data), 1);
  const auto ha = train_model<double>(a, data.samples, LossConfig{}, cfg);
  const auto hb = train_model<double>(b, data.samples, LossConfig{}, cfg);
  CHECK(a.parameters() == b.parameters());
  CHECK(history_csv(ha) == history_csv(hb));
  REQUIRE(ha.size() == 15);
  CHECK(ha.back().loss < ha.front().loss);
  CHECK(ha.front().epoch == 1);

  TransformerModel<double> one(tiny_transformer(data), 1);
  const std::vector<SequenceSample> single{data.samples.front()};
  CHECK(train_model<double>(one, single, LossConfig{}, cfg).size() == 15);

  CHECK_THROWS_AS(train_model<double>(one, std::span<const SequenceSample>{}, LossConfig{}, cfg), InsufficientData);
  auto wrong = data.samples.front();
  wrong.features.conservativeResize(Eigen::NoChange, 5);
  const std::vector<SequenceSample> bad{wrong};
  CHECK_THROWS_AS(train_model<double>(one, bad, LossConfig{}, cfg), ShapeError);
}

TEST_CASE("training with single precision stays finite and deterministic") {
  const auto data = tiny_dataset(3, 4);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 2;
  TransformerModel<float> a(tiny_transformer(data), 1), b(tiny_transformer(data), 1);
  train_model<float>(a, data.samples, LossConfig{}, cfg);
  train_model<float>(b, data.samples, LossConfig{}, cfg);
  CHECK(a.parameters() == b.parameters());
  CHECK(a.parameters().all_finite());
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("round trip is bitwise for both precisions and both model kinds") {
  TempDir tmp;
  PomsgcnConfig gcfg;
  gcfg.num_stages = 2;
  gcfg.stage1_layers = 2;
  gcfg.refinement_layers = 2;
  gcfg.feature_width = 8;
  gcfg.num_classes = 3;
  gcfg.input_channels = 2;
  const PomsgcnModel<double> g(gcfg, chain_graph(3), 5);
  save_checkpoint<double>(tmp.path() / "g", g, 5, 12, {{"note", "x"}});
  const auto manifest = read_manifest(tmp.path() / "g");
  CHECK(manifest.dtype == "float64");
  CHECK(manifest.info.model_type == "pomsgcn");
  CHECK(manifest.info.epoch == 12);
  CHECK(manifest.info.extra["note"] == "x");
  const AnyModel loaded = load_model(tmp.path() / "g");
  CHECK(loaded.is_double());
  CHECK(loaded.get<double>()->parameters() == g.parameters());

  const auto data = tiny_dataset(1, 1);
  const TransformerModel<float> t(tiny_transformer(data), 6);
  save_checkpoint<float>(tmp.path() / "t", t, 6, 1);
  const AnyModel lt = load_model(tmp.path() / "t");
  CHECK(!lt.is_double());
  CHECK(lt.get<float>()->parameters() == t.parameters());
  CHECK(lt.predict(data.samples[0].features) == AnyModel(std::make_unique<TransformerModel<float>>(t)).predict(data.samples[0].features));
}

TEST_CASE("corrupt or mismatched checkpoints are rejected") {
  TempDir tmp;
  const auto data = tiny_dataset(1, 1);
  const TransformerModel<double> t(tiny_transformer(data), 6);
  save_checkpoint<double>(tmp.path() / "t", t, 6, 1);

  auto other = tiny_transformer(data);
  other.num_classes = 4;
  TransformerModel<double> k4(other, 6);
  CHECK_THROWS_AS(load_parameters<double>(tmp.path() / "t", k4.parameters()), CompatibilityError);
  TransformerModel<float> f(tiny_transformer(data), 6);
  CHECK_THROWS_AS(load_parameters<float>(tmp.path() / "t", f.parameters()), CompatibilityError);

  const auto blob = tmp.path() / "t" / "params.bin";
  std::filesystem::resize_file(blob, std::filesystem::file_size(blob) - 8);
  TransformerModel<double> same(tiny_transformer(data), 0);
  CHECK_THROWS_AS(load_parameters<double>(tmp.path() / "t", same.parameters()), ChecksumError);

  CHECK_THROWS_AS(read_manifest(tmp.path() / "missing"), FormatError);
  std::filesystem::create_directories(tmp.path() / "junk");
  std::ofstream(tmp.path() / "junk" / "manifest.json") << "{not json";
  CHECK_THROWS_AS(read_manifest(tmp.path() / "junk"), FormatError);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("fusion");

TEST_CASE("concat_features examples") {
  MatD a(2, 1), b(2, 2);
  a << 1, 2;
  b << 3, 4, 5, 6;
  MatD expected(2, 3);
  expected << 1, 3, 4, 2, 5, 6;
  CHECK(concat_features(a, b) == expected);
  CHECK(concat_features(a, MatD(2, 0)) == a);
  CHECK_THROWS_AS(concat_features(a, MatD(3, 2)), ShapeError);
}

TEST_CASE("fresh classifier: identity batch norm, per-frame dense oracle") {
  FusionClassifierConfig cfg;
  cfg.input_width = 5;
  cfg.hidden_width = 7;
  cfg.num_classes = 3;
  const FusionClassifier clf(cfg, 2);
  const auto& p = clf.parameters();
  auto P = [&](const char* n) { return p.at(*p.find(n)).value; };
  CHECK(!p.at(*p.find("bn.running_mean")).trainable);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  MatD x(9, 5);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  const MatD normalized = x / std::sqrt(1.0 + cfg.bn_epsilon);
  const MatD hidden = ((normalized * P("hidden.weight")).rowwise() + P("hidden.bias").row(0)).cwiseMax(0.0);
  const MatD logits = (hidden * P("out.weight")).rowwise() + P("out.bias").row(0);
  const MatD y = clf.forward(x);
  CHECK(y.rows() == 9);
  CHECK((y - logits).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(clf.predict(x).size() == 9);

  // Every frame stands alone at inference: a constant input gives constant rows.
  const MatD c = MatD::Constant(4, 5, 0.7);
  const MatD yc = clf.forward(c);
  for (Index r = 1; r < 4; ++r) CHECK(yc.row(r) == yc.row(0));
  CHECK_THROWS_AS(clf.forward(MatD(3, 4)), ShapeError);

  cfg.num_classes = 0;
  CHECK_THROWS_AS(FusionClassifier(cfg, 0), ConfigError);
  cfg.num_classes = 3;
  cfg.bn_momentum = 0.0;
  CHECK_THROWS_AS(FusionClassifier(cfg, 0), ConfigError);
}

TEST_CASE("train_step normalizes with batch statistics and tracks running ones") {
  FusionClassifierConfig cfg;
  cfg.input_width = 3;
  cfg.hidden_width = 4;
  cfg.num_classes = 2;
  cfg.bn_epsilon = 1e-12;
  FusionClassifier clf(cfg, 4);
  // Make the hidden layer the identity on the first three units so the
  // normalized batch is visible through the logits' gradient-free path.
  MatD x(6, 3);
  x << 1, 10, -1, 2, 20, -1, 3, 30, -1, 4, 40, 5, 5, 50, 5, 6, 60, 5;
  const std::vector<int> y{0, 0, 0, 1, 1, 1};
  const std::vector<double> w(6, 1.0 / 6.0);
  auto grads = clf.parameters().zeros_like();
  const double loss = clf.train_step(x, y, w, grads);
  CHECK(std::isfinite(loss));
  const auto& p = clf.parameters();
  const MatD mean = p.at(*p.find("bn.running_mean")).value;
  const MatD var = p.at(*p.find("bn.running_var")).value;
  const MatD batch_mean = x.colwise().mean();
  CHECK((mean - 0.1 * batch_mean).cwiseAbs().maxCoeff() < 1e-12);
  for (Index c = 0; c < 3; ++c) {
    const double unbiased = (x.col(c).array() - batch_mean(0, c)).square().sum() / 5.0;
    CHECK(var(0, c) == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-12));
  }
  CHECK(grads.at(*grads.find("bn.running_mean")).value.isZero());

  // Batch-mode normalization is invariant to per-column affine shifts.
  FusionClassifier a(cfg, 4), b(cfg, 4);
  auto ga = a.parameters().zeros_like(), gb = ga;
  MatD shifted = x;
  shifted.col(1) = 3.0 * shifted.col(1).array() + 100.0;
  const double la = a.train_step(x, y, w, ga);
  const double lb = b.train_step(shifted, y, w, gb);
  CHECK(la == doctest::Approx(lb).epsilon(1e-9));
}

TEST_CASE("fusion training: separable data, determinism, checkpoint round trip") {
  FusedFeatureSet set;
  set.num_classes = 2;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (int s = 0; s < 6; ++s) {
    FusedSample fs;
    fs.sample_id = "s" + std::to_string(s);
    fs.features.resize(20, 4);
    for (Index t = 0; t < 20; ++t) {
      const int label = (t / 5) % 2;
      fs.labels.push_back(label);
      for (Index c = 0; c < 4; ++c) fs.features(t, c) = nd(rng) + (c == 0 ? 2.0 * label - 1.0 : 0.0);
    }
    set.samples.push_back(fs);
  }
  FusionClassifierConfig cfg;
  cfg.input_width = 4;
  cfg.hidden_width = 8;
  cfg.num_classes = 2;
  TrainConfig tc;
  tc.epochs = 40;
  tc.learning_rate = 1e-2;
  tc.batch_size = 2;
  tc.seed = 3;
  FusionClassifier a(cfg, 1), b(cfg, 1);
  const auto ha = train_fusion(a, set, tc);
  train_fusion(b, set, tc);
  CHECK(a.parameters() == b.parameters());
  CHECK(ha.back().loss < 0.5 * ha.front().loss);
  CHECK(ha.back().train_accuracy > 0.9);

  TempDir tmp;
  save_fusion_checkpoint(tmp.path() / "f", a, 1, 40);
  const auto back = load_fusion_checkpoint(tmp.path() / "f");
  CHECK(back.parameters() == a.parameters());
  CHECK(back.forward(set.samples[0].features) == a.forward(set.samples[0].features));

  CHECK_THROWS_AS(train_fusion(a, FusedFeatureSet{}, tc), InsufficientData);
}

TEST_CASE("feature extraction concatenates both models frame by frame") {
  const auto data = tiny_dataset(2, 8);
  auto t1 = tiny_transformer(data);
  auto t2 = t1;
  t2.model_dim = 6;
  t2.num_heads = 3;
  const AnyModel m1(std::make_unique<TransformerModel<double>>(t1, 1));
  const AnyModel m2(std::make_unique<TransformerModel<float>>(t2, 2));
  const auto set = extract_fused_features({&m1, {}, "a"}, {&m2, {}, "b"}, data.samples);
  REQUIRE(set.samples.size() == 2);
  CHECK(set.width() == 14);
  CHECK(set.num_classes == 3);
  const auto& s0 = set.samples[0];
  CHECK(s0.features.rows() == data.samples[0].num_frames());
  CHECK(s0.labels == data.samples[0].labels);
  const MatD f1 = m1.get<double>()->forward(data.samples[0].features).frame_features;
  CHECK(s0.features.leftCols(8) == f1);

  TempDir tmp;
  write_fused_dataset(tmp.path(), set);
  const auto back = read_fused_dataset(tmp.path());
  REQUIRE(back.samples.size() == 2);
  CHECK(back.samples[1].features == set.samples[1].features);
  CHECK(back.samples[1].labels == set.samples[1].labels);

  InputView halved;
  halved.decimation = 2;
  CHECK_THROWS_AS(extract_fused_features({&m1, halved, "a"}, {&m2, {}, "b"}, data.samples), CompatibilityError);
  t2.num_classes = 4;
  const AnyModel k4(std::make_unique<TransformerModel<double>>(t2, 2));
  CHECK_THROWS_AS(extract_fused_features({&m1, {}, "a"}, {&k4, {}, "b"}, data.samples), CompatibilityError);
}

TEST_SUITE_END();
