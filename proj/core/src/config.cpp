#include "actseg/config.hpp"

#include <fstream>
#include <initializer_list>

namespace fs = std::filesystem;
using nlohmann::json;

namespace actseg {

namespace {

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  require_object(j, where);
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

SyntheticConfig parse_synthetic(const json& j, SyntheticMode& mode) {
  check_keys(j, "dataset.synthetic",
             {"mode", "num_classes", "num_joints", "channels", "num_sequences", "frames_per_sequence",
              "min_segment_length", "max_segment_length", "noise_std", "sampling_rate_hz", "seed"});
  SyntheticConfig c;
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "standard")
      mode = SyntheticMode::standard;
    else if (m == "complementary")
      mode = SyntheticMode::complementary;
    else
      throw ConfigError("unknown synthetic mode '" + m + "'");
  }
  read(j, "num_classes", c.num_classes);
  read(j, "num_joints", c.num_joints);
  read(j, "channels", c.channels);
  read(j, "num_sequences", c.num_sequences);
  read(j, "frames_per_sequence", c.frames_per_sequence);
  read(j, "min_segment_length", c.min_segment_length);
  read(j, "max_segment_length", c.max_segment_length);
  read(j, "noise_std", c.noise_std);
  read(j, "sampling_rate_hz", c.sampling_rate_hz);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

DatasetSection parse_dataset(const json& j) {
  check_keys(j, "dataset",
             {"name", "path", "synthetic", "decimation", "train_fraction", "split_seed", "zero_channels"});
  DatasetSection d;
  read(j, "name", d.name);
  if (j.contains("path")) d.path = fs::path(j.at("path").get<std::string>());
  if (j.contains("synthetic")) d.synthetic = parse_synthetic(j.at("synthetic"), d.synthetic_mode);
  read(j, "decimation", d.decimation);
  read(j, "train_fraction", d.train_fraction);
  read(j, "split_seed", d.split_seed);
  read(j, "zero_channels", d.zero_channels);
  if (d.name.empty()) throw ConfigError("dataset.name must not be empty");
  if (d.path && d.synthetic) throw ConfigError("dataset: give either path or synthetic, not both");
  if (!d.path && !d.synthetic) throw ConfigError("dataset: one of path or synthetic is required");
  if (d.decimation < 1) throw ConfigError("dataset.decimation must be >= 1");
  if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) throw ConfigError("dataset.train_fraction must lie in (0,1)");
  for (int c : d.zero_channels)
    if (c < 0) throw ConfigError("dataset.zero_channels entries must be >= 0");
  return d;
}

GraphSection parse_graph(const json& j) {
  check_keys(j, "graph", {"num_joints", "edges", "strategy"});
  GraphSection g;
  g.present = true;
  if (j.contains("num_joints")) g.num_joints = j.at("num_joints").get<int>();
  if (j.contains("edges"))
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("graph.edges entries must be [i, j] pairs");
      g.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    }
  if (j.contains("strategy")) g.strategy = parse_adjacency_strategy(j.at("strategy").get<std::string>());
  return g;
}

ModelSection parse_model(const json& j) {
  require_object(j, "model");
  ModelSection m;
  if (!j.contains("type")) throw ConfigError("model.type is required");
  m.type = j.at("type").get<std::string>();
  json fields = j;
  fields.erase("type");
  if (m.type == "pomsgcn") {
    check_keys(fields, "model",
               {"num_stages", "stage1_layers", "refinement_layers", "feature_width", "kernel_size", "dilations",
                "dropout_rate", "graph_refinement"});
    m.pomsgcn = pomsgcn_config_from_json(fields);
  } else if (m.type == "transformer") {
    check_keys(fields, "model",
               {"model_dim", "num_heads", "num_layers", "feedforward_dim", "dropout_rate", "layer_norm_epsilon"});
    m.transformer = transformer_config_from_json(fields);
  } else {
    throw ConfigError("model.type must be 'pomsgcn' or 'transformer', got '" + m.type + "'");
  }
  return m;
}

LossConfig parse_loss(const json& j) {
  check_keys(j, "loss", {"lambda", "smoothing_mode", "truncation", "mse_final_stage_only"});
  LossConfig l;
  read(j, "lambda", l.lambda);
  if (j.contains("smoothing_mode")) l.smoothing_mode = parse_smoothing_mode(j.at("smoothing_mode").get<std::string>());
  read(j, "truncation", l.truncation);
  read(j, "mse_final_stage_only", l.mse_final_stage_only);
  l.validate();
  return l;
}

TrainConfig parse_train(const json& j) {
  check_keys(j, "train", {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "seed", "precision"});
  TrainConfig t;
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  read(j, "learning_rate", t.learning_rate);
  read(j, "beta1", t.beta1);
  read(j, "beta2", t.beta2);
  read(j, "epsilon", t.epsilon);
  read(j, "seed", t.seed);
  if (j.contains("precision")) t.precision = parse_precision(j.at("precision").get<std::string>());
  t.validate();
  return t;
}

FusionClassifierConfig parse_fusion(const json& j) {
  check_keys(j, "fusion", {"hidden_width", "bn_epsilon", "bn_momentum"});
  FusionClassifierConfig f;
  read(j, "hidden_width", f.hidden_width);
  read(j, "bn_epsilon", f.bn_epsilon);
  read(j, "bn_momentum", f.bn_momentum);
  if (f.hidden_width <= 0) throw ConfigError("fusion.hidden_width must be positive");
  if (!(f.bn_epsilon > 0)) throw ConfigError("fusion.bn_epsilon must be positive");
  if (!(f.bn_momentum > 0 && f.bn_momentum <= 1)) throw ConfigError("fusion.bn_momentum must lie in (0, 1]");
  return f;
}

EvaluationOptions parse_eval(const json& j) {
  check_keys(j, "eval", {"thresholds", "background_class", "averaging"});
  EvaluationOptions e;
  read(j, "thresholds", e.thresholds);
  if (j.contains("background_class") && !j.at("background_class").is_null())
    e.background_class = j.at("background_class").get<int>();
  if (j.contains("averaging")) e.averaging = parse_averaging(j.at("averaging").get<std::string>());
  if (e.thresholds.empty()) throw ConfigError("eval.thresholds must not be empty");
  for (double t : e.thresholds)
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("eval.thresholds entries must lie in (0, 1]");
  return e;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
  try {
    check_keys(j, "config",
               {"spec_version", "dataset", "graph", "model", "loss", "train", "fusion", "eval", "output_dir"});
    if (!j.contains("spec_version")) throw ConfigError("spec_version is required");
    if (j.at("spec_version").get<int>() != kConfigVersion)
      throw ConfigError("unsupported spec_version " + j.at("spec_version").dump());
    ExperimentConfig cfg;
    if (!j.contains("dataset")) throw ConfigError("dataset section is required");
    cfg.dataset = parse_dataset(j.at("dataset"));
    if (j.contains("graph")) cfg.graph = parse_graph(j.at("graph"));
    if (j.contains("model")) cfg.model = parse_model(j.at("model"));
    if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss"));
    if (j.contains("train")) cfg.train = parse_train(j.at("train"));
    if (j.contains("fusion")) cfg.fusion = parse_fusion(j.at("fusion"));
    if (j.contains("eval")) cfg.eval = parse_eval(j.at("eval"));
    if (j.contains("output_dir")) cfg.output_dir = fs::path(j.at("output_dir").get<std::string>());
    cfg.model.pomsgcn.adjacency = cfg.graph.strategy;
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config '" + file.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + file.string() + "' is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

Dataset materialize_dataset(const DatasetSection& section) {
  if (section.synthetic) {
    return section.synthetic_mode == SyntheticMode::complementary
               ? generate_complementary_synthetic(*section.synthetic)
               : generate_synthetic(*section.synthetic);
  }
  if (!section.path) throw ConfigError("dataset: one of path or synthetic is required");
  if (!fs::is_directory(*section.path)) throw FormatError("dataset path '" + section.path->string() + "' does not exist");
  return load_dataset(*section.path);
}

SkeletonGraph resolve_graph(const GraphSection& section, int num_joints) {
  if (!section.present || section.edges.empty()) {
    if (section.num_joints && *section.num_joints != num_joints)
      throw ConfigError("graph.num_joints " + std::to_string(*section.num_joints) + " != dataset joints " +
                        std::to_string(num_joints));
    return chain_graph(num_joints);
  }
  const int v = section.num_joints.value_or(num_joints);
  if (v != num_joints)
    throw ConfigError("graph.num_joints " + std::to_string(v) + " != dataset joints " + std::to_string(num_joints));
  return build_skeleton_graph(v, section.edges);
}

AnyModel build_configured_model(const ExperimentConfig& cfg, const DatasetMeta& meta) {
  const std::uint64_t seed = cfg.train.seed;
  const bool single = cfg.train.precision == Precision::single;
  if (cfg.model.type == "pomsgcn") {
    PomsgcnConfig m = cfg.model.pomsgcn;
    m.num_classes = meta.num_classes;
    m.input_channels = meta.channels;
    const SkeletonGraph graph = resolve_graph(cfg.graph, meta.num_joints);
    if (single) return AnyModel(std::make_unique<PomsgcnModel<float>>(m, graph, seed));
    return AnyModel(std::make_unique<PomsgcnModel<double>>(m, graph, seed));
  }
  TransformerConfig t = cfg.model.transformer;
  t.num_classes = meta.num_classes;
  t.input_size = meta.num_joints * meta.channels;
  if (single) return AnyModel(std::make_unique<TransformerModel<float>>(t, seed));
  return AnyModel(std::make_unique<TransformerModel<double>>(t, seed));
}

}  // namespace actseg
