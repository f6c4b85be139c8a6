#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "actseg/data.hpp"
#include "actseg/fusion.hpp"
#include "actseg/graph.hpp"
#include "actseg/losses.hpp"
#include "actseg/metrics.hpp"
#include "actseg/pomsgcn.hpp"
#include "actseg/trainer.hpp"
#include "actseg/transformer.hpp"

namespace actseg {

inline constexpr int kConfigVersion = 1;

enum class SyntheticMode { standard, complementary };

struct DatasetSection {
  std::string name = "synth";
  std::optional<std::filesystem::path> path;
  std::optional<SyntheticConfig> synthetic;
  SyntheticMode synthetic_mode = SyntheticMode::standard;
  int decimation = 1;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  std::vector<int> zero_channels;

  InputView input_view() const { return {decimation, zero_channels}; }
};

struct GraphSection {
  std::optional<int> num_joints;
  std::vector<Edge> edges;
  AdjacencyStrategy strategy = AdjacencyStrategy::uniform;
  bool present = false;
};

struct ModelSection {
  std::string type = "pomsgcn";
  PomsgcnConfig pomsgcn;
  TransformerConfig transformer;
};

struct ExperimentConfig {
  DatasetSection dataset;
  GraphSection graph;
  ModelSection model;
  LossConfig loss;
  TrainConfig train;
  FusionClassifierConfig fusion;  // widths filled in from the fused features
  EvaluationOptions eval;
  std::optional<std::filesystem::path> output_dir;
};

/// Strict parse: unknown keys, a wrong spec_version or an unknown model type
/// raise ConfigError.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);

/// Loads the dataset the config names (or generates the synthetic one).
/// Throws ConfigError when neither or both of path/synthetic are given and
/// FormatError when the path does not exist.
Dataset materialize_dataset(const DatasetSection& section);

/// The graph section, or a chain over `num_joints` when the section is
/// absent.
SkeletonGraph resolve_graph(const GraphSection& section, int num_joints);

/// Builds the configured model with dimensions taken from `meta`.
AnyModel build_configured_model(const ExperimentConfig& cfg, const DatasetMeta& meta);

}  // namespace actseg
