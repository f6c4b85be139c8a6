#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "actseg/model.hpp"

namespace actseg {

struct CheckpointInfo {
  std::string model_type;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  int epoch = 0;
  nlohmann::json extra = nlohmann::json::object();
};

struct CheckpointEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  bool trainable = true;
};

struct CheckpointManifest {
  int format_version = 1;
  std::string dtype;  // "float32" | "float64"
  CheckpointInfo info;
  std::vector<CheckpointEntry> parameters;
};

template <typename S>
constexpr const char* dtype_name() {
  return sizeof(S) == 8 ? "float64" : "float32";
}

/// Writes `dir`/manifest.json and `dir`/params.bin (little-endian IEEE-754
/// arrays concatenated in manifest order).
template <typename S>
void save_checkpoint(const std::filesystem::path& dir, const ParameterSet<S>& params, const CheckpointInfo& info);

template <typename S>
void save_checkpoint(const std::filesystem::path& dir, const SegmentationModel<S>& model, std::uint64_t seed,
                     int epoch, nlohmann::json extra = nlohmann::json::object());

CheckpointManifest read_manifest(const std::filesystem::path& dir);

/// Loads values into an existing, identically shaped set. Throws
/// CompatibilityError on dtype, name or shape mismatch and ChecksumError
/// when params.bin does not hold exactly the manifest's element count.
template <typename S>
void load_parameters(const std::filesystem::path& dir, ParameterSet<S>& params);

/// Builds a model of `type` from its config_json() echo.
template <typename S>
std::unique_ptr<SegmentationModel<S>> build_model(const std::string& type, const nlohmann::json& config,
                                                  std::uint64_t seed = 0);

/// Rebuilds the model recorded in the manifest, in its stored precision.
AnyModel load_model(const std::filesystem::path& dir);

}  // namespace actseg
