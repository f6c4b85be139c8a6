#include "actseg/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "actseg/pomsgcn.hpp"
#include "actseg/transformer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace actseg {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

template <typename S>
void save_checkpoint(const fs::path& dir, const ParameterSet<S>& params, const CheckpointInfo& info) {
  fs::create_directories(dir);
  json entries = json::array();
  for (const auto& p : params)
    entries.push_back({{"name", p.name}, {"shape", p.shape}, {"trainable", p.trainable}});
  json manifest = {{"format_version", 1},
                   {"dtype", dtype_name<S>()},
                   {"model_type", info.model_type},
                   {"config", info.config},
                   {"seed", info.seed},
                   {"epoch", info.epoch},
                   {"extra", info.extra},
                   {"parameters", entries}};
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint manifest in '" + dir.string() + "'");
    out << manifest.dump(2) << "\n";
  }
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw FormatError("cannot write checkpoint blob in '" + dir.string() + "'");
  for (const auto& p : params)
    blob.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(sizeof(S) * p.value.size()));
}

template <typename S>
void save_checkpoint(const fs::path& dir, const SegmentationModel<S>& model, std::uint64_t seed, int epoch,
                     json extra) {
  CheckpointInfo info;
  info.model_type = model.kind();
  info.config = model.config_json();
  info.seed = seed;
  info.epoch = epoch;
  info.extra = std::move(extra);
  save_checkpoint(dir, model.parameters(), info);
}

CheckpointManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw FormatError("no checkpoint manifest in '" + dir.string() + "'");
  CheckpointManifest m;
  try {
    json j = json::parse(in);
    m.format_version = j.at("format_version").get<int>();
    m.dtype = j.at("dtype").get<std::string>();
    m.info.model_type = j.at("model_type").get<std::string>();
    m.info.config = j.at("config");
    m.info.seed = j.at("seed").get<std::uint64_t>();
    m.info.epoch = j.at("epoch").get<int>();
    m.info.extra = j.value("extra", json::object());
    for (const auto& e : j.at("parameters"))
      m.parameters.push_back({e.at("name").get<std::string>(), e.at("shape").get<std::vector<std::int64_t>>(),
                              e.value("trainable", true)});
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest in '" + dir.string() + "': " + e.what());
  }
  if (m.dtype != "float32" && m.dtype != "float64") throw FormatError("checkpoint dtype '" + m.dtype + "' unsupported");
  return m;
}

template <typename S>
void load_parameters(const fs::path& dir, ParameterSet<S>& params) {
  const CheckpointManifest m = read_manifest(dir);
  if (m.dtype != dtype_name<S>())
    throw CompatibilityError("checkpoint holds " + m.dtype + " values, model expects " + dtype_name<S>());
  if (m.parameters.size() != params.size())
    throw CompatibilityError("checkpoint has " + std::to_string(m.parameters.size()) + " arrays, model has " +
                             std::to_string(params.size()));
  std::int64_t expected = 0;
  for (std::size_t i = 0; i < m.parameters.size(); ++i) {
    const auto& e = m.parameters[i];
    if (!params.find(e.name)) throw CompatibilityError("unknown parameter '" + e.name + "' in checkpoint");
    if (params.at(i).name != e.name) throw CompatibilityError("parameter order differs at '" + e.name + "'");
    if (params.at(i).shape != e.shape) throw CompatibilityError("shape mismatch for parameter '" + e.name + "'");
    std::int64_t n = 1;
    for (auto d : e.shape) n *= d;
    expected += n;
  }
  std::ifstream blob(dir / "params.bin", std::ios::binary | std::ios::ate);
  if (!blob) throw ChecksumError("missing params.bin in '" + dir.string() + "'");
  const auto bytes = static_cast<std::int64_t>(blob.tellg());
  if (bytes != expected * static_cast<std::int64_t>(sizeof(S)))
    throw ChecksumError("params.bin holds " + std::to_string(bytes) + " bytes, manifest implies " +
                        std::to_string(expected * static_cast<std::int64_t>(sizeof(S))));
  blob.seekg(0);
  for (auto& p : params)
    blob.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(sizeof(S) * p.value.size()));
  if (!blob) throw ChecksumError("short read from params.bin");
}

template <typename S>
std::unique_ptr<SegmentationModel<S>> build_model(const std::string& type, const json& config, std::uint64_t seed) {
  try {
    if (type == "pomsgcn") {
      const auto& g = config.at("graph");
      std::vector<Edge> edges;
      for (const auto& e : g.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
      const auto graph = build_skeleton_graph(g.at("num_joints").get<int>(), edges);
      return std::make_unique<PomsgcnModel<S>>(pomsgcn_config_from_json(config.at("pomsgcn")), graph, seed);
    }
    if (type == "transformer")
      return std::make_unique<TransformerModel<S>>(transformer_config_from_json(config.at("transformer")), seed);
  } catch (const json::exception& e) {
    throw CompatibilityError("model config for '" + type + "': " + e.what());
  }
  throw CompatibilityError("unknown model type '" + type + "'");
}

AnyModel load_model(const fs::path& dir) {
  const CheckpointManifest m = read_manifest(dir);
  if (m.dtype == "float64") {
    auto model = build_model<double>(m.info.model_type, m.info.config);
    load_parameters(dir, model->parameters());
    return AnyModel(std::move(model));
  }
  auto model = build_model<float>(m.info.model_type, m.info.config);
  load_parameters(dir, model->parameters());
  return AnyModel(std::move(model));
}

#define ACTSEG_INSTANTIATE(S)                                                                                     \
  template void save_checkpoint<S>(const fs::path&, const ParameterSet<S>&, const CheckpointInfo&);               \
  template void save_checkpoint<S>(const fs::path&, const SegmentationModel<S>&, std::uint64_t, int, json);      \
  template void load_parameters<S>(const fs::path&, ParameterSet<S>&);                                            \
  template std::unique_ptr<SegmentationModel<S>> build_model<S>(const std::string&, const json&, std::uint64_t);

ACTSEG_INSTANTIATE(float)
ACTSEG_INSTANTIATE(double)
#undef ACTSEG_INSTANTIATE

}  // namespace actseg
