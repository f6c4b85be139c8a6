#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "actseg_cli/cli.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = actseg::cli::run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& name, const nlohmann::json& j) {
  const auto p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

nlohmann::json tiny_config(const std::string& type) {
  auto j = nlohmann::json::parse(R"({
    "spec_version": 1,
    "dataset": {"name": "toy", "synthetic": {"num_classes": 3, "num_joints": 3, "channels": 2,
                "num_sequences": 5, "frames_per_sequence": 40, "min_segment_length": 8,
                "max_segment_length": 12, "seed": 4}},
    "train": {"epochs": 3, "batch_size": 2, "seed": 1}
  })");
  if (type == "pomsgcn")
    j["model"] = {{"type", "pomsgcn"}, {"num_stages", 2}, {"stage1_layers", 2}, {"refinement_layers", 2},
                  {"feature_width", 8}};
  else
    j["model"] = {{"type", "transformer"}, {"model_dim", 8}, {"num_heads", 2}, {"num_layers", 1},
                  {"feedforward_dim", 8}};
  return j;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("usage errors exit 1 with a kind line") {
  auto r = run({"frobnicate"});
  CHECK(r.code == 1);
  CHECK(r.err.starts_with("error: kind=UsageError"));
  r = run({"train"});
  CHECK(r.code == 1);
  r = run({"evaluate", "--pred", "x"});
  CHECK(r.code == 1);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("domain errors exit 1") {
  TempDir tmp;
  auto j = tiny_config("transformer");
  j["dataset"] = {{"path", (tmp.path() / "missing").string()}};
  const auto cfg = write_config(tmp.path(), "c.json", j);
  const auto r = run({"train", "--config", cfg.string(), "--out", (tmp.path() / "run").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("kind=FormatError") != std::string::npos);

  const auto e = run({"evaluate", "--pred", (tmp.path() / "p").string(), "--gt", (tmp.path() / "g").string()});
  CHECK(e.code == 1);
}

TEST_CASE("synth, train, evaluate, fuse and report end to end") {
  TempDir tmp;
  const auto base = tmp.path();
  auto data_cfg = tiny_config("transformer");
  const auto synth_cfg = write_config(base, "synth.json", data_cfg);
  REQUIRE(run({"synth-data", "--config", synth_cfg.string(), "--out", (base / "data").string()}).code == 0);
  CHECK(fs::exists(base / "data"));

  auto from_disk = [&](const std::string& type) {
    auto j = tiny_config(type);
    j["dataset"] = {{"name", "toy"}, {"path", (base / "data").string()}};
    return write_config(base, type + ".json", j);
  };
  const auto gcn_cfg = from_disk("pomsgcn");
  const auto tr_cfg = from_disk("transformer");
  REQUIRE(run({"train", "--config", gcn_cfg.string(), "--out", (base / "gcn").string()}).code == 0);
  const auto t = run({"train", "--config", tr_cfg.string(), "--out", (base / "tr").string()});
  REQUIRE(t.code == 0);
  for (const char* f : {"config.json", "metrics.json", "history.csv", "run.json", "checkpoint/manifest.json"})
    CHECK(fs::exists(base / "tr" / f));
  CHECK(slurp(base / "tr" / "config.json") == slurp(tr_cfg));

  // Re-scoring saved predictions reproduces metrics.json byte for byte.
  const auto ev = run({"evaluate", "--pred", (base / "tr" / "predictions").string(), "--gt",
                       (base / "tr" / "ground_truth").string(), "--out", (base / "again.json").string()});
  REQUIRE(ev.code == 0);
  CHECK(ev.out == slurp(base / "again.json"));
  CHECK(slurp(base / "again.json") == slurp(base / "tr" / "metrics.json"));

  const auto three = run({"evaluate", "--pred", (base / "tr" / "predictions").string(), "--gt",
                          (base / "tr" / "ground_truth").string(), "--thresholds", "0.1,0.25,0.5"});
  REQUIRE(three.code == 0);
  CHECK(nlohmann::json::parse(three.out)["f1"].size() == 3);
  CHECK(run({"evaluate", "--pred", (base / "tr" / "predictions").string(), "--gt",
             (base / "tr" / "ground_truth").string(), "--thresholds", "0.5,1.5"})
            .code == 1);

  // Training twice gives the same bytes.
  REQUIRE(run({"train", "--config", tr_cfg.string(), "--out", (base / "tr2").string()}).code == 0);
  CHECK(slurp(base / "tr2" / "metrics.json") == slurp(base / "tr" / "metrics.json"));
  CHECK(slurp(base / "tr2" / "checkpoint" / "params.bin") == slurp(base / "tr" / "checkpoint" / "params.bin"));

  const auto ex = run({"extract-features", "--pomsgcn", (base / "gcn" / "checkpoint").string(), "--transformer",
                       (base / "tr" / "checkpoint").string(), "--data", (base / "data").string(), "--out",
                       (base / "fused").string()});
  REQUIRE(ex.code == 0);
  CHECK(fs::exists(base / "fused" / "provenance.json"));
  REQUIRE(run({"fuse-train", "--config", tr_cfg.string(), "--features", (base / "fused").string(), "--out",
               (base / "fusion").string()})
              .code == 0);

  const auto rep = run({"report", "--runs", (base / "gcn").string(), (base / "tr").string(),
                        (base / "fusion").string(), "--format", "csv"});
  REQUIRE(rep.code == 0);
  CHECK(rep.out.starts_with("dataset,model,accuracy_pct,f1_at_50_pct\n"));
  CHECK(rep.out.find("toy,fusion,") != std::string::npos);
  const auto md = run({"report", "--runs", (base / "gcn").string(), (base / "tr").string(), (base / "fusion").string(), "--format", "markdown"});
  REQUIRE(md.code == 0);
  CHECK(md.out.find("Feature Fusion") != std::string::npos);
}

TEST_SUITE_END();
