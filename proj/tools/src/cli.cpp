#include "actseg_cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "actseg/checkpoint.hpp"
#include "actseg/config.hpp"
#include "actseg/fusion.hpp"
#include "actseg/metrics.hpp"
#include "actseg/report.hpp"
#include "actseg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace actseg::cli {

namespace {

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("UsageError", message) {}
};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out += c;
    }
  }
  return out;
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + file.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + file.string() + "'");
  out << text;
}

std::string metrics_text(const EvaluationReport& report) { return json(report).dump(2) + "\n"; }

struct LoadedConfig {
  ExperimentConfig cfg;
  std::string text;  // exact bytes, echoed into the run directory
  json parsed;
};

LoadedConfig load_config(const fs::path& file) {
  LoadedConfig c;
  c.text = read_text(file);
  try {
    c.parsed = json::parse(c.text);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + file.string() + "' is not valid JSON: " + e.what());
  }
  c.cfg = parse_experiment_config(c.parsed);
  return c;
}

fs::path resolve_out(const std::string& flag, const ExperimentConfig& cfg) {
  if (!flag.empty()) return flag;
  if (cfg.output_dir) return *cfg.output_dir;
  throw ConfigError("no output directory: pass --out or set output_dir");
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size()) throw ConfigError("bad threshold '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("no thresholds given");
  return out;
}

/// Reads <dir>/<id>/labels.csv for every subdirectory, keyed by id.
std::map<std::string, std::vector<int>> read_label_tree(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("'" + dir.string() + "' is not a directory");
  std::map<std::string, std::vector<int>> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "labels.csv"))
      out[entry.path().filename().string()] = read_labels_csv(entry.path() / "labels.csv");
  if (out.empty()) throw EmptyInput("no <id>/labels.csv entries under '" + dir.string() + "'");
  return out;
}

struct Prediction {
  std::string sample_id;
  std::vector<int> predicted;
  std::vector<int> truth;
};

/// Writes predictions/ and ground_truth/ trees and returns the metrics,
/// evaluated in sample-id order so `evaluate` reproduces them exactly.
EvaluationReport write_predictions(const fs::path& out, std::vector<Prediction> preds, const EvaluationOptions& opts) {
  std::sort(preds.begin(), preds.end(),
            [](const Prediction& a, const Prediction& b) { return a.sample_id < b.sample_id; });
  std::vector<std::vector<int>> p, g;
  for (const auto& pr : preds) {
    fs::create_directories(out / "predictions" / pr.sample_id);
    fs::create_directories(out / "ground_truth" / pr.sample_id);
    write_labels_csv(out / "predictions" / pr.sample_id / "labels.csv", pr.predicted);
    write_labels_csv(out / "ground_truth" / pr.sample_id / "labels.csv", pr.truth);
    p.push_back(pr.predicted);
    g.push_back(pr.truth);
  }
  return evaluate(p, g, opts);
}

void finish_run(const fs::path& out, const LoadedConfig& config, const std::string& model, const TrainHistory& history,
                const EvaluationReport& report, double wall_time_s, std::ostream& log) {
  write_text(out / "history.csv", history_csv(history));
  write_text(out / "metrics.json", metrics_text(report));
  RunRecord rec;
  rec.run_id = compute_run_id(config.parsed);
  rec.dataset = config.cfg.dataset.name;
  rec.model = model;
  rec.config = config.parsed;
  rec.metrics = report;
  rec.wall_time_s = wall_time_s;
  rec.history_path = "history.csv";
  write_text(out / "run.json", to_json(rec).dump(2) + "\n");
  log << "run " << rec.run_id << ": accuracy " << format_fixed2(report.accuracy_pct) << "%";
  for (const auto& s : report.f1) log << ", F1@" << s.threshold << " " << format_fixed2(s.f1_pct) << "%";
  log << "\n";
}

std::vector<SequenceSample> apply_view(const std::vector<SequenceSample>& samples, const InputView& view) {
  std::vector<SequenceSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(view.apply(s));
  return out;
}

EpochCallback progress(bool verbose, std::ostream& log) {
  if (!verbose) return {};
  return [&log](const EpochRecord& r) {
    log << "epoch " << r.epoch << " loss " << r.loss << " train_acc " << r.train_accuracy << "\n";
  };
}

// ---------------------------------------------------------------------------

void cmd_synth_data(const std::string& config_path, const std::string& out_flag, std::ostream& out) {
  const LoadedConfig config = load_config(config_path);
  if (!config.cfg.dataset.synthetic) throw ConfigError("synth-data needs a dataset.synthetic section");
  const fs::path dir = resolve_out(out_flag, config.cfg);
  const Dataset data = materialize_dataset(config.cfg.dataset);
  write_dataset(dir, data);
  out << "wrote " << data.samples.size() << " sequences to " << dir.string() << "\n";
}

template <typename S>
TrainHistory train_typed(AnyModel& model, const std::vector<SequenceSample>& train, const ExperimentConfig& cfg,
                         const EpochCallback& cb) {
  return train_model(*model.get<S>(), train, cfg.loss, cfg.train, cb);
}

void cmd_train(const std::string& config_path, const std::string& out_flag, bool verbose, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const LoadedConfig config = load_config(config_path);
  const ExperimentConfig& cfg = config.cfg;
  const fs::path dir = resolve_out(out_flag, cfg);
  const Dataset data = materialize_dataset(cfg.dataset);
  const InputView view = cfg.dataset.input_view();
  auto [train_raw, test_raw] = split_dataset(data.samples, cfg.dataset.train_fraction, cfg.dataset.split_seed);
  const auto train = apply_view(train_raw, view);
  const auto test = apply_view(test_raw, view);

  AnyModel model = build_configured_model(cfg, data.meta);
  const TrainHistory history = model.is_double() ? train_typed<double>(model, train, cfg, progress(verbose, out))
                                                 : train_typed<float>(model, train, cfg, progress(verbose, out));

  fs::create_directories(dir);
  write_text(dir / "config.json", config.text);
  json split = {{"train", json::array()}, {"test", json::array()}};
  for (const auto& s : train) split["train"].push_back(s.sample_id);
  for (const auto& s : test) split["test"].push_back(s.sample_id);
  const json extra = {{"input_view", to_json(view)}, {"dataset", cfg.dataset.name}, {"split", split}};
  if (model.is_double())
    save_checkpoint(dir / "checkpoint", *model.get<double>(), cfg.train.seed, cfg.train.epochs, extra);
  else
    save_checkpoint(dir / "checkpoint", *model.get<float>(), cfg.train.seed, cfg.train.epochs, extra);

  std::vector<Prediction> preds;
  for (const auto& s : test) preds.push_back({s.sample_id, model.predict(s.features), s.labels});
  const EvaluationReport report = write_predictions(dir, std::move(preds), cfg.eval);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  finish_run(dir, config, cfg.model.type, history, report, wall, out);
}

void cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir, const std::string& thresholds,
                  std::optional<int> background, const std::string& averaging, const std::string& out_file,
                  std::ostream& out) {
  EvaluationOptions opts;
  opts.thresholds = parse_thresholds(thresholds);
  opts.background_class = background;
  opts.averaging = parse_averaging(averaging);
  const auto pred = read_label_tree(pred_dir);
  const auto gt = read_label_tree(gt_dir);
  std::vector<std::vector<int>> p, g;
  for (const auto& [id, labels] : gt) {
    const auto it = pred.find(id);
    if (it == pred.end()) throw FormatError("no prediction for sample '" + id + "'");
    p.push_back(it->second);
    g.push_back(labels);
  }
  for (const auto& [id, labels] : pred)
    if (!gt.count(id)) throw FormatError("prediction for unknown sample '" + id + "'");
  const std::string text = metrics_text(evaluate(p, g, opts));
  if (!out_file.empty()) write_text(out_file, text);
  out << text;
}

void cmd_extract(const std::string& first, const std::string& second, const std::string& data_dir,
                 const std::string& config_path, const std::string& out_flag, std::ostream& out) {
  if (data_dir.empty() == config_path.empty()) throw ConfigError("give exactly one of --data or --config");
  Dataset data;
  std::optional<ExperimentConfig> cfg;
  if (!data_dir.empty()) {
    if (!fs::is_directory(data_dir)) throw FormatError("dataset path '" + data_dir + "' does not exist");
    data = load_dataset(data_dir);
  } else {
    cfg = load_config(config_path).cfg;
    data = materialize_dataset(cfg->dataset);
  }
  fs::path dir = out_flag;
  if (dir.empty()) {
    if (!cfg || !cfg->output_dir) throw ConfigError("no output directory: pass --out");
    dir = *cfg->output_dir;
  }
  const FusedFeatureSet set = extract_fused_dataset(first, second, data.samples);
  write_fused_dataset(dir, set);
  out << "wrote " << set.samples.size() << " fused sequences of width " << set.width() << " to " << dir.string()
      << "\n";
}

void cmd_fuse_train(const std::string& config_path, const std::string& features_dir, const std::string& out_flag,
                    bool verbose, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const LoadedConfig config = load_config(config_path);
  const ExperimentConfig& cfg = config.cfg;
  const fs::path dir = resolve_out(out_flag, cfg);
  if (!fs::is_directory(features_dir)) throw FormatError("features path '" + features_dir + "' does not exist");
  const FusedFeatureSet all = read_fused_dataset(features_dir);
  const auto [train_idx, test_idx] = split_indices(all.samples.size(), cfg.dataset.train_fraction, cfg.dataset.split_seed);
  FusedFeatureSet train;
  train.num_classes = all.num_classes;
  train.provenance = all.provenance;
  for (auto i : train_idx) train.samples.push_back(all.samples[i]);

  FusionClassifierConfig fc = cfg.fusion;
  fc.input_width = all.width();
  fc.num_classes = all.num_classes;
  FusionClassifier clf(fc, cfg.train.seed);
  const TrainHistory history = train_fusion(clf, train, cfg.train, progress(verbose, out));

  fs::create_directories(dir);
  write_text(dir / "config.json", config.text);
  save_fusion_checkpoint(dir / "checkpoint", clf, cfg.train.seed, cfg.train.epochs,
                         {{"provenance", all.provenance}, {"dataset", cfg.dataset.name}});
  std::vector<Prediction> preds;
  for (auto i : test_idx) {
    const auto& s = all.samples[i];
    preds.push_back({s.sample_id, clf.predict(s.features), s.labels});
  }
  const EvaluationReport report = write_predictions(dir, std::move(preds), cfg.eval);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  finish_run(dir, config, "fusion", history, report, wall, out);
}

void cmd_report(const std::vector<std::string>& runs, const std::string& format, const std::string& out_file,
                std::ostream& out) {
  const ReportFormat fmt = parse_report_format(format);
  std::vector<RunRecord> records;
  for (const auto& r : runs) {
    const fs::path p = fs::is_directory(r) ? fs::path(r) / "run.json" : fs::path(r);
    records.push_back(read_run_record(p));
  }
  const std::string text = emit_report(records, fmt);
  if (!out_file.empty()) write_text(out_file, text);
  out << text;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal action segmentation toolkit", "actseg"};
  app.require_subcommand(1);
  app.fallthrough(false);

  std::string config_path, out_dir, pred_dir, gt_dir, thresholds = "0.5", averaging = "micro", out_file;
  std::string first_ckpt, second_ckpt, data_dir, features_dir, format = "csv";
  std::optional<int> background;
  std::vector<std::string> runs;
  bool verbose = false;

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic dataset on disk");
  synth->add_option("--config", config_path, "Experiment config (JSON)")->required();
  synth->add_option("--out", out_dir, "Output dataset directory");

  auto* train = app.add_subcommand("train", "Train and evaluate one model");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--out", out_dir, "Run directory");
  train->add_flag("--verbose", verbose, "Print per-epoch progress");

  auto* eval = app.add_subcommand("evaluate", "Score saved predictions against ground truth");
  eval->add_option("--pred", pred_dir, "Directory of <id>/labels.csv predictions")->required();
  eval->add_option("--gt", gt_dir, "Directory of <id>/labels.csv ground truth")->required();
  eval->add_option("--thresholds", thresholds, "Comma-separated IoU thresholds");
  eval->add_option("--background-class", background, "Class id excluded from segment scoring");
  eval->add_option("--averaging", averaging, "micro or macro");
  eval->add_option("--out", out_file, "Also write the report to this file");

  auto* extract = app.add_subcommand("extract-features", "Concatenate frame features of two trained models");
  extract->add_option("--pomsgcn", first_ckpt, "First checkpoint (columns first)")->required();
  extract->add_option("--transformer", second_ckpt, "Second checkpoint")->required();
  extract->add_option("--data", data_dir, "Dataset directory");
  extract->add_option("--config", config_path, "Config whose dataset section to use instead of --data");
  extract->add_option("--out", out_dir, "Fused feature directory");

  auto* fuse = app.add_subcommand("fuse-train", "Train and evaluate the fusion classifier");
  fuse->add_option("--config", config_path, "Experiment config (JSON)")->required();
  fuse->add_option("--features", features_dir, "Fused feature directory")->required();
  fuse->add_option("--out", out_dir, "Run directory");
  fuse->add_flag("--verbose", verbose, "Print per-epoch progress");

  auto* report = app.add_subcommand("report", "Tabulate finished runs");
  report->add_option("--runs", runs, "Run directories or run.json files")->required()->expected(1, -1);
  report->add_option("--format", format, "csv or markdown");
  report->add_option("--out", out_file, "Also write the table to this file");

  try {
    if (!args.empty() && !args.front().starts_with("-")) {
      const auto subs = app.get_subcommands([](CLI::App*) { return true; });
      const bool known = std::any_of(subs.begin(), subs.end(), [&](CLI::App* s) { return s->get_name() == args.front(); });
      if (!known) throw UsageError("unknown subcommand '" + args.front() + "'\n" + app.help());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::ParseError& e) {
      std::string help;
      for (auto* sub : app.get_subcommands()) help = sub->help();
      throw UsageError(e.what() + ("\n" + (help.empty() ? app.help() : help)));
    }

    if (synth->parsed()) cmd_synth_data(config_path, out_dir, out);
    else if (train->parsed()) cmd_train(config_path, out_dir, verbose, out);
    else if (eval->parsed()) cmd_evaluate(pred_dir, gt_dir, thresholds, background, averaging, out_file, out);
    else if (extract->parsed()) cmd_extract(first_ckpt, second_ckpt, data_dir, config_path, out_dir, out);
    else if (fuse->parsed()) cmd_fuse_train(config_path, features_dir, out_dir, verbose, out);
    else if (report->parsed()) cmd_report(runs, format, out_file, out);
    return 0;
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    const auto nl = msg.find('\n');
    err << "error: kind=" << e.kind() << " message=\"" << escape(msg.substr(0, nl)) << "\"\n";
    if (nl != std::string::npos) err << msg.substr(nl + 1);
    return 1;
  } catch (const NonFiniteGradient& e) {
    err << "error: kind=" << e.kind() << " message=\"" << escape(e.what()) << "\"\n";
    return 2;
  } catch (const Error& e) {
    err << "error: kind=" << e.kind() << " message=\"" << escape(e.what()) << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: kind=Internal message=\"" << escape(e.what()) << "\"\n";
    return 2;
  }
}

}  // namespace actseg::cli
