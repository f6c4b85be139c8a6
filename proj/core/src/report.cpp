#include "actseg/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace fs = std::filesystem;
using nlohmann::json;

namespace actseg {

std::string compute_run_id(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xF];
  return out;
}

json to_json(const RunRecord& r) {
  json j = {{"run_id", r.run_id},           {"dataset", r.dataset},         {"model", r.model},
            {"config", r.config},           {"wall_time_s", r.wall_time_s}, {"history_path", r.history_path}};
  if (r.metrics) j["metrics"] = *r.metrics;
  return j;
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.config = j.value("config", json::object());
    r.wall_time_s = j.value("wall_time_s", 0.0);
    r.history_path = j.value("history_path", std::string());
    if (j.contains("metrics")) r.metrics = j.at("metrics").get<EvaluationReport>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("run record: ") + e.what());
  }
  return r;
}

RunRecord read_run_record(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open run record '" + file.string() + "'");
  try {
    return run_record_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError("run record '" + file.string() + "': " + e.what());
  }
}

std::string format_fixed2(double value) {
  if (!std::isfinite(value)) throw RangeError("cannot format a non-finite value");
  char buf[512];
  const auto res = std::to_chars(buf, buf + sizeof buf, std::abs(value), std::chars_format::fixed);
  std::string s(buf, res.ptr);
  const auto dot = s.find('.');
  std::string integral = dot == std::string::npos ? s : s.substr(0, dot);
  std::string frac = dot == std::string::npos ? "" : s.substr(dot + 1);
  const bool round_up = frac.size() > 2 && frac[2] >= '5';
  frac.resize(2, '0');
  std::string digits = integral + frac;
  if (round_up) {
    std::size_t i = digits.size();
    while (i > 0) {
      --i;
      if (digits[i] == '9') {
        digits[i] = '0';
        if (i == 0) digits.insert(digits.begin(), '1');
      } else {
        ++digits[i];
        break;
      }
    }
  }
  std::string out = digits.substr(0, digits.size() - 2) + "." + digits.substr(digits.size() - 2);
  if (value < 0 && out.find_first_not_of("0.") != std::string::npos) out.insert(out.begin(), '-');
  return out;
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  throw ConfigError("unknown report format '" + s + "'");
}

namespace {

struct Cell {
  std::string accuracy;
  std::string f1;
};

std::string display_name(const std::string& model) {
  if (model == "pomsgcn") return "PO-MS-GCN";
  if (model == "transformer") return "Transformer";
  if (model == "fusion") return "Feature Fusion";
  return model;
}

int model_rank(const std::string& model) {
  if (model == "pomsgcn") return 0;
  if (model == "transformer") return 1;
  return 2;
}

void markdown_table(std::ostringstream& out, const std::string& corner, const std::vector<std::string>& models,
                    const std::map<std::string, std::map<std::string, Cell>>& grid) {
  out << "| " << corner << " |";
  for (const auto& m : models) out << " " << display_name(m) << " | |";
  out << "\n|---|";
  for (std::size_t i = 0; i < models.size(); ++i) out << "---|---|";
  out << "\n| **Dataset** |";
  for (std::size_t i = 0; i < models.size(); ++i) out << " **Accuracy%** | **F1-score%** |";
  out << "\n";
  for (const auto& [dataset, row] : grid) {
    bool any = false;
    for (const auto& m : models) any = any || row.count(m);
    if (!any) continue;
    out << "| " << dataset << " |";
    for (const auto& m : models) {
      const auto it = row.find(m);
      if (it == row.end())
        out << " - | - |";
      else
        out << " " << it->second.accuracy << " | " << it->second.f1 << " |";
    }
    out << "\n";
  }
}

}  // namespace

std::string emit_report(std::span<const RunRecord> records, ReportFormat format) {
  if (records.empty()) throw EmptyInput("no run records to report");
  struct Row {
    std::string dataset, model, accuracy, f1;
  };
  std::vector<Row> rows;
  for (const auto& r : records) {
    if (!r.metrics) throw ConfigError("run '" + r.run_id + "' has no metrics");
    const auto f1 = r.metrics->f1_at(0.5);
    if (!f1) throw ConfigError("run '" + r.run_id + "' was not evaluated at IoU 0.5");
    rows.push_back({r.dataset, r.model, format_fixed2(r.metrics->accuracy_pct), format_fixed2(*f1)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.dataset, a.model) < std::tie(b.dataset, b.model);
  });

  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << "dataset,model,accuracy_pct,f1_at_50_pct\n";
    for (const auto& r : rows) out << r.dataset << "," << r.model << "," << r.accuracy << "," << r.f1 << "\n";
    return out.str();
  }

  std::map<std::string, std::map<std::string, Cell>> grid;
  std::vector<std::string> models;
  bool has_fusion = false;
  for (const auto& r : rows) {
    grid[r.dataset].emplace(r.model, Cell{r.accuracy, r.f1});  // first record per cell wins
    if (r.model == "fusion")
      has_fusion = true;
    else if (std::find(models.begin(), models.end(), r.model) == models.end())
      models.push_back(r.model);
  }
  std::stable_sort(models.begin(), models.end(),
                   [](const std::string& a, const std::string& b) { return model_rank(a) < model_rank(b); });
  if (!models.empty()) markdown_table(out, "Model", models, grid);
  if (has_fusion) {
    if (!models.empty()) out << "\n";
    markdown_table(out, "Technique", {"fusion"}, grid);
  }
  return out.str();
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "dataset,model,accuracy_pct,f1_at_50_pct")
    throw FormatError("report csv: unexpected header");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 4) throw FormatError("report csv: expected 4 fields in '" + line + "'");
    ReportRow r{fields[0], fields[1], 0.0, 0.0};
    for (auto [src, dst] : {std::pair{&fields[2], &r.accuracy_pct}, std::pair{&fields[3], &r.f1_at_50_pct}}) {
      const auto res = std::from_chars(src->data(), src->data() + src->size(), *dst);
      if (res.ec != std::errc() || res.ptr != src->data() + src->size())
        throw FormatError("report csv: bad number '" + *src + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace actseg
