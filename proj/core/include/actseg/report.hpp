#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "actseg/error.hpp"
#include "actseg/metrics.hpp"

namespace actseg {

struct RunRecord {
  std::string run_id;
  std::string dataset;
  std::string model;  // "pomsgcn" | "transformer" | "fusion"
  nlohmann::json config = nlohmann::json::object();
  std::optional<EvaluationReport> metrics;  // set once the run completed
  double wall_time_s = 0.0;
  std::string history_path;
};

/// 16 hex digits of the 64-bit FNV-1a hash of the compact config dump.
std::string compute_run_id(const nlohmann::json& config);

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);
RunRecord read_run_record(const std::filesystem::path& file);

/// Two decimals, half-up, decided on the shortest decimal representation of
/// `value` (so 0.125 gives "0.13" although its binary value lies below).
std::string format_fixed2(double value);

enum class ReportFormat { csv, markdown };
ReportFormat parse_report_format(const std::string& s);

/// Records sorted by (dataset, model). CSV has one row per record with
/// columns dataset,model,accuracy_pct,f1_at_50_pct; markdown lays out one
/// table with models as column pairs and a separate "Feature Fusion" table
/// for fusion runs. Throws EmptyInput for no records and ConfigError when a
/// record lacks metrics or F1 at 0.5.
std::string emit_report(std::span<const RunRecord> records, ReportFormat format);

struct ReportRow {
  std::string dataset;
  std::string model;
  double accuracy_pct = 0.0;
  double f1_at_50_pct = 0.0;
};

std::vector<ReportRow> parse_report_csv(const std::string& text);

}  // namespace actseg
