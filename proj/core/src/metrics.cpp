#include "actseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "actseg/error.hpp"

namespace actseg {

std::vector<Segment> frames_to_segments(std::span<const int> labels) {
  std::vector<Segment> out;
  std::int64_t start = 0;
  const auto n = static_cast<std::int64_t>(labels.size());
  for (std::int64_t t = 1; t <= n; ++t) {
    if (t == n || labels[static_cast<std::size_t>(t)] != labels[static_cast<std::size_t>(start)]) {
      out.push_back({labels[static_cast<std::size_t>(start)], start, t});
      start = t;
    }
  }
  return out;
}

double interval_iou(const Segment& a, const Segment& b) {
  const std::int64_t inter = std::max<std::int64_t>(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const std::int64_t uni = a.length() + b.length() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

void check_segmentation(std::span<const Segment> segs, const char* which) {
  std::int64_t prev_end = std::numeric_limits<std::int64_t>::min();
  for (const auto& s : segs) {
    if (s.start >= s.end || s.class_id < 0)
      throw InvalidSegmentation(std::string(which) + " segment is empty or has a negative class");
    if (s.start < prev_end) throw InvalidSegmentation(std::string(which) + " segments overlap or are unordered");
    prev_end = s.end;
  }
}

std::vector<Segment> without_class(std::vector<Segment> segs, std::optional<int> background) {
  if (!background) return segs;
  std::erase_if(segs, [&](const Segment& s) { return s.class_id == *background; });
  return segs;
}

}  // namespace

MatchCounts match_segments(std::span<const Segment> pred, std::span<const Segment> gt, double threshold) {
  check_segmentation(pred, "predicted");
  check_segmentation(gt, "ground-truth");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("IoU threshold must lie in (0,1]");
  std::vector<bool> used(gt.size(), false);
  MatchCounts counts;
  for (const auto& p : pred) {
    std::ptrdiff_t best = -1;
    double best_iou = -1.0;
    // gt is in temporal order, so strict '>' keeps the earliest start on ties.
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g] || gt[g].class_id != p.class_id) continue;
      const double iou = interval_iou(p, gt[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (best >= 0 && best_iou >= threshold) {
      ++counts.tp;
      used[static_cast<std::size_t>(best)] = true;
    } else {
      ++counts.fp;
    }
  }
  counts.fn = static_cast<std::int64_t>(std::count(used.begin(), used.end(), false));
  return counts;
}

double f1_from_counts(const MatchCounts& c) {
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) return 1.0;
  const double tp = static_cast<double>(c.tp);
  return tp / (0.5 * static_cast<double>(c.fn + c.fp) + tp);
}

MatchCounts segment_counts(std::span<const int> pred_labels, std::span<const int> gt_labels, double threshold,
                           std::optional<int> background_class) {
  if (pred_labels.size() != gt_labels.size())
    throw ShapeError("prediction has " + std::to_string(pred_labels.size()) + " frames, ground truth " +
                     std::to_string(gt_labels.size()));
  const auto pred = without_class(frames_to_segments(pred_labels), background_class);
  const auto gt = without_class(frames_to_segments(gt_labels), background_class);
  return match_segments(pred, gt, threshold);
}

double segment_f1(std::span<const int> pred_labels, std::span<const int> gt_labels, double threshold,
                  std::optional<int> background_class) {
  return f1_from_counts(segment_counts(pred_labels, gt_labels, threshold, background_class));
}

double frame_accuracy(std::span<const int> pred_labels, std::span<const int> gt_labels) {
  if (pred_labels.size() != gt_labels.size()) throw ShapeError("frame accuracy over streams of unequal length");
  if (gt_labels.empty()) throw EmptyInput("frame accuracy over zero frames");
  std::size_t correct = 0;
  for (std::size_t t = 0; t < gt_labels.size(); ++t) correct += pred_labels[t] == gt_labels[t];
  return static_cast<double>(correct) / static_cast<double>(gt_labels.size());
}

std::string to_string(Averaging a) { return a == Averaging::micro ? "micro" : "macro"; }

Averaging parse_averaging(const std::string& s) {
  if (s == "micro") return Averaging::micro;
  if (s == "macro") return Averaging::macro;
  throw ConfigError("unknown averaging mode '" + s + "'");
}

std::optional<double> EvaluationReport::f1_at(double threshold) const {
  for (const auto& s : f1)
    if (std::abs(s.threshold - threshold) < 1e-12) return s.f1_pct;
  return std::nullopt;
}

EvaluationReport evaluate(const std::vector<std::vector<int>>& pred_labels,
                          const std::vector<std::vector<int>>& gt_labels, const EvaluationOptions& options) {
  if (pred_labels.size() != gt_labels.size())
    throw ShapeError(std::to_string(pred_labels.size()) + " predicted sequences vs " +
                     std::to_string(gt_labels.size()) + " ground-truth sequences");
  if (gt_labels.empty()) throw EmptyInput("evaluation over zero sequences");
  if (options.thresholds.empty()) throw ConfigError("at least one IoU threshold is required");

  EvaluationReport report;
  report.averaging = options.averaging;
  report.num_samples = static_cast<std::int64_t>(gt_labels.size());

  std::int64_t correct = 0;
  double accuracy_sum = 0.0;
  for (std::size_t i = 0; i < gt_labels.size(); ++i) {
    const auto& p = pred_labels[i];
    const auto& g = gt_labels[i];
    if (p.size() != g.size())
      throw ShapeError("sequence " + std::to_string(i) + ": prediction length " + std::to_string(p.size()) +
                       " != ground truth length " + std::to_string(g.size()));
    std::int64_t c = 0;
    for (std::size_t t = 0; t < g.size(); ++t) c += p[t] == g[t];
    correct += c;
    report.num_frames += static_cast<std::int64_t>(g.size());
    if (!g.empty()) accuracy_sum += static_cast<double>(c) / static_cast<double>(g.size());
    for (const auto& s : without_class(frames_to_segments(g), options.background_class))
      ++report.per_class_segments[s.class_id].ground_truth;
    for (const auto& s : without_class(frames_to_segments(p), options.background_class))
      ++report.per_class_segments[s.class_id].predicted;
  }
  if (report.num_frames == 0) throw EmptyInput("evaluation over zero frames");
  report.accuracy_pct = options.averaging == Averaging::micro
                            ? 100.0 * static_cast<double>(correct) / static_cast<double>(report.num_frames)
                            : 100.0 * accuracy_sum / static_cast<double>(gt_labels.size());

  for (double thr : options.thresholds) {
    ThresholdScore score;
    score.threshold = thr;
    double f1_sum = 0.0;
    for (std::size_t i = 0; i < gt_labels.size(); ++i) {
      const auto c = segment_counts(pred_labels[i], gt_labels[i], thr, options.background_class);
      score.counts += c;
      f1_sum += f1_from_counts(c);
    }
    score.f1_pct = options.averaging == Averaging::micro ? 100.0 * f1_from_counts(score.counts)
                                                         : 100.0 * f1_sum / static_cast<double>(gt_labels.size());
    report.f1.push_back(score);
  }
  return report;
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
  nlohmann::json f1 = nlohmann::json::array();
  for (const auto& s : r.f1)
    f1.push_back({{"threshold", s.threshold},
                  {"f1_pct", s.f1_pct},
                  {"tp", s.counts.tp},
                  {"fp", s.counts.fp},
                  {"fn", s.counts.fn}});
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [k, c] : r.per_class_segments)
    per_class[std::to_string(k)] = {{"ground_truth", c.ground_truth}, {"predicted", c.predicted}};
  j = {{"accuracy_pct", r.accuracy_pct},
       {"f1", f1},
       {"per_class_segments", per_class},
       {"num_frames", r.num_frames},
       {"num_samples", r.num_samples},
       {"averaging", to_string(r.averaging)}};
}

void from_json(const nlohmann::json& j, EvaluationReport& r) {
  r = EvaluationReport{};
  r.accuracy_pct = j.at("accuracy_pct").get<double>();
  for (const auto& s : j.at("f1")) {
    ThresholdScore score;
    score.threshold = s.at("threshold").get<double>();
    score.f1_pct = s.at("f1_pct").get<double>();
    score.counts.tp = s.at("tp").get<std::int64_t>();
    score.counts.fp = s.at("fp").get<std::int64_t>();
    score.counts.fn = s.at("fn").get<std::int64_t>();
    r.f1.push_back(score);
  }
  for (const auto& [k, c] : j.at("per_class_segments").items())
    r.per_class_segments[std::stoi(k)] = {c.at("ground_truth").get<std::int64_t>(), c.at("predicted").get<std::int64_t>()};
  r.num_frames = j.at("num_frames").get<std::int64_t>();
  r.num_samples = j.at("num_samples").get<std::int64_t>();
  r.averaging = parse_averaging(j.value("averaging", std::string("micro")));
}

}  // namespace actseg
