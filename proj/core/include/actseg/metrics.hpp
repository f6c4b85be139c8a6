#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace actseg {

/// Maximal run of one label over the half-open frame range [start, end).
struct Segment {
  int class_id = 0;
  std::int64_t start = 0;
  std::int64_t end = 0;

  std::int64_t length() const { return end - start; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct MatchCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const MatchCounts&, const MatchCounts&) = default;
};

std::vector<Segment> frames_to_segments(std::span<const int> labels);

/// Intersection over union of the frame intervals; class ids are ignored.
double interval_iou(const Segment& a, const Segment& b);

/// Greedy matching in predicted temporal order. Each prediction takes the
/// unmatched same-class ground-truth segment of highest IoU (earliest start
/// on ties); it is a TP when that IoU >= threshold. Throws
/// InvalidSegmentation if either list is unordered or overlapping.
MatchCounts match_segments(std::span<const Segment> pred, std::span<const Segment> gt, double threshold);

/// TP / (TP + 0.5 (FP + FN)); 1 when all counts are zero.
double f1_from_counts(const MatchCounts& counts);

MatchCounts segment_counts(std::span<const int> pred_labels, std::span<const int> gt_labels, double threshold,
                           std::optional<int> background_class = std::nullopt);
double segment_f1(std::span<const int> pred_labels, std::span<const int> gt_labels, double threshold,
                  std::optional<int> background_class = std::nullopt);

/// Fraction of frames with pred == gt. Throws EmptyInput / ShapeError.
double frame_accuracy(std::span<const int> pred_labels, std::span<const int> gt_labels);

enum class Averaging { micro, macro };

std::string to_string(Averaging a);
Averaging parse_averaging(const std::string& s);

struct EvaluationOptions {
  std::vector<double> thresholds{0.5};
  std::optional<int> background_class;
  Averaging averaging = Averaging::micro;
};

struct ThresholdScore {
  double threshold = 0.0;
  double f1_pct = 0.0;
  MatchCounts counts;
};

struct ClassSegmentCount {
  std::int64_t ground_truth = 0;
  std::int64_t predicted = 0;
};

struct EvaluationReport {
  double accuracy_pct = 0.0;
  std::vector<ThresholdScore> f1;
  std::map<int, ClassSegmentCount> per_class_segments;
  std::int64_t num_frames = 0;
  std::int64_t num_samples = 0;
  Averaging averaging = Averaging::micro;

  /// F1 (percent) at `threshold`, if it was evaluated.
  std::optional<double> f1_at(double threshold) const;
};

/// Micro averaging pools frames for accuracy and sums MatchCounts across
/// samples before applying F1; macro averages per-sample scores.
EvaluationReport evaluate(const std::vector<std::vector<int>>& pred_labels,
                          const std::vector<std::vector<int>>& gt_labels,
                          const EvaluationOptions& options = {});

void to_json(nlohmann::json& j, const EvaluationReport& r);
void from_json(const nlohmann::json& j, EvaluationReport& r);

}  // namespace actseg
