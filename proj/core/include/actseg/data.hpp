#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "actseg/tensor.hpp"

namespace actseg {

struct DatasetMeta {
  int num_classes = 0;
  int num_joints = 0;
  int channels = 0;
  std::vector<std::string> class_names;
  double sampling_rate_hz = 0.0;

  void validate() const;
  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

/// One recording. `features` is T x (V*C), column j holding joint j / C,
/// channel j % C.
struct SequenceSample {
  std::string sample_id;
  MatD features;
  std::vector<int> labels;
  double sampling_rate_hz = 0.0;
  int num_joints = 0;
  int channels = 0;
  int num_classes = 0;

  Index num_frames() const { return static_cast<Index>(labels.size()); }

  /// Throws FormatError on any violated invariant.
  void validate() const;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<SequenceSample> samples;
};

DatasetMeta read_meta(const std::filesystem::path& file);
void write_meta(const std::filesystem::path& file, const DatasetMeta& meta);

/// Reads features.csv, labels.csv and meta.json from `dir`.
SequenceSample load_sample(const std::filesystem::path& dir);

/// Writes the three sample files; decimals use 17 significant digits so that
/// load_sample reproduces every value exactly.
void write_sample(const std::filesystem::path& dir, const SequenceSample& sample, const DatasetMeta& meta);

/// Loads every immediate subdirectory holding a labels.csv, ordered by name.
Dataset load_dataset(const std::filesystem::path& dir);
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

std::vector<int> read_labels_csv(const std::filesystem::path& file);
void write_labels_csv(const std::filesystem::path& file, std::span<const int> labels);
MatD read_matrix_csv(const std::filesystem::path& file);
void write_matrix_csv(const std::filesystem::path& file, const MatD& m);

DatasetMeta meta_of(const SequenceSample& sample, std::vector<std::string> class_names = {});

/// Keeps frames 0, factor, 2*factor, ...; throws DegenerateSequence when
/// factor >= T.
SequenceSample decimate(const SequenceSample& sample, int factor);

/// Zeroes channel c of every joint for each c in `channels`.
SequenceSample zero_channels(const SequenceSample& sample, std::span<const int> channels);

struct SyntheticConfig {
  int num_classes = 5;
  int num_joints = 6;
  int channels = 3;
  int num_sequences = 10;
  int frames_per_sequence = 256;
  int min_segment_length = 20;
  int max_segment_length = 60;
  double noise_std = 0.1;
  double sampling_rate_hz = 50.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-class generator parameters: joint v, channel c emits
/// amplitude[v] * sin(2*pi*frequency_hz*t/rate + phase[v*C + c]).
struct ClassSignal {
  std::vector<double> amplitude;
  double frequency_hz = 0.0;
  std::vector<double> phase;
};

std::vector<ClassSignal> synthetic_class_signals(const SyntheticConfig& cfg);

/// Random segment layouts (uniform lengths, no immediate class repeats) with
/// per-class sinusoids plus Gaussian noise. Deterministic in cfg.seed.
Dataset generate_synthetic(const SyntheticConfig& cfg);

/// Variant for fusion experiments. num_classes must be m*m; class k is the
/// pair (k / m, k % m). Channels [0, C/2) carry the first factor's sinusoid,
/// channels [C/2, C) the second's, so each channel half alone can resolve
/// only one factor.
Dataset generate_complementary_synthetic(const SyntheticConfig& cfg);

/// Deterministic shuffle of [0, n); the first ceil(fraction * n) indices
/// (at least 1, at most n - 1) train, the rest test.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                        std::uint64_t seed);

/// split_indices applied to `samples`.
std::pair<std::vector<SequenceSample>, std::vector<SequenceSample>> split_dataset(
    std::vector<SequenceSample> samples, double train_fraction, std::uint64_t seed);

MatD one_hot(std::span<const int> labels, int num_classes);

}  // namespace actseg
