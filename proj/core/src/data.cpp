#include "actseg/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "actseg/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace actseg {

namespace {

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + file.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = end + 1;
  }
  // A trailing newline does not open a new row.
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

double parse_double(std::string_view tok, const fs::path& file, std::size_t row) {
  while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
  while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw FormatError(file.string() + ":" + std::to_string(row + 1) + ": bad number '" + std::string(tok) + "'");
  if (!std::isfinite(value))
    throw FormatError(file.string() + ":" + std::to_string(row + 1) + ": non-finite value");
  return value;
}

void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  out.append(buf, ptr);
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + file.string() + "'");
  out << text;
}

}  // namespace

void DatasetMeta::validate() const {
  if (num_classes <= 0) throw FormatError("num_classes must be positive");
  if (static_cast<int>(class_names.size()) != num_classes)
    throw FormatError("class_names has " + std::to_string(class_names.size()) + " entries, expected " +
                      std::to_string(num_classes));
  if (num_joints <= 0 || channels <= 0) throw FormatError("num_joints and channels must be positive");
  if (!(sampling_rate_hz > 0.0) || !std::isfinite(sampling_rate_hz))
    throw FormatError("sampling_rate_hz must be positive");
}

void SequenceSample::validate() const {
  if (features.rows() != num_frames())
    throw FormatError("sample '" + sample_id + "': " + std::to_string(features.rows()) + " feature rows vs " +
                      std::to_string(labels.size()) + " labels");
  if (features.cols() != static_cast<Index>(num_joints) * channels)
    throw FormatError("sample '" + sample_id + "': feature width " + std::to_string(features.cols()) +
                      " != num_joints*channels");
  if (!features.allFinite()) throw FormatError("sample '" + sample_id + "': non-finite feature value");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw FormatError("sample '" + sample_id + "': label " + std::to_string(l) + " outside [0," +
                        std::to_string(num_classes) + ")");
}

DatasetMeta read_meta(const fs::path& file) {
  DatasetMeta meta;
  try {
    json j = json::parse(read_file(file));
    meta.num_classes = j.at("num_classes").get<int>();
    meta.num_joints = j.at("num_joints").get<int>();
    meta.channels = j.at("channels").get<int>();
    meta.class_names = j.at("class_names").get<std::vector<std::string>>();
    meta.sampling_rate_hz = j.at("sampling_rate_hz").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  meta.validate();
  return meta;
}

void write_meta(const fs::path& file, const DatasetMeta& meta) {
  json j = {{"num_classes", meta.num_classes},
            {"num_joints", meta.num_joints},
            {"channels", meta.channels},
            {"class_names", meta.class_names},
            {"sampling_rate_hz", meta.sampling_rate_hz}};
  write_text(file, j.dump(2) + "\n");
}

std::vector<int> read_labels_csv(const fs::path& file) {
  const std::string text = read_file(file);
  std::vector<int> labels;
  auto lines = split_lines(text);
  labels.reserve(lines.size());
  for (std::size_t r = 0; r < lines.size(); ++r) {
    std::string_view tok = lines[r];
    while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
    int v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
      throw FormatError(file.string() + ":" + std::to_string(r + 1) + ": bad label '" + std::string(tok) + "'");
    labels.push_back(v);
  }
  return labels;
}

void write_labels_csv(const fs::path& file, std::span<const int> labels) {
  std::string out;
  out.reserve(labels.size() * 3);
  for (int l : labels) {
    out += std::to_string(l);
    out += '\n';
  }
  write_text(file, out);
}

MatD read_matrix_csv(const fs::path& file) {
  const std::string text = read_file(file);
  auto lines = split_lines(text);
  std::vector<double> values;
  Index cols = -1;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    Index c = 0;
    std::string_view line = lines[r];
    std::size_t pos = 0;
    while (true) {
      std::size_t comma = line.find(',', pos);
      std::string_view tok = line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
      values.push_back(parse_double(tok, file, r));
      ++c;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (cols < 0) cols = c;
    if (c != cols)
      throw FormatError(file.string() + ":" + std::to_string(r + 1) + ": expected " + std::to_string(cols) +
                        " columns, got " + std::to_string(c));
  }
  const Index rows = static_cast<Index>(lines.size());
  if (rows == 0) return MatD(0, 0);
  MatD m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

void write_matrix_csv(const fs::path& file, const MatD& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.size()) * 24);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      append_double(out, m(r, c));
    }
    out += '\n';
  }
  write_text(file, out);
}

SequenceSample load_sample(const fs::path& dir) {
  DatasetMeta meta = read_meta(dir / "meta.json");
  SequenceSample s;
  s.sample_id = dir.filename().string();
  if (s.sample_id.empty()) s.sample_id = dir.parent_path().filename().string();
  s.labels = read_labels_csv(dir / "labels.csv");
  s.features = read_matrix_csv(dir / "features.csv");
  if (s.features.rows() == 0) s.features.resize(0, static_cast<Index>(meta.num_joints) * meta.channels);
  s.sampling_rate_hz = meta.sampling_rate_hz;
  s.num_joints = meta.num_joints;
  s.channels = meta.channels;
  s.num_classes = meta.num_classes;
  s.validate();
  return s;
}

void write_sample(const fs::path& dir, const SequenceSample& sample, const DatasetMeta& meta) {
  fs::create_directories(dir);
  DatasetMeta m = meta;
  m.sampling_rate_hz = sample.sampling_rate_hz;
  write_meta(dir / "meta.json", m);
  write_labels_csv(dir / "labels.csv", sample.labels);
  write_matrix_csv(dir / "features.csv", sample.features);
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "labels.csv")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  Dataset ds;
  for (const auto& d : dirs) ds.samples.push_back(load_sample(d));
  if (fs::exists(dir / "meta.json")) {
    ds.meta = read_meta(dir / "meta.json");
  } else if (!dirs.empty()) {
    ds.meta = read_meta(dirs.front() / "meta.json");
  } else {
    throw FormatError("'" + dir.string() + "' holds no samples and no meta.json");
  }
  for (const auto& s : ds.samples)
    if (s.num_classes != ds.meta.num_classes || s.num_joints != ds.meta.num_joints ||
        s.channels != ds.meta.channels)
      throw FormatError("sample '" + s.sample_id + "' disagrees with dataset meta.json");
  return ds;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  write_meta(dir / "meta.json", dataset.meta);
  for (const auto& s : dataset.samples) write_sample(dir / s.sample_id, s, dataset.meta);
}

DatasetMeta meta_of(const SequenceSample& sample, std::vector<std::string> class_names) {
  DatasetMeta m;
  m.num_classes = sample.num_classes;
  m.num_joints = sample.num_joints;
  m.channels = sample.channels;
  m.sampling_rate_hz = sample.sampling_rate_hz;
  if (class_names.empty())
    for (int k = 0; k < sample.num_classes; ++k) class_names.push_back("class_" + std::to_string(k));
  m.class_names = std::move(class_names);
  return m;
}

SequenceSample decimate(const SequenceSample& sample, int factor) {
  if (factor < 1) throw ConfigError("decimation factor must be >= 1");
  if (factor == 1) return sample;
  const Index t = sample.num_frames();
  if (factor >= t)
    throw DegenerateSequence("decimation factor " + std::to_string(factor) + " >= sequence length " +
                             std::to_string(t));
  const Index kept = (t + factor - 1) / factor;
  SequenceSample out = sample;
  out.features.resize(kept, sample.features.cols());
  out.labels.resize(static_cast<std::size_t>(kept));
  for (Index i = 0; i < kept; ++i) {
    out.features.row(i) = sample.features.row(i * factor);
    out.labels[static_cast<std::size_t>(i)] = sample.labels[static_cast<std::size_t>(i * factor)];
  }
  out.sampling_rate_hz = sample.sampling_rate_hz / factor;
  return out;
}

SequenceSample zero_channels(const SequenceSample& sample, std::span<const int> channels) {
  SequenceSample out = sample;
  for (int c : channels) {
    if (c < 0 || c >= sample.channels) throw ConfigError("channel " + std::to_string(c) + " out of range");
    for (int v = 0; v < sample.num_joints; ++v) out.features.col(static_cast<Index>(v) * sample.channels + c).setZero();
  }
  return out;
}

void SyntheticConfig::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic num_classes must be >= 2");
  if (num_joints < 1 || channels < 1) throw ConfigError("synthetic num_joints/channels must be >= 1");
  if (num_sequences < 0) throw ConfigError("synthetic num_sequences must be >= 0");
  if (min_segment_length < 1) throw ConfigError("min_segment_length must be >= 1");
  if (max_segment_length < min_segment_length) throw ConfigError("max_segment_length < min_segment_length");
  if (frames_per_sequence < min_segment_length) throw ConfigError("frames_per_sequence < min_segment_length");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  if (!(sampling_rate_hz > 0.0)) throw ConfigError("sampling_rate_hz must be positive");
}

namespace {

constexpr std::uint64_t kLayoutStream = 0x9E3779B97F4A7C15ULL;

std::vector<ClassSignal> draw_signals(int num_classes, int num_joints, int channels, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  std::uniform_real_distribution<double> jitter(0.2, 0.8);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<ClassSignal> signals(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    auto& s = signals[static_cast<std::size_t>(k)];
    // Frequencies occupy disjoint bins of [0.5, 4.0] Hz.
    s.frequency_hz = 0.5 + 3.5 * (k + jitter(rng)) / num_classes;
    for (int v = 0; v < num_joints; ++v) s.amplitude.push_back(amp(rng));
    for (int i = 0; i < num_joints * channels; ++i) s.phase.push_back(phase(rng));
  }
  return signals;
}

std::vector<int> draw_layout(const SyntheticConfig& cfg, int num_classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(cfg.min_segment_length, cfg.max_segment_length);
  std::uniform_int_distribution<int> cls(0, num_classes - 1);
  std::uniform_int_distribution<int> other(0, num_classes - 2);
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(cfg.frames_per_sequence));
  int prev = -1;
  while (static_cast<int>(labels.size()) < cfg.frames_per_sequence) {
    int k;
    if (prev < 0) {
      k = cls(rng);
    } else {
      k = other(rng);
      if (k >= prev) ++k;
    }
    const int n = std::min(len(rng), cfg.frames_per_sequence - static_cast<int>(labels.size()));
    labels.insert(labels.end(), static_cast<std::size_t>(n), k);
    prev = k;
  }
  return labels;
}

double signal_value(const ClassSignal& s, int joint, int channel, int channels, double t, double rate) {
  return s.amplitude[static_cast<std::size_t>(joint)] *
         std::sin(2.0 * std::numbers::pi * s.frequency_hz * t / rate +
                  s.phase[static_cast<std::size_t>(joint * channels + channel)]);
}

std::string sequence_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%04d", i);
  return buf;
}

DatasetMeta synthetic_meta(const SyntheticConfig& cfg) {
  DatasetMeta meta;
  meta.num_classes = cfg.num_classes;
  meta.num_joints = cfg.num_joints;
  meta.channels = cfg.channels;
  meta.sampling_rate_hz = cfg.sampling_rate_hz;
  for (int k = 0; k < cfg.num_classes; ++k) meta.class_names.push_back("class_" + std::to_string(k));
  return meta;
}

}  // namespace

std::vector<ClassSignal> synthetic_class_signals(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  return draw_signals(cfg.num_classes, cfg.num_joints, cfg.channels, rng);
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto signals = synthetic_class_signals(cfg);
  std::mt19937_64 rng(cfg.seed ^ kLayoutStream);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.meta = synthetic_meta(cfg);
  const int width = cfg.num_joints * cfg.channels;
  for (int n = 0; n < cfg.num_sequences; ++n) {
    SequenceSample s;
    s.sample_id = sequence_id(n);
    s.labels = draw_layout(cfg, cfg.num_classes, rng);
    s.features.resize(cfg.frames_per_sequence, width);
    for (int t = 0; t < cfg.frames_per_sequence; ++t) {
      const auto& sig = signals[static_cast<std::size_t>(s.labels[static_cast<std::size_t>(t)])];
      for (int v = 0; v < cfg.num_joints; ++v)
        for (int c = 0; c < cfg.channels; ++c) {
          double x = signal_value(sig, v, c, cfg.channels, t, cfg.sampling_rate_hz);
          if (cfg.noise_std > 0.0) x += cfg.noise_std * noise(rng);
          s.features(t, v * cfg.channels + c) = x;
        }
    }
    s.sampling_rate_hz = cfg.sampling_rate_hz;
    s.num_joints = cfg.num_joints;
    s.channels = cfg.channels;
    s.num_classes = cfg.num_classes;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset generate_complementary_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const int m = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cfg.num_classes))));
  if (m < 2 || m * m != cfg.num_classes)
    throw ConfigError("complementary synthetic data needs num_classes = m*m with m >= 2");
  if (cfg.channels < 2) throw ConfigError("complementary synthetic data needs >= 2 channels");
  const int half = cfg.channels / 2;
  std::mt19937_64 param_rng(cfg.seed);
  const auto first = draw_signals(m, cfg.num_joints, cfg.channels, param_rng);
  const auto second = draw_signals(m, cfg.num_joints, cfg.channels, param_rng);
  std::mt19937_64 rng(cfg.seed ^ kLayoutStream);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.meta = synthetic_meta(cfg);
  const int width = cfg.num_joints * cfg.channels;
  for (int n = 0; n < cfg.num_sequences; ++n) {
    SequenceSample s;
    s.sample_id = sequence_id(n);
    s.labels = draw_layout(cfg, cfg.num_classes, rng);
    s.features.resize(cfg.frames_per_sequence, width);
    for (int t = 0; t < cfg.frames_per_sequence; ++t) {
      const int k = s.labels[static_cast<std::size_t>(t)];
      for (int v = 0; v < cfg.num_joints; ++v)
        for (int c = 0; c < cfg.channels; ++c) {
          const auto& sig = c < half ? first[static_cast<std::size_t>(k / m)] : second[static_cast<std::size_t>(k % m)];
          double x = signal_value(sig, v, c, cfg.channels, t, cfg.sampling_rate_hz);
          if (cfg.noise_std > 0.0) x += cfg.noise_std * noise(rng);
          s.features(t, v * cfg.channels + c) = x;
        }
    }
    s.sampling_rate_hz = cfg.sampling_rate_hz;
    s.num_joints = cfg.num_joints;
    s.channels = cfg.channels;
    s.num_classes = cfg.num_classes;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                        std::uint64_t seed) {
  if (n < 2) throw InsufficientData("split needs at least 2 samples, got " + std::to_string(n));
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0,1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(n) - 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  order.resize(n_train);
  return {std::move(order), std::move(test)};
}

std::pair<std::vector<SequenceSample>, std::vector<SequenceSample>> split_dataset(
    std::vector<SequenceSample> samples, double train_fraction, std::uint64_t seed) {
  const auto [train_idx, test_idx] = split_indices(samples.size(), train_fraction, seed);
  std::vector<SequenceSample> train, test;
  for (auto i : train_idx) train.push_back(std::move(samples[i]));
  for (auto i : test_idx) test.push_back(std::move(samples[i]));
  return {std::move(train), std::move(test)};
}

MatD one_hot(std::span<const int> labels, int num_classes) {
  MatD out = MatD::Zero(static_cast<Index>(labels.size()), num_classes);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const int l = labels[t];
    if (l < 0 || l >= num_classes)
      throw RangeError("label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
    out(static_cast<Index>(t), l) = 1.0;
  }
  return out;
}

}  // namespace actseg
