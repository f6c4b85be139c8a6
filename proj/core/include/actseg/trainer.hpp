#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "actseg/data.hpp"
#include "actseg/model.hpp"

namespace actseg {

enum class Precision { single, double_precision };

std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 4;
  double learning_rate = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  Precision precision = Precision::double_precision;

  void validate() const;
};

template <typename S>
struct AdamState {
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;
  std::int64_t step = 0;

  static AdamState for_parameters(const ParameterSet<S>& params) {
    AdamState st;
    for (const auto& p : params) {
      st.m.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
      st.v.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
    }
    return st;
  }
};

/// One bias-corrected Adam update over every trainable array. Throws
/// NonFiniteGradient, naming the offending parameter, before touching any
/// state.
template <typename S>
void adam_step(ParameterSet<S>& params, const ParameterSet<S>& grads, AdamState<S>& state, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double mse = 0.0;
  double train_accuracy = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Each epoch visits the samples in a seed-determined order; a batch of
/// batch_size consecutive whole sequences accumulates gradients (each scaled
/// by 1/batch) before one Adam step. Throws InsufficientData on an empty set.
template <typename S>
TrainHistory train_model(SegmentationModel<S>& model, std::span<const SequenceSample> train, const LossConfig& loss,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// The sample order of every epoch, exposed so batching is testable.
std::vector<std::vector<std::size_t>> epoch_orders(std::size_t num_samples, int epochs, std::uint64_t seed);

std::string history_csv(const TrainHistory& history);

/// Loss with optional analytic gradient output.
using LossWithGradient = std::function<double(const ParameterSet<double>& params, ParameterSet<double>* grad)>;

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_parameter;
  std::int64_t worst_index = -1;
};

/// Central differences on up to `max_coordinates` randomly chosen trainable
/// coordinates, compared against the analytic gradient with relative error
/// |a - n| / max(1e-8, |a| + |n|).
GradcheckResult finite_difference_gradcheck(const LossWithGradient& loss, const ParameterSet<double>& params,
                                            double step = 1e-5, std::size_t max_coordinates = 200,
                                            std::uint64_t seed = 0);

/// Gradcheck of combined_loss through `model` on one sequence.
GradcheckResult gradcheck_model(SegmentationModel<double>& model, const MatD& features, std::span<const int> labels,
                                const LossConfig& loss, double step = 1e-5, std::size_t max_coordinates = 200,
                                std::uint64_t seed = 0);

}  // namespace actseg
