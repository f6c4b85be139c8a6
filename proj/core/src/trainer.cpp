#include "actseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace actseg {

std::string to_string(Precision p) { return p == Precision::single ? "single" : "double"; }

Precision parse_precision(const std::string& s) {
  if (s == "single" || s == "float32") return Precision::single;
  if (s == "double" || s == "float64") return Precision::double_precision;
  throw ConfigError("unknown precision '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must lie in [0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
}

template <typename S>
void adam_step(ParameterSet<S>& params, const ParameterSet<S>& grads, AdamState<S>& state, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adam: parameter, gradient and state counts disagree");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols())
      throw ShapeError("adam: gradient shape mismatch for '" + params.at(i).name + "'");
    if (params.at(i).trainable && !grads[i].allFinite())
      throw NonFiniteGradient("non-finite gradient in parameter '" + params.at(i).name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const S lr = static_cast<S>(cfg.learning_rate), eps = static_cast<S>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.at(i).trainable) continue;
    auto g = grads[i].array();
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.square();
    params[i].array() -= lr * (m * c1) / ((v * c2).sqrt() + eps);
  }
}

std::vector<std::vector<std::size_t>> epoch_orders(std::size_t num_samples, int epochs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> orders;
  for (int e = 0; e < epochs; ++e) {
    std::vector<std::size_t> order(num_samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    orders.push_back(std::move(order));
  }
  return orders;
}

template <typename S>
TrainHistory train_model(SegmentationModel<S>& model, std::span<const SequenceSample> train, const LossConfig& loss,
                         const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  loss.validate();
  if (train.empty()) throw InsufficientData("training set is empty");
  std::vector<Mat<S>> inputs;
  inputs.reserve(train.size());
  for (const auto& s : train) {
    if (s.features.cols() != model.input_width())
      throw ShapeError("sample '" + s.sample_id + "' width " + std::to_string(s.features.cols()) +
                       " does not match the model input " + std::to_string(model.input_width()));
    inputs.push_back(s.features.template cast<S>());
  }

  ParameterSet<S>& params = model.parameters();
  ParameterSet<S> grads = params.zeros_like();
  AdamState<S> adam = AdamState<S>::for_parameters(params);
  // Separate streams so that enabling dropout does not change sample order.
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  const auto orders = epoch_orders(train.size(), cfg.epochs, cfg.seed);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  TrainHistory history;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto& order = orders[static_cast<std::size_t>(e)];
    EpochRecord rec;
    rec.epoch = e + 1;
    Index correct = 0, frames = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      const S weight = static_cast<S>(1.0 / static_cast<double>(b1 - b0));
      grads.set_zero();
      for (std::size_t i = b0; i < b1; ++i) {
        const std::size_t idx = order[i];
        const auto step = model.accumulate_gradients(inputs[idx], train[idx].labels, loss, weight, grads, &dropout_rng);
        rec.loss += step.loss.total;
        rec.ce += step.loss.ce_sum;
        rec.mse += step.loss.mse_sum;
        correct += step.correct_frames;
        frames += step.frames;
      }
      adam_step(params, grads, adam, cfg);
    }
    const double n = static_cast<double>(order.size());
    rec.loss /= n;
    rec.ce /= n;
    rec.mse /= n;
    rec.train_accuracy = frames > 0 ? static_cast<double>(correct) / static_cast<double>(frames) : 0.0;
    if (!std::isfinite(rec.loss)) throw NonFiniteGradient("epoch " + std::to_string(rec.epoch) + ": non-finite loss");
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,ce,mse,train_accuracy\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.loss << ',' << r.ce << ',' << r.mse << ',' << r.train_accuracy << '\n';
  return out.str();
}

GradcheckResult finite_difference_gradcheck(const LossWithGradient& loss, const ParameterSet<double>& params,
                                            double step, std::size_t max_coordinates, std::uint64_t seed) {
  if (!(step >= 1e-7 && step <= 1e-4)) throw ConfigError("gradcheck step must lie in [1e-7, 1e-4]");
  ParameterSet<double> analytic = params.zeros_like();
  loss(params, &analytic);

  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params.at(i).trainable)
      for (Index j = 0; j < params[i].size(); ++j) coords.emplace_back(i, j);
  if (coords.size() > max_coordinates) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  GradcheckResult result;
  ParameterSet<double> probe = params;
  for (auto [i, j] : coords) {
    double& x = probe[i].data()[j];
    const double orig = x;
    x = orig + step;
    const double up = loss(probe, nullptr);
    x = orig - step;
    const double down = loss(probe, nullptr);
    x = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i].data()[j];
    const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    if (rel > result.max_relative_error || result.worst_index < 0) {
      result.max_relative_error = rel;
      result.worst_parameter = params.at(i).name;
      result.worst_index = j;
    }
    ++result.coordinates_checked;
  }
  return result;
}

GradcheckResult gradcheck_model(SegmentationModel<double>& model, const MatD& features, std::span<const int> labels,
                                const LossConfig& loss, double step, std::size_t max_coordinates, std::uint64_t seed) {
  // Previous-frame terms of truncated_adjacent are constants taken at the
  // unperturbed parameters.
  std::vector<MatD> reference;
  if (loss.smoothing_mode == SmoothingMode::truncated_adjacent) reference = model.forward(features).stage_logits;
  const ParameterSet<double> base = model.parameters();
  LossWithGradient fn = [&](const ParameterSet<double>& p, ParameterSet<double>* grad) {
    model.parameters() = p;
    if (grad) {
      grad->set_zero();
      return model.accumulate_gradients(features, labels, loss, 1.0, *grad, nullptr, reference).loss.total;
    }
    return combined_loss<double>(model.forward(features).stage_logits, labels, loss, nullptr, reference).total;
  };
  auto result = finite_difference_gradcheck(fn, base, step, max_coordinates, seed);
  model.parameters() = base;
  return result;
}

template void adam_step<float>(ParameterSet<float>&, const ParameterSet<float>&, AdamState<float>&, const TrainConfig&);
template void adam_step<double>(ParameterSet<double>&, const ParameterSet<double>&, AdamState<double>&,
                                const TrainConfig&);
template TrainHistory train_model<float>(SegmentationModel<float>&, std::span<const SequenceSample>, const LossConfig&,
                                         const TrainConfig&, const EpochCallback&);
template TrainHistory train_model<double>(SegmentationModel<double>&, std::span<const SequenceSample>,
                                          const LossConfig&, const TrainConfig&, const EpochCallback&);

}  // namespace actseg
