#include "actseg/model.hpp"

namespace actseg {

namespace {

template <typename S>
StageOutputs<double> widen(StageOutputs<S> out) {
  if constexpr (std::is_same_v<S, double>) {
    return out;
  } else {
    StageOutputs<double> w;
    for (const auto& l : out.stage_logits) w.stage_logits.push_back(l.template cast<double>());
    w.frame_features = out.frame_features.template cast<double>();
    return w;
  }
}

template <typename Variant, typename F>
auto with_model(const Variant& v, F&& f) {
  if (const auto* d = std::get_if<std::unique_ptr<SegmentationModel<double>>>(&v)) return f(**d);
  if (const auto* s = std::get_if<std::unique_ptr<SegmentationModel<float>>>(&v)) return f(**s);
  throw ConfigError("empty model handle");
}

}  // namespace

std::string AnyModel::kind() const {
  return with_model(model_, [](const auto& m) { return m.kind(); });
}

int AnyModel::num_classes() const {
  return with_model(model_, [](const auto& m) { return m.num_classes(); });
}

Index AnyModel::input_width() const {
  return with_model(model_, [](const auto& m) { return m.input_width(); });
}

Index AnyModel::feature_width() const {
  return with_model(model_, [](const auto& m) { return m.feature_width(); });
}

StageOutputs<double> AnyModel::forward(const MatD& features) const {
  return with_model(model_, [&](const auto& m) {
    using Model = std::decay_t<decltype(m)>;
    if constexpr (std::is_same_v<Model, SegmentationModel<double>>) {
      return m.forward(features);
    } else {
      return widen(m.forward(features.cast<float>()));
    }
  });
}

std::vector<int> AnyModel::predict(const MatD& features) const {
  return argmax_rows(forward(features).final_logits());
}

}  // namespace actseg
