#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "actseg/error.hpp"

namespace actseg {

using Index = Eigen::Index;

/// Row-major dense matrix. Frame-indexed arrays keep one frame per row so a
/// T x (V*C) feature matrix and a (T*V) x C per-joint view share storage.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Mat<double>;
using MatF = Mat<float>;

template <typename S>
Mat<S> cast_to(const MatD& m) {
  return m.template cast<S>();
}

template <typename S>
struct Parameter {
  std::string name;
  std::vector<std::int64_t> shape;  // logical shape; value holds it as rows x cols
  Mat<S> value;
  bool trainable = true;

  std::int64_t count() const { return static_cast<std::int64_t>(value.size()); }
};

/// Ordered collection of named arrays. Insertion order is the serialization
/// order and the order in which optimizers and gradient checks visit entries.
template <typename S>
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<std::int64_t> shape, Index rows, Index cols,
                  bool trainable = true) {
    if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    std::int64_t product = 1;
    for (auto d : shape) product *= d;
    if (product != rows * cols) throw ShapeError("parameter '" + name + "' shape/storage mismatch");
    params_.push_back({std::move(name), std::move(shape), Mat<S>::Zero(rows, cols), trainable});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  Parameter<S>& at(std::size_t i) { return params_.at(i); }
  const Parameter<S>& at(std::size_t i) const { return params_.at(i); }
  Mat<S>& operator[](std::size_t i) { return params_[i].value; }
  const Mat<S>& operator[](std::size_t i) const { return params_[i].value; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    return std::nullopt;
  }

  ParameterSet zeros_like() const {
    ParameterSet out = *this;
    out.set_zero();
    return out;
  }

  void set_zero() {
    for (auto& p : params_) p.value.setZero();
  }

  std::int64_t num_scalars() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.count();
    return n;
  }

  bool all_finite() const {
    for (const auto& p : params_)
      if (!p.value.allFinite()) return false;
    return true;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& p : params_) {
      auto idx = out.add(p.name, p.shape, p.value.rows(), p.value.cols(), p.trainable);
      out[idx] = p.value.template cast<T>();
    }
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto& x = a.params_[i];
      const auto& y = b.params_[i];
      if (x.name != y.name || x.shape != y.shape || x.trainable != y.trainable) return false;
      if (x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) return false;
      if (x.value.size() > 0 &&
          std::memcmp(x.value.data(), y.value.data(), sizeof(S) * x.value.size()) != 0)
        return false;
    }
    return true;
  }

 private:
  std::vector<Parameter<S>> params_;
};

/// Fills `m` from U(-sqrt(1/fan_in), +sqrt(1/fan_in)) in row-major order.
template <typename S>
void init_uniform(Mat<S>& m, Index fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(std::max<Index>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
}

}  // namespace actseg
