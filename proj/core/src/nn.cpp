#include "actseg/nn.hpp"

#include <cmath>

namespace actseg::nn {

template <typename S>
Mat<S> dense(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  if (x.cols() != w.rows()) throw ShapeError("dense: input width " + std::to_string(x.cols()) + " != " + std::to_string(w.rows()));
  Mat<S> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename S>
void dense_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Mat<S>* dx, Mat<S>& dw, Mat<S>& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  if (dx) dx->noalias() += dy * w.transpose();
}

template <typename S>
Mat<S> temporal_conv(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b, Index rows_per_frame, int kernel,
                     int dilation) {
  const Index cin = x.cols();
  if (w.rows() != cin * kernel) throw ShapeError("temporal_conv: weight rows do not match kernel * Cin");
  if (x.rows() % rows_per_frame != 0) throw ShapeError("temporal_conv: rows not a multiple of rows_per_frame");
  const Index frames = x.rows() / rows_per_frame;
  Mat<S> y(x.rows(), w.cols());
  y.rowwise() = b.row(0);
  for (int j = 0; j < kernel; ++j) {
    const Index offset = static_cast<Index>(j - kernel / 2) * dilation;
    const Index t0 = std::max<Index>(0, -offset);
    const Index t1 = std::min(frames, frames - offset);
    if (t1 <= t0) continue;
    const Index n = (t1 - t0) * rows_per_frame;
    y.middleRows(t0 * rows_per_frame, n).noalias() +=
        x.middleRows((t0 + offset) * rows_per_frame, n) * w.middleRows(j * cin, cin);
  }
  return y;
}

template <typename S>
void temporal_conv_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Index rows_per_frame, int kernel,
                            int dilation, Mat<S>* dx, Mat<S>& dw, Mat<S>& db) {
  const Index cin = x.cols();
  const Index frames = x.rows() / rows_per_frame;
  db.row(0) += dy.colwise().sum();
  for (int j = 0; j < kernel; ++j) {
    const Index offset = static_cast<Index>(j - kernel / 2) * dilation;
    const Index t0 = std::max<Index>(0, -offset);
    const Index t1 = std::min(frames, frames - offset);
    if (t1 <= t0) continue;
    const Index n = (t1 - t0) * rows_per_frame;
    const auto dy_part = dy.middleRows(t0 * rows_per_frame, n);
    const auto x_part = x.middleRows((t0 + offset) * rows_per_frame, n);
    dw.middleRows(j * cin, cin).noalias() += x_part.transpose() * dy_part;
    if (dx) dx->middleRows((t0 + offset) * rows_per_frame, n).noalias() += dy_part * w.middleRows(j * cin, cin).transpose();
  }
}

namespace {

template <typename S>
using FrameMap = Eigen::Map<Mat<S>>;
template <typename S>
using ConstFrameMap = Eigen::Map<const Mat<S>>;

}  // namespace

template <typename S>
Mat<S> joint_mix(const Mat<S>& x, const Eigen::MatrixXd& a) {
  const Index v = a.rows();
  if (x.rows() % v != 0) throw ShapeError("joint_mix: rows not a multiple of the joint count");
  const Index f = x.cols();
  const Index frames = x.rows() / v;
  Mat<S> y = Mat<S>::Zero(x.rows(), f);
  ConstFrameMap<S> xm(x.data(), frames, v * f);
  FrameMap<S> ym(y.data(), frames, v * f);
  for (Index u = 0; u < v; ++u)
    for (Index w = 0; w < v; ++w) {
      const double c = a(u, w);
      if (c == 0.0) continue;
      ym.middleCols(u * f, f) += static_cast<S>(c) * xm.middleCols(w * f, f);
    }
  return y;
}

template <typename S>
void joint_mix_backward(const Mat<S>& dy, const Eigen::MatrixXd& a, Mat<S>& dx) {
  const Index v = a.rows();
  const Index f = dy.cols();
  const Index frames = dy.rows() / v;
  ConstFrameMap<S> dym(dy.data(), frames, v * f);
  FrameMap<S> dxm(dx.data(), frames, v * f);
  for (Index u = 0; u < v; ++u)
    for (Index w = 0; w < v; ++w) {
      const double c = a(u, w);
      if (c == 0.0) continue;
      dxm.middleCols(w * f, f) += static_cast<S>(c) * dym.middleCols(u * f, f);
    }
}

template <typename S>
Mat<S> joint_mean(const Mat<S>& x, Index num_joints) {
  const Index f = x.cols();
  const Index frames = x.rows() / num_joints;
  ConstFrameMap<S> xm(x.data(), frames, num_joints * f);
  Mat<S> y = xm.middleCols(0, f);
  for (Index v = 1; v < num_joints; ++v) y += xm.middleCols(v * f, f);
  y /= static_cast<S>(num_joints);
  return y;
}

template <typename S>
void joint_mean_backward(const Mat<S>& dy, Index num_joints, Mat<S>& dx) {
  const Index f = dy.cols();
  FrameMap<S> dxm(dx.data(), dy.rows(), num_joints * f);
  const S scale = S(1) / static_cast<S>(num_joints);
  for (Index v = 0; v < num_joints; ++v) dxm.middleCols(v * f, f) += scale * dy;
}

template <typename S>
void relu_inplace(Mat<S>& x) {
  x = x.cwiseMax(S(0));
}

template <typename S>
void relu_backward_inplace(Mat<S>& dy, const Mat<S>& y) {
  dy = (y.array() > S(0)).select(dy, S(0));
}

template <typename S>
Mat<S> dropout_inplace(Mat<S>& x, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return Mat<S>();
  std::bernoulli_distribution keep(1.0 - rate);
  Mat<S> mask(x.rows(), x.cols());
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? scale : S(0);
  x.array() *= mask.array();
  return mask;
}

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, double eps, NormCache<S>* cache) {
  const Index n = x.cols();
  Mat<S> xhat(x.rows(), n);
  std::vector<S> inv_std(static_cast<std::size_t>(x.rows()));
  for (Index r = 0; r < x.rows(); ++r) {
    const S mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean);
    const S var = centered.square().sum() / static_cast<S>(n);
    const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
    xhat.row(r) = centered * is;
    inv_std[static_cast<std::size_t>(r)] = is;
  }
  Mat<S> y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename S>
void layer_norm_backward(const NormCache<S>& cache, const Mat<S>& gain, const Mat<S>& dy, Mat<S>& dx, Mat<S>& dgain,
                         Mat<S>& dbias) {
  const Index n = dy.cols();
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  for (Index r = 0; r < dy.rows(); ++r) {
    const auto dxhat = (dy.row(r).array() * gain.row(0).array()).eval();
    const S mean_d = dxhat.sum() / static_cast<S>(n);
    const S mean_dx = (dxhat * cache.xhat.row(r).array()).sum() / static_cast<S>(n);
    dx.row(r).array() += cache.inv_std[static_cast<std::size_t>(r)] *
                         (dxhat - mean_d - cache.xhat.row(r).array() * mean_dx);
  }
}

template <typename S>
Mat<S> batch_norm_train(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, double eps, NormCache<S>* cache,
                        Mat<S>& mean, Mat<S>& var) {
  const Index n = x.rows();
  if (n == 0) throw EmptyInput("batch normalization over zero rows");
  mean = x.colwise().mean();
  Mat<S> centered = x.rowwise() - mean.row(0);
  var = centered.array().square().colwise().sum().matrix() / static_cast<S>(n);
  std::vector<S> inv_std(static_cast<std::size_t>(x.cols()));
  for (Index c = 0; c < x.cols(); ++c) inv_std[static_cast<std::size_t>(c)] = S(1) / std::sqrt(var(0, c) + static_cast<S>(eps));
  Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>> is(inv_std.data(), x.cols());
  Mat<S> xhat = (centered.array().rowwise() * is).matrix();
  Mat<S> y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename S>
Mat<S> batch_norm_infer(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, const Mat<S>& mean,
                        const Mat<S>& var, double eps) {
  const auto scale = (gain.row(0).array() / (var.row(0).array() + static_cast<S>(eps)).sqrt()).eval();
  Mat<S> y = ((x.rowwise() - mean.row(0)).array().rowwise() * scale).matrix();
  y.rowwise() += bias.row(0);
  return y;
}

template <typename S>
void batch_norm_backward(const NormCache<S>& cache, const Mat<S>& gain, const Mat<S>& dy, Mat<S>& dx, Mat<S>& dgain,
                         Mat<S>& dbias) {
  const S n = static_cast<S>(dy.rows());
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Mat<S> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const auto sum_d = dxhat.colwise().sum().eval();
  const auto sum_dx = (dxhat.array() * cache.xhat.array()).colwise().sum().eval();
  for (Index c = 0; c < dy.cols(); ++c) {
    const S is = cache.inv_std[static_cast<std::size_t>(c)];
    dx.col(c).array() += (is / n) * (n * dxhat.col(c).array() - sum_d(0, c) - cache.xhat.col(c).array() * sum_dx(0, c));
  }
}

template <typename S>
Mat<S> softmax_backward(const Mat<S>& p, const Mat<S>& dp) {
  Mat<S> dz(p.rows(), p.cols());
  for (Index r = 0; r < p.rows(); ++r) {
    const S inner = dp.row(r).dot(p.row(r));
    dz.row(r) = (p.row(r).array() * (dp.row(r).array() - inner)).matrix();
  }
  return dz;
}

#define ACTSEG_INSTANTIATE(S)                                                                                       \
  template Mat<S> dense<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&);                                            \
  template void dense_backward<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, Mat<S>*, Mat<S>&, Mat<S>&);          \
  template Mat<S> temporal_conv<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, Index, int, int);                   \
  template void temporal_conv_backward<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, Index, int, int, Mat<S>*,    \
                                          Mat<S>&, Mat<S>&);                                                        \
  template Mat<S> joint_mix<S>(const Mat<S>&, const Eigen::MatrixXd&);                                              \
  template void joint_mix_backward<S>(const Mat<S>&, const Eigen::MatrixXd&, Mat<S>&);                              \
  template Mat<S> joint_mean<S>(const Mat<S>&, Index);                                                              \
  template void joint_mean_backward<S>(const Mat<S>&, Index, Mat<S>&);                                              \
  template void relu_inplace<S>(Mat<S>&);                                                                           \
  template void relu_backward_inplace<S>(Mat<S>&, const Mat<S>&);                                                   \
  template Mat<S> dropout_inplace<S>(Mat<S>&, double, std::mt19937_64*);                                            \
  template Mat<S> layer_norm<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, double, NormCache<S>*);                \
  template void layer_norm_backward<S>(const NormCache<S>&, const Mat<S>&, const Mat<S>&, Mat<S>&, Mat<S>&,         \
                                       Mat<S>&);                                                                    \
  template Mat<S> batch_norm_train<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, double, NormCache<S>*, Mat<S>&,  \
                                      Mat<S>&);                                                                     \
  template Mat<S> batch_norm_infer<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, const Mat<S>&, const Mat<S>&,    \
                                      double);                                                                      \
  template void batch_norm_backward<S>(const NormCache<S>&, const Mat<S>&, const Mat<S>&, Mat<S>&, Mat<S>&,         \
                                       Mat<S>&);                                                                    \
  template Mat<S> softmax_backward<S>(const Mat<S>&, const Mat<S>&);

ACTSEG_INSTANTIATE(float)
ACTSEG_INSTANTIATE(double)
#undef ACTSEG_INSTANTIATE

}  // namespace actseg::nn
