#pragma once

#include <random>
#include <vector>

#include "actseg/tensor.hpp"

// Layer primitives shared by the models. Backward functions accumulate (+=)
// into every gradient output they are handed, so callers zero them first.
namespace actseg::nn {

/// y = x w + b (b broadcast over rows).
template <typename S>
Mat<S> dense(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b);

template <typename S>
void dense_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Mat<S>* dx, Mat<S>& dw, Mat<S>& db);

/// Dilated convolution along time. `x` is (T * rows_per_frame) x Cin in
/// frame-major order, each of the rows_per_frame streams convolved
/// independently; `w` stacks the kernel taps as (kernel * Cin) x Cout. Zero
/// padding of (kernel/2)*dilation frames on both sides preserves T.
template <typename S>
Mat<S> temporal_conv(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b, Index rows_per_frame, int kernel,
                     int dilation);

template <typename S>
void temporal_conv_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Index rows_per_frame, int kernel,
                            int dilation, Mat<S>* dx, Mat<S>& dw, Mat<S>& db);

/// Per-frame joint mixing Y[t] = A X[t] on a (T * V) x F matrix.
template <typename S>
Mat<S> joint_mix(const Mat<S>& x, const Eigen::MatrixXd& a);

/// dX[t] += A^T dY[t].
template <typename S>
void joint_mix_backward(const Mat<S>& dy, const Eigen::MatrixXd& a, Mat<S>& dx);

/// Mean over the V rows of each frame: (T * V) x F -> T x F.
template <typename S>
Mat<S> joint_mean(const Mat<S>& x, Index num_joints);

template <typename S>
void joint_mean_backward(const Mat<S>& dy, Index num_joints, Mat<S>& dx);

template <typename S>
void relu_inplace(Mat<S>& x);

/// dy masked by (y > 0), in place.
template <typename S>
void relu_backward_inplace(Mat<S>& dy, const Mat<S>& y);

/// Inverted dropout; returns the scaled keep-mask (empty when rate == 0).
template <typename S>
Mat<S> dropout_inplace(Mat<S>& x, double rate, std::mt19937_64* rng);

template <typename S>
struct NormCache {
  Mat<S> xhat;
  std::vector<S> inv_std;
};

/// Row-wise layer normalization with per-column gain and bias.
template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, double eps, NormCache<S>* cache);

template <typename S>
void layer_norm_backward(const NormCache<S>& cache, const Mat<S>& gain, const Mat<S>& dy, Mat<S>& dx, Mat<S>& dgain,
                         Mat<S>& dbias);

/// Column-wise batch normalization using the statistics of `x` itself.
/// Writes the batch mean and biased variance to `mean` / `var`.
template <typename S>
Mat<S> batch_norm_train(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, double eps, NormCache<S>* cache,
                        Mat<S>& mean, Mat<S>& var);

/// Column-wise normalization with fixed (running) statistics.
template <typename S>
Mat<S> batch_norm_infer(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, const Mat<S>& mean,
                        const Mat<S>& var, double eps);

template <typename S>
void batch_norm_backward(const NormCache<S>& cache, const Mat<S>& gain, const Mat<S>& dy, Mat<S>& dx, Mat<S>& dgain,
                         Mat<S>& dbias);

/// Row-wise softmax backward: dz = p * (dp - <dp, p>).
template <typename S>
Mat<S> softmax_backward(const Mat<S>& p, const Mat<S>& dp);

}  // namespace actseg::nn
