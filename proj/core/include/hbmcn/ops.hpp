#pragma once

#include <vector>

#include "hbmcn/tensor.hpp"

namespace hbmcn {

// Differentiable ops over 4-D (N x C x H x W) and 2-D (N x D) tensors.
// Every op is a pure function of its arguments; passing a Tape records a
// backward closure when at least one input requires a gradient. With a null
// tape nothing is recorded and the output does not require grad (eval path).

enum class Pointwise { kRelu, kSigmoid, kLeakyRelu };
enum class BnMode { kTrain, kEval };

/// Cross-correlation (no kernel flip) with zero padding.
/// x: N x Cin x H x W, w: Cout x Cin x kh x kw, bias: optional Cout vector.
template <class S>
Tensor<S> conv2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias,
                 int stride, int pad);

/// Windowed maximum; padding cells never win. Backward routes the gradient to
/// the argmax, first occurrence in row-major window order on ties.
template <class S>
Tensor<S> max_pool(Tape<S>* tape, const Tensor<S>& x, int k, int stride, int pad);

/// Global average pooling: N x C x H x W -> N x C, spatial mean per channel.
template <class S>
Tensor<S> gap(Tape<S>* tape, const Tensor<S>& x);

template <class S>
Tensor<S> pointwise(Tape<S>* tape, Pointwise kind, const Tensor<S>& x);

inline constexpr double kLeakyReluSlope = 0.1;

/// Per-channel batch normalization. Train mode normalizes with batch
/// statistics over (N,H,W) and folds them into the running buffers with
/// `momentum`; eval mode applies the running statistics. Variance is biased
/// (divide by N*H*W) in both the normalization and the running buffer.
template <class S>
Tensor<S> batch_norm(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, Tensor<S>& running_mean, Tensor<S>& running_var,
                     BnMode mode, S eps, S momentum);

/// x: N x D, w: Dout x D, bias: optional Dout. Returns x * w^T + bias.
template <class S>
Tensor<S> linear(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias);

/// Softmax log-loss summed over the batch (max-subtracted for stability).
/// `mean_reduce` divides by the batch size instead.
template <class S>
Tensor<S> softmax_log_loss(Tape<S>* tape, const Tensor<S>& logits, const std::vector<int>& labels,
                           bool mean_reduce = false);

template <class S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b);

/// x: N x C x H x W scaled per sample and channel by s: N x C.
template <class S>
Tensor<S> scale_channels(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& s);

template <class S>
Tensor<S> reshape(Tape<S>* tape, const Tensor<S>& x, Shape new_shape);

/// Scalar dot of x with a fixed coefficient vector. Used to reduce an op
/// output to a scalar root for gradient checking.
template <class S>
Tensor<S> weighted_sum(Tape<S>* tape, const Tensor<S>& x, const std::vector<S>& coeffs);

}  // namespace hbmcn
