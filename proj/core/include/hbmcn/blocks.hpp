#pragma once

#include <random>

#include "hbmcn/ops.hpp"
#include "hbmcn/tensor.hpp"

namespace hbmcn {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <class S>
struct Conv2dLayer {
  Tensor<S> weight;  // Cout x Cin x kh x kw
  Tensor<S> bias;    // optional Cout vector (undefined when absent)
  int stride = 1;
  int pad = 0;
};

template <class S>
struct BatchNormLayer {
  Tensor<S> gamma;
  Tensor<S> beta;
  Tensor<S> running_mean;
  Tensor<S> running_var;
};

/// Squeeze-and-excitation gate: w1 reduces C -> C/ratio, w2 restores.
template <class S>
struct SeBlockParams {
  Tensor<S> w1;  // (C/ratio) x C
  Tensor<S> w2;  // C x (C/ratio)
  int ratio = 16;
};

/// Bottleneck residual block: 1x1 (carries the block stride) -> 3x3 -> 1x1
/// with the expand conv at 4x the bottleneck width. The optional SE gate
/// rescales the residual path output before the skip addition.
template <class S>
struct BottleneckBlock {
  Conv2dLayer<S> conv1, conv2, conv3;
  BatchNormLayer<S> bn1, bn2, bn3;
  bool has_projection = false;
  Conv2dLayer<S> proj_conv;
  BatchNormLayer<S> proj_bn;
  bool has_se = false;
  SeBlockParams<S> se;
};

/// Reduction (1x1 conv -> BN -> leaky ReLU, C -> feature_width) plus the
/// 1x1 classifier conv with bias.
template <class S>
struct HeadBlock {
  Conv2dLayer<S> reduction_conv;
  BatchNormLayer<S> reduction_bn;
  Conv2dLayer<S> classifier_conv;
};

template <class S>
Tensor<S> forward_bn(Tape<S>* tape, const Tensor<S>& x, BatchNormLayer<S>& bn, BnMode mode);

/// Gate then rescale: z = gap(y); s = sigmoid(w2 * relu(w1 * z)); out_c = s_c * y_c.
template <class S>
Tensor<S> se_block(Tape<S>* tape, const Tensor<S>& y, const SeBlockParams<S>& p);

/// Plain residual bottleneck (block.has_se must be false).
template <class S>
Tensor<S> bottleneck(Tape<S>* tape, const Tensor<S>& x, BottleneckBlock<S>& block, BnMode mode);

/// Bottleneck whose residual path is rescaled by the SE gate (has_se true).
template <class S>
Tensor<S> se_res_module(Tape<S>* tape, const Tensor<S>& x, BottleneckBlock<S>& block, BnMode mode);

/// N x C x 1 x 1 pooled input -> N x feature_width retrieval feature.
template <class S>
Tensor<S> reduction_feature(Tape<S>* tape, const Tensor<S>& pooled, HeadBlock<S>& head,
                            BnMode mode);

/// N x feature_width -> N x num_classes logits.
template <class S>
Tensor<S> classifier_logits(Tape<S>* tape, const Tensor<S>& feature, HeadBlock<S>& head);

enum class InitKind { kConvWeight, kLinearWeight, kBnGamma, kBnBeta, kBias };

/// He-style init: conv/linear weights ~ Normal(0, 2/fan_in); gamma = 1,
/// beta and biases = 0. Deterministic given the generator state.
template <class S>
std::vector<S> init_values(InitKind kind, const Shape& shape, std::mt19937_64& rng);

}  // namespace hbmcn
