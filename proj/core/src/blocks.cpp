#include "hbmcn/blocks.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hbmcn {

template <class S>
Tensor<S> forward_bn(Tape<S>* tape, const Tensor<S>& x, BatchNormLayer<S>& bn, BnMode mode) {
  return batch_norm(tape, x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, mode,
                    static_cast<S>(kBnEps), static_cast<S>(kBnMomentum));
}

template <class S>
Tensor<S> se_block(Tape<S>* tape, const Tensor<S>& y, const SeBlockParams<S>& p) {
  if (y.rank() != 4) throw std::invalid_argument("se_block: input must be N x C x H x W");
  const int64_t c = y.extent(1);
  if (p.ratio <= 0 || c % p.ratio != 0) {
    throw std::invalid_argument("se_block: ratio " + std::to_string(p.ratio) +
                                " does not divide " + std::to_string(c) + " channels");
  }
  Tensor<S> z = gap(tape, y);
  Tensor<S> h = pointwise(tape, Pointwise::kRelu, linear<S>(tape, z, p.w1, nullptr));
  Tensor<S> s = pointwise(tape, Pointwise::kSigmoid, linear<S>(tape, h, p.w2, nullptr));
  return scale_channels(tape, y, s);
}

namespace {

template <class S>
Tensor<S> residual_forward(Tape<S>* tape, const Tensor<S>& x, BottleneckBlock<S>& block,
                           BnMode mode) {
  Tensor<S> h = conv2d<S>(tape, x, block.conv1.weight, nullptr, block.conv1.stride, block.conv1.pad);
  h = pointwise(tape, Pointwise::kRelu, forward_bn(tape, h, block.bn1, mode));
  h = conv2d<S>(tape, h, block.conv2.weight, nullptr, block.conv2.stride, block.conv2.pad);
  h = pointwise(tape, Pointwise::kRelu, forward_bn(tape, h, block.bn2, mode));
  h = conv2d<S>(tape, h, block.conv3.weight, nullptr, block.conv3.stride, block.conv3.pad);
  h = forward_bn(tape, h, block.bn3, mode);
  if (block.has_se) h = se_block(tape, h, block.se);
  Tensor<S> skip = x;
  if (block.has_projection) {
    skip = conv2d<S>(tape, x, block.proj_conv.weight, nullptr, block.proj_conv.stride,
                     block.proj_conv.pad);
    skip = forward_bn(tape, skip, block.proj_bn, mode);
  }
  return pointwise(tape, Pointwise::kRelu, add(tape, h, skip));
}

}  // namespace

template <class S>
Tensor<S> bottleneck(Tape<S>* tape, const Tensor<S>& x, BottleneckBlock<S>& block, BnMode mode) {
  if (block.has_se) throw std::invalid_argument("bottleneck: block carries an SE gate");
  return residual_forward(tape, x, block, mode);
}

template <class S>
Tensor<S> se_res_module(Tape<S>* tape, const Tensor<S>& x, BottleneckBlock<S>& block,
                        BnMode mode) {
  if (!block.has_se) throw std::invalid_argument("se_res_module: block has no SE gate");
  return residual_forward(tape, x, block, mode);
}

template <class S>
Tensor<S> reduction_feature(Tape<S>* tape, const Tensor<S>& pooled, HeadBlock<S>& head,
                            BnMode mode) {
  if (pooled.rank() != 4 || pooled.extent(2) != 1 || pooled.extent(3) != 1) {
    throw std::invalid_argument("reduction_feature: input must be N x C x 1 x 1");
  }
  if (pooled.extent(1) != head.reduction_conv.weight.extent(1)) {
    throw std::invalid_argument("reduction_feature: unexpected channel count " +
                                std::to_string(pooled.extent(1)));
  }
  Tensor<S> h = conv2d<S>(tape, pooled, head.reduction_conv.weight, nullptr, 1, 0);
  h = forward_bn(tape, h, head.reduction_bn, mode);
  h = pointwise(tape, Pointwise::kLeakyRelu, h);
  return reshape(tape, h, Shape{h.extent(0), h.extent(1)});
}

template <class S>
Tensor<S> classifier_logits(Tape<S>* tape, const Tensor<S>& feature, HeadBlock<S>& head) {
  if (feature.rank() != 2) throw std::invalid_argument("classifier_logits: input must be N x D");
  if (feature.extent(1) != head.classifier_conv.weight.extent(1)) {
    throw std::invalid_argument("classifier_logits: feature width mismatch");
  }
  Tensor<S> f4 = reshape(tape, feature, Shape{feature.extent(0), feature.extent(1), 1, 1});
  Tensor<S> logits = conv2d<S>(tape, f4, head.classifier_conv.weight, &head.classifier_conv.bias,
                               1, 0);
  return reshape(tape, logits, Shape{logits.extent(0), logits.extent(1)});
}

template <class S>
std::vector<S> init_values(InitKind kind, const Shape& shape, std::mt19937_64& rng) {
  const int64_t n = shape_numel(shape);
  std::vector<S> out(static_cast<size_t>(n));
  switch (kind) {
    case InitKind::kConvWeight:
    case InitKind::kLinearWeight: {
      int64_t fan_in = 0;
      if (kind == InitKind::kConvWeight) {
        if (shape.size() != 4) throw std::invalid_argument("init: conv weight must be rank 4");
        fan_in = shape[1] * shape[2] * shape[3];
      } else {
        if (shape.size() != 2) throw std::invalid_argument("init: linear weight must be rank 2");
        fan_in = shape[1];
      }
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (S& v : out) v = static_cast<S>(dist(rng));
      break;
    }
    case InitKind::kBnGamma:
      for (S& v : out) v = S(1);
      break;
    case InitKind::kBnBeta:
    case InitKind::kBias:
      break;  // zeros
  }
  return out;
}

#define HBMCN_INSTANTIATE_BLOCKS(S)                                                            \
  template Tensor<S> forward_bn<S>(Tape<S>*, const Tensor<S>&, BatchNormLayer<S>&, BnMode);    \
  template Tensor<S> se_block<S>(Tape<S>*, const Tensor<S>&, const SeBlockParams<S>&);         \
  template Tensor<S> bottleneck<S>(Tape<S>*, const Tensor<S>&, BottleneckBlock<S>&, BnMode);   \
  template Tensor<S> se_res_module<S>(Tape<S>*, const Tensor<S>&, BottleneckBlock<S>&,         \
                                      BnMode);                                                 \
  template Tensor<S> reduction_feature<S>(Tape<S>*, const Tensor<S>&, HeadBlock<S>&, BnMode);  \
  template Tensor<S> classifier_logits<S>(Tape<S>*, const Tensor<S>&, HeadBlock<S>&);          \
  template std::vector<S> init_values<S>(InitKind, const Shape&, std::mt19937_64&);

HBMCN_INSTANTIATE_BLOCKS(float)
HBMCN_INSTANTIATE_BLOCKS(double)

#undef HBMCN_INSTANTIATE_BLOCKS

}  // namespace hbmcn
