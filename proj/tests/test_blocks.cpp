#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hbmcn/blocks.hpp"

using namespace hbmcn;

namespace {

template <class S>
Tensor<S> random_tensor(std::mt19937_64& rng, Shape shape, S lo = S(-1), S hi = S(1)) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  Tensor<S> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<S>(dist(rng));
  return t;
}

// Fresh pass-through batch norm (gamma 1, beta 0, mean 0, var 1).
template <class S>
BatchNormLayer<S> identity_bn(int64_t c) {
  BatchNormLayer<S> bn;
  bn.gamma = Tensor<S>::full({c}, S(1));
  bn.beta = Tensor<S>::zeros({c});
  bn.running_mean = Tensor<S>::zeros({c});
  bn.running_var = Tensor<S>::full({c}, S(1));
  return bn;
}

template <class S>
BottleneckBlock<S> zero_weight_block(int64_t c, int64_t width, bool with_se, int ratio) {
  BottleneckBlock<S> b;
  b.conv1.weight = Tensor<S>::zeros({width, c, 1, 1});
  b.bn1 = identity_bn<S>(width);
  b.conv2.weight = Tensor<S>::zeros({width, width, 3, 3});
  b.conv2.pad = 1;
  b.bn2 = identity_bn<S>(width);
  b.conv3.weight = Tensor<S>::zeros({c, width, 1, 1});
  b.bn3 = identity_bn<S>(c);
  if (with_se) {
    b.has_se = true;
    b.se.ratio = ratio;
    b.se.w1 = Tensor<S>::zeros({c / ratio, c});
    b.se.w2 = Tensor<S>::zeros({c, c / ratio});
  }
  return b;
}

}  // namespace

TEST_CASE("se_block: zero excitation weights gate every channel at one half") {
  std::mt19937_64 rng(1);
  Tensor<double> y = random_tensor<double>(rng, {2, 4, 3, 3});
  SeBlockParams<double> p;
  p.ratio = 2;
  p.w1 = random_tensor<double>(rng, {2, 4});
  p.w2 = Tensor<double>::zeros({4, 2});
  Tensor<double> out = se_block<double>(nullptr, y, p);
  for (int64_t i = 0; i < y.numel(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(0.5 * y.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("se_block: zero input stays zero") {
  std::mt19937_64 rng(2);
  Tensor<double> y = Tensor<double>::zeros({1, 4, 2, 2});
  SeBlockParams<double> p;
  p.ratio = 4;
  p.w1 = random_tensor<double>(rng, {1, 4});
  p.w2 = random_tensor<double>(rng, {4, 1});
  Tensor<double> out = se_block<double>(nullptr, y, p);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("se_block: identity excitation on a two-channel pixel") {
  // scalar chain oracle: z = [2,4], s = [sigmoid(2), sigmoid(4)]
  const double s2 = 1.0 / (1.0 + std::exp(-2.0));
  const double s4 = 1.0 / (1.0 + std::exp(-4.0));
  Tensor<double> y = Tensor<double>::from_values({1, 2, 1, 1}, {2.0, 4.0});
  SeBlockParams<double> p;
  p.ratio = 1;
  p.w1 = Tensor<double>::from_values({2, 2}, {1, 0, 0, 1});
  p.w2 = Tensor<double>::from_values({2, 2}, {1, 0, 0, 1});
  Tensor<double> out = se_block<double>(nullptr, y, p);
  CHECK(out.data()[0] == doctest::Approx(2.0 * s2).epsilon(1e-12));
  CHECK(out.data()[1] == doctest::Approx(4.0 * s4).epsilon(1e-12));
}

TEST_CASE("se_block: gate stays in (0,1) and scales each channel by a constant") {
  std::mt19937_64 rng(3);
  Tensor<double> y = random_tensor<double>(rng, {2, 8, 4, 3}, -3.0, 3.0);
  SeBlockParams<double> p;
  p.ratio = 4;
  p.w1 = random_tensor<double>(rng, {2, 8});
  p.w2 = random_tensor<double>(rng, {8, 2});
  Tensor<double> out = se_block<double>(nullptr, y, p);
  REQUIRE(out.shape() == y.shape());
  const int64_t hw = 12;
  for (int64_t nc = 0; nc < 2 * 8; ++nc) {
    // per-channel ratio constancy wherever the input is nonzero
    double gate = 0.0;
    bool have = false;
    for (int64_t j = 0; j < hw; ++j) {
      const double in = y.data()[nc * hw + j];
      if (in == 0.0) continue;
      const double r = out.data()[nc * hw + j] / in;
      if (!have) {
        gate = r;
        have = true;
      } else {
        CHECK(r == doctest::Approx(gate).epsilon(1e-9));
      }
    }
    REQUIRE(have);
    CHECK(gate > 0.0);
    CHECK(gate < 1.0);
  }
}

TEST_CASE("se_block: ratio must divide the channel count") {
  Tensor<double> y = Tensor<double>::zeros({1, 6, 2, 2});
  SeBlockParams<double> p;
  p.ratio = 4;
  p.w1 = Tensor<double>::zeros({1, 6});
  p.w2 = Tensor<double>::zeros({6, 1});
  CHECK_THROWS_AS(se_block<double>(nullptr, y, p), std::invalid_argument);
}

TEST_CASE("bottleneck: zero residual path with identity skip is a ReLU") {
  auto block = zero_weight_block<double>(4, 2, false, 2);
  std::mt19937_64 rng(4);
  Tensor<double> pos = random_tensor<double>(rng, {2, 4, 3, 3}, 0.0, 2.0);
  Tensor<double> out = bottleneck<double>(nullptr, pos, block, BnMode::kEval);
  for (int64_t i = 0; i < pos.numel(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(pos.data()[i]).epsilon(1e-12));
  }

  Tensor<double> neg = Tensor<double>::full({1, 4, 2, 2}, -1.0);
  Tensor<double> zout = bottleneck<double>(nullptr, neg, block, BnMode::kEval);
  for (int64_t i = 0; i < zout.numel(); ++i) CHECK(zout.data()[i] == 0.0);
}

TEST_CASE("bottleneck: stride-2 block halves the spatial extents") {
  std::mt19937_64 rng(5);
  BottleneckBlock<float> b;
  b.conv1.weight = random_tensor<float>(rng, {2, 4, 1, 1});
  b.conv1.stride = 2;
  b.bn1 = identity_bn<float>(2);
  b.conv2.weight = random_tensor<float>(rng, {2, 2, 3, 3});
  b.conv2.pad = 1;
  b.bn2 = identity_bn<float>(2);
  b.conv3.weight = random_tensor<float>(rng, {8, 2, 1, 1});
  b.bn3 = identity_bn<float>(8);
  b.has_projection = true;
  b.proj_conv.weight = random_tensor<float>(rng, {8, 4, 1, 1});
  b.proj_conv.stride = 2;
  b.proj_bn = identity_bn<float>(8);

  Tensor<float> x = random_tensor<float>(rng, {1, 4, 24, 12});
  Tensor<float> y = bottleneck<float>(nullptr, x, b, BnMode::kEval);
  CHECK(y.shape() == Shape{1, 8, 12, 6});
}

TEST_CASE("se_res_module: zero residual path reduces to a ReLU of the input") {
  auto block = zero_weight_block<double>(4, 2, true, 2);
  std::mt19937_64 rng(6);
  Tensor<double> pos = random_tensor<double>(rng, {2, 4, 3, 3}, 0.0, 2.0);
  Tensor<double> out = se_res_module<double>(nullptr, pos, block, BnMode::kEval);
  for (int64_t i = 0; i < pos.numel(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(pos.data()[i]).epsilon(1e-12));
  }
  Tensor<double> neg = Tensor<double>::full({1, 4, 2, 2}, -0.5);
  Tensor<double> zout = se_res_module<double>(nullptr, neg, block, BnMode::kEval);
  for (int64_t i = 0; i < zout.numel(); ++i) CHECK(zout.data()[i] == 0.0);

  // the module insists on its gate, the plain block refuses one
  CHECK_THROWS_AS(bottleneck<double>(nullptr, pos, block, BnMode::kEval), std::invalid_argument);
  auto plain = zero_weight_block<double>(4, 2, false, 2);
  CHECK_THROWS_AS(se_res_module<double>(nullptr, pos, plain, BnMode::kEval),
                  std::invalid_argument);
}

TEST_CASE("se_res_module: half gate on a unit residual path doubles through the skip") {
  // x = 1 -> residual path produces 2, gate 0.5 halves it, skip adds 1 -> relu(2) = 2
  BottleneckBlock<double> b;
  b.conv1.weight = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  b.bn1 = identity_bn<double>(1);
  b.conv2.weight = Tensor<double>::zeros({1, 1, 3, 3});
  b.conv2.weight.data()[4] = 2.0;  // center tap
  b.conv2.pad = 1;
  b.bn2 = identity_bn<double>(1);
  b.conv3.weight = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  b.bn3 = identity_bn<double>(1);
  b.has_se = true;
  b.se.ratio = 1;
  b.se.w1 = Tensor<double>::full({1, 1}, 1.0);
  b.se.w2 = Tensor<double>::zeros({1, 1});  // sigmoid(0) = 0.5
  Tensor<double> x = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  Tensor<double> out = se_res_module<double>(nullptr, x, b, BnMode::kEval);
  CHECK(out.item() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("se_res_module: output is elementwise non-negative") {
  std::mt19937_64 rng(7);
  BottleneckBlock<double> b;
  b.conv1.weight = random_tensor<double>(rng, {2, 4, 1, 1});
  b.bn1 = identity_bn<double>(2);
  b.conv2.weight = random_tensor<double>(rng, {2, 2, 3, 3});
  b.conv2.pad = 1;
  b.bn2 = identity_bn<double>(2);
  b.conv3.weight = random_tensor<double>(rng, {4, 2, 1, 1});
  b.bn3 = identity_bn<double>(4);
  b.has_se = true;
  b.se.ratio = 2;
  b.se.w1 = random_tensor<double>(rng, {2, 4});
  b.se.w2 = random_tensor<double>(rng, {4, 2});
  Tensor<double> x = random_tensor<double>(rng, {3, 4, 5, 4}, -2.0, 2.0);
  Tensor<double> out = se_res_module<double>(nullptr, x, b, BnMode::kTrain);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] >= 0.0);
}

TEST_CASE("reduction head: paper widths map to the 256-wide feature") {
  std::mt19937_64 rng(8);
  for (const int64_t c : {2048ll, 1024ll}) {
    HeadBlock<float> head;
    head.reduction_conv.weight = random_tensor<float>(rng, {256, c, 1, 1}, -0.01f, 0.01f);
    head.reduction_bn = identity_bn<float>(256);
    Tensor<float> pooled = random_tensor<float>(rng, {2, c, 1, 1});
    Tensor<float> f = reduction_feature<float>(nullptr, pooled, head, BnMode::kEval);
    CHECK(f.shape() == Shape{2, 256});
  }
}

TEST_CASE("reduction head: zero weights give a zero feature; channel count is checked") {
  HeadBlock<float> head;
  head.reduction_conv.weight = Tensor<float>::zeros({8, 16, 1, 1});
  head.reduction_bn = identity_bn<float>(8);
  Tensor<float> pooled = Tensor<float>::full({3, 16, 1, 1}, 1.0f);
  Tensor<float> f = reduction_feature<float>(nullptr, pooled, head, BnMode::kEval);
  for (int64_t i = 0; i < f.numel(); ++i) CHECK(f.data()[i] == 0.0f);

  Tensor<float> wrong = Tensor<float>::zeros({3, 8, 1, 1});
  CHECK_THROWS_AS(reduction_feature<float>(nullptr, wrong, head, BnMode::kEval),
                  std::invalid_argument);
}

TEST_CASE("classifier head: zero weights give the uniform loss, width follows num_classes") {
  HeadBlock<double> head;
  head.classifier_conv.weight = Tensor<double>::zeros({751, 256, 1, 1});
  head.classifier_conv.bias = Tensor<double>::zeros({751});
  std::mt19937_64 rng(9);
  Tensor<double> f = random_tensor<double>(rng, {3, 256});
  Tensor<double> logits = classifier_logits<double>(nullptr, f, head);
  CHECK(logits.shape() == Shape{3, 751});
  Tensor<double> loss = softmax_log_loss<double>(nullptr, logits, {5, 0, 700}, false);
  CHECK(std::abs(loss.item() - 3.0 * std::log(751.0)) <= 1e-9);
}

TEST_CASE("classifier head: unit feature against a basis row") {
  HeadBlock<float> head;
  head.classifier_conv.weight = Tensor<float>::zeros({3, 4, 1, 1});
  head.classifier_conv.weight.data()[0] = 1.0f;  // row 0 = e0
  head.classifier_conv.bias = Tensor<float>::zeros({3});
  Tensor<float> f = Tensor<float>::from_values({1, 4}, {1, 0, 0, 0});
  Tensor<float> logits = classifier_logits<float>(nullptr, f, head);
  CHECK(logits.data()[0] == 1.0f);
  CHECK(logits.data()[1] == 0.0f);
  CHECK(logits.data()[2] == 0.0f);
}

TEST_CASE("init: batch-norm affine defaults and determinism") {
  std::mt19937_64 a(12345), b(12345);
  const auto gamma = init_values<float>(InitKind::kBnGamma, {16}, a);
  const auto beta = init_values<float>(InitKind::kBnBeta, {16}, a);
  for (float v : gamma) CHECK(v == 1.0f);
  for (float v : beta) CHECK(v == 0.0f);

  const auto w1 = init_values<float>(InitKind::kConvWeight, {8, 4, 3, 3}, a);
  std::mt19937_64 a2(12345);
  (void)init_values<float>(InitKind::kBnGamma, {16}, a2);
  (void)init_values<float>(InitKind::kBnBeta, {16}, a2);
  const auto w2 = init_values<float>(InitKind::kConvWeight, {8, 4, 3, 3}, a2);
  REQUIRE(w1.size() == w2.size());
  for (size_t i = 0; i < w1.size(); ++i) CHECK(w1[i] == w2[i]);
  (void)b;
}

TEST_CASE("init: sample statistics match Normal(0, 2/fan_in) for fan_in 64") {
  std::mt19937_64 rng(424242);
  // 64 = 16 channels * 2x2 kernel; 1563 * 64 = 100032 samples
  const auto values = init_values<double>(InitKind::kConvWeight, {1563, 16, 2, 2}, rng);
  REQUIRE(values.size() >= 100000);
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(values.size());
  const double target = 2.0 / 64.0;
  CHECK(std::abs(mean) <= 0.01);
  CHECK(var >= 0.95 * target);
  CHECK(var <= 1.05 * target);
}
