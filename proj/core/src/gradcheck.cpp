#include "hbmcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hbmcn/blocks.hpp"
#include "hbmcn/model.hpp"
#include "hbmcn/ops.hpp"

namespace hbmcn {

namespace {

double central_difference(Tensor<double>& target, int64_t coord,
                          const std::function<double()>& loss, double epsilon) {
  double& slot = target.data()[coord];
  const double saved = slot;
  slot = saved + epsilon;
  const double plus = loss();
  slot = saved - epsilon;
  const double minus = loss();
  slot = saved;
  return (plus - minus) / (2.0 * epsilon);
}

}  // namespace

double finite_diff_max_rel_err(Tensor<double>& target, const std::vector<int64_t>& coords,
                               const std::vector<double>& analytic,
                               const std::function<double()>& loss, double epsilon,
                               double refine_below) {
  if (coords.size() != analytic.size()) {
    throw std::invalid_argument("finite_diff: one analytic value per coordinate");
  }
  double worst = 0.0;
  for (size_t i = 0; i < coords.size(); ++i) {
    double fd = central_difference(target, coords[i], loss, epsilon);
    double rel = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    if (refine_below > 0.0 && rel > refine_below) {
      for (double eps : {epsilon / 10.0, epsilon / 100.0}) {
        fd = central_difference(target, coords[i], loss, eps);
        rel = std::min(rel, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
        if (rel <= refine_below) break;
      }
    }
    worst = std::max(worst, rel);
  }
  return worst;
}

namespace {

using T = Tensor<double>;

T rand_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  T t(shape, requires_grad);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = dist(rng);
  return t;
}

std::vector<double> rand_coeffs(std::mt19937_64& rng, int64_t n) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> out(static_cast<size_t>(n));
  for (double& v : out) v = dist(rng);
  return out;
}

struct CheckContext {
  GradCheckOptions opt;
  std::mt19937_64 rng;
  std::vector<GradCheckResult> results;

  explicit CheckContext(const GradCheckOptions& options) : opt(options), rng(options.seed) {}

  // Runs forward once with a tape for the analytic gradients, then probes
  // every (or `coords_cap` sampled) coordinate of each listed tensor with
  // central differences of the tape-free forward.
  void run(const std::string& name, std::vector<T> grads_of,
           const std::function<T(Tape<double>*)>& forward,
           int64_t coords_cap = 0, const std::function<void()>& post_backward = {}) {
    for (T& t : grads_of) t.zero_grad();
    Tape<double> tape;
    T root = forward(&tape);
    tape.backward(root);
    if (post_backward) post_backward();

    const auto loss = [&forward]() { return forward(nullptr).item(); };
    GradCheckResult result;
    result.name = name;
    for (T& t : grads_of) {
      std::vector<int64_t> coords;
      if (coords_cap <= 0 || coords_cap >= t.numel()) {
        coords.resize(static_cast<size_t>(t.numel()));
        for (int64_t i = 0; i < t.numel(); ++i) coords[static_cast<size_t>(i)] = i;
      } else {
        std::uniform_int_distribution<int64_t> pick(0, t.numel() - 1);
        for (int64_t i = 0; i < coords_cap; ++i) coords.push_back(pick(rng));
      }
      std::vector<double> analytic;
      analytic.reserve(coords.size());
      for (int64_t c : coords) analytic.push_back(t.grad()[c]);
      result.max_rel_err = std::max(
          result.max_rel_err,
          finite_diff_max_rel_err(t, coords, analytic, loss, opt.epsilon, opt.tolerance));
      result.coords_checked += static_cast<int64_t>(coords.size());
    }
    results.push_back(std::move(result));
  }
};

BatchNormLayer<double> make_bn(std::mt19937_64& rng, int64_t c, bool randomized_stats) {
  BatchNormLayer<double> bn;
  bn.gamma = rand_tensor(rng, Shape{c}, 0.5, 1.5, true);
  bn.beta = rand_tensor(rng, Shape{c}, -0.5, 0.5, true);
  bn.running_mean = randomized_stats ? rand_tensor(rng, Shape{c}, -0.2, 0.2, false)
                                     : Tensor<double>::zeros(Shape{c});
  bn.running_var = randomized_stats ? rand_tensor(rng, Shape{c}, 0.5, 1.5, false)
                                    : Tensor<double>::full(Shape{c}, 1.0);
  return bn;
}

BottleneckBlock<double> make_block(std::mt19937_64& rng, int64_t cin, int64_t width, int64_t cout,
                                   int stride, bool with_se, int ratio) {
  BottleneckBlock<double> b;
  b.conv1.weight = rand_tensor(rng, Shape{width, cin, 1, 1}, -0.5, 0.5, true);
  b.conv1.stride = stride;
  b.bn1 = make_bn(rng, width, false);
  b.conv2.weight = rand_tensor(rng, Shape{width, width, 3, 3}, -0.3, 0.3, true);
  b.conv2.pad = 1;
  b.bn2 = make_bn(rng, width, false);
  b.conv3.weight = rand_tensor(rng, Shape{cout, width, 1, 1}, -0.5, 0.5, true);
  b.bn3 = make_bn(rng, cout, false);
  if (stride != 1 || cin != cout) {
    b.has_projection = true;
    b.proj_conv.weight = rand_tensor(rng, Shape{cout, cin, 1, 1}, -0.5, 0.5, true);
    b.proj_conv.stride = stride;
    b.proj_bn = make_bn(rng, cout, false);
  }
  if (with_se) {
    b.has_se = true;
    b.se.ratio = ratio;
    b.se.w1 = rand_tensor(rng, Shape{cout / ratio, cout}, -0.5, 0.5, true);
    b.se.w2 = rand_tensor(rng, Shape{cout, cout / ratio}, -0.5, 0.5, true);
  }
  return b;
}

std::vector<T> block_params(BottleneckBlock<double>& b) {
  std::vector<T> out = {b.conv1.weight, b.bn1.gamma, b.bn1.beta,  b.conv2.weight, b.bn2.gamma,
                        b.bn2.beta,     b.conv3.weight, b.bn3.gamma, b.bn3.beta};
  if (b.has_projection) {
    out.push_back(b.proj_conv.weight);
    out.push_back(b.proj_bn.gamma);
    out.push_back(b.proj_bn.beta);
  }
  if (b.has_se) {
    out.push_back(b.se.w1);
    out.push_back(b.se.w2);
  }
  return out;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options) {
  CheckContext ctx(options);
  auto& rng = ctx.rng;

  {  // conv2d, general path (3x3, stride 2, pad 1, with bias)
    T x = rand_tensor(rng, {2, 3, 6, 5}, -1, 1, true);
    T w = rand_tensor(rng, {4, 3, 3, 3}, -1, 1, true);
    T b = rand_tensor(rng, {4}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, 2 * 4 * 3 * 3);
    std::function<void()> inject;
    if (options.inject_conv_weight_sign_error) {
      inject = [w]() mutable {
        for (int64_t i = 0; i < w.numel(); ++i) w.grad()[i] = -w.grad()[i];
      };
    }
    ctx.run("conv2d", {x, w, b},
            [=](Tape<double>* tape) mutable {
              return weighted_sum(tape, conv2d<double>(tape, x, w, &b, 2, 1), coeffs);
            },
            0, inject);
  }
  {  // conv2d, 1x1 fast path
    T x = rand_tensor(rng, {2, 4, 3, 3}, -1, 1, true);
    T w = rand_tensor(rng, {5, 4, 1, 1}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, 2 * 5 * 3 * 3);
    ctx.run("conv2d_1x1", {x, w}, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, conv2d<double>(tape, x, w, nullptr, 1, 0), coeffs);
    });
  }
  {  // max_pool (distinct random values keep the argmax stable under +/- eps)
    T x = rand_tensor(rng, {2, 3, 6, 6}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, 2 * 3 * 3 * 3);
    ctx.run("max_pool", {x}, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, max_pool(tape, x, 3, 2, 1), coeffs);
    });
  }
  {  // gap
    T x = rand_tensor(rng, {2, 4, 3, 5}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, 2 * 4);
    ctx.run("gap", {x}, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, gap(tape, x), coeffs);
    });
  }
  for (auto [kind, name] : {std::pair{Pointwise::kRelu, "relu"},
                            std::pair{Pointwise::kSigmoid, "sigmoid"},
                            std::pair{Pointwise::kLeakyRelu, "leaky_relu"}}) {
    T x = rand_tensor(rng, {2, 3, 4, 4}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, x.numel());
    ctx.run(name, {x}, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, pointwise(tape, kind, x), coeffs);
    });
  }
  {  // batch_norm, train mode
    T x = rand_tensor(rng, {3, 4, 5, 2}, -1, 1, true);
    auto bn = make_bn(rng, 4, false);
    auto coeffs = rand_coeffs(rng, x.numel());
    ctx.run("batch_norm_train", {x, bn.gamma, bn.beta}, [=](Tape<double>* tape) mutable {
      T y = batch_norm<double>(tape, x, bn.gamma, bn.beta, bn.running_mean, bn.running_var,
                               BnMode::kTrain, 1e-5, 0.1);
      return weighted_sum(tape, y, coeffs);
    });
  }
  {  // batch_norm, eval mode (running statistics fixed)
    T x = rand_tensor(rng, {3, 4, 5, 2}, -1, 1, true);
    auto bn = make_bn(rng, 4, true);
    auto coeffs = rand_coeffs(rng, x.numel());
    ctx.run("batch_norm_eval", {x, bn.gamma, bn.beta}, [=](Tape<double>* tape) mutable {
      T y = batch_norm<double>(tape, x, bn.gamma, bn.beta, bn.running_mean, bn.running_var,
                               BnMode::kEval, 1e-5, 0.1);
      return weighted_sum(tape, y, coeffs);
    });
  }
  {  // linear with bias
    T x = rand_tensor(rng, {3, 5}, -1, 1, true);
    T w = rand_tensor(rng, {4, 5}, -1, 1, true);
    T b = rand_tensor(rng, {4}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, 3 * 4);
    ctx.run("linear", {x, w, b}, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, linear<double>(tape, x, w, &b), coeffs);
    });
  }
  {  // softmax log-loss (the loss is already scalar)
    T logits = rand_tensor(rng, {4, 7}, -2, 2, true);
    std::vector<int> labels = {3, 0, 6, 2};
    ctx.run("softmax_log_loss", {logits}, [=](Tape<double>* tape) mutable {
      return softmax_log_loss(tape, logits, labels, false);
    });
  }
  {  // add
    T a = rand_tensor(rng, {2, 3, 4, 2}, -1, 1, true);
    T b = rand_tensor(rng, {2, 3, 4, 2}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, a.numel());
    ctx.run("add", {a, b}, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, add(tape, a, b), coeffs);
    });
  }
  {  // scale_channels
    T x = rand_tensor(rng, {2, 5, 3, 3}, -1, 1, true);
    T s = rand_tensor(rng, {2, 5}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, x.numel());
    ctx.run("scale_channels", {x, s}, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, scale_channels(tape, x, s), coeffs);
    });
  }
  {  // reshape
    T x = rand_tensor(rng, {2, 3, 4}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, x.numel());
    ctx.run("reshape", {x}, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, reshape(tape, x, Shape{6, 4}), coeffs);
    });
  }
  {  // composed SE block
    T y = rand_tensor(rng, {2, 8, 3, 3}, -1, 1, true);
    SeBlockParams<double> se;
    se.ratio = 4;
    se.w1 = rand_tensor(rng, {2, 8}, -1, 1, true);
    se.w2 = rand_tensor(rng, {8, 2}, -1, 1, true);
    auto coeffs = rand_coeffs(rng, y.numel());
    ctx.run("se_block", {y, se.w1, se.w2}, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, se_block(tape, y, se), coeffs);
    });
  }
  {  // composed bottleneck (projection + stride, train-mode BN)
    T x = rand_tensor(rng, {2, 6, 6, 6}, -1, 1, true);
    auto block = make_block(rng, 6, 2, 8, 2, false, 4);
    auto coeffs = rand_coeffs(rng, 2 * 8 * 3 * 3);
    std::vector<T> targets = {x};
    for (T& p : block_params(block)) targets.push_back(p);
    ctx.run("bottleneck", targets, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, bottleneck(tape, x, block, BnMode::kTrain), coeffs);
    });
  }
  {  // composed SE-Res module
    T x = rand_tensor(rng, {2, 6, 6, 6}, -1, 1, true);
    auto block = make_block(rng, 6, 2, 8, 2, true, 4);
    auto coeffs = rand_coeffs(rng, 2 * 8 * 3 * 3);
    std::vector<T> targets = {x};
    for (T& p : block_params(block)) targets.push_back(p);
    ctx.run("se_res_module", targets, [=](Tape<double>* tape) mutable {
      return weighted_sum(tape, se_res_module(tape, x, block, BnMode::kTrain), coeffs);
    });
  }
  {  // full nano-scale model joint loss, sampled coordinates
    ModelConfig cfg = nano_model_config();
    cfg.num_classes = 8;
    Model<double> model = build_model<double>(cfg, options.seed + 1);
    T batch = rand_tensor(rng, {2, 3, cfg.input_h, cfg.input_w}, -1, 1, true);
    std::vector<int> labels = {1, 6};
    std::vector<T> targets = {batch};
    for (Parameter<double>& p : model.params) targets.push_back(p.value);
    ctx.run("full_nano_model_loss", targets,
            [&model, batch, labels](Tape<double>* tape) mutable {
              if (tape) {
                std::vector<T> logits = forward_train(model, *tape, batch);
                return joint_loss(tape, logits, labels, false);
              }
              std::vector<T> features =
                  forward_features(model, static_cast<Tape<double>*>(nullptr), batch,
                                   BnMode::kTrain);
              std::vector<T> logits;
              logits.reserve(features.size());
              for (size_t i = 0; i < features.size(); ++i) {
                logits.push_back(classifier_logits(static_cast<Tape<double>*>(nullptr),
                                                   features[i], model.heads[i].block));
              }
              return joint_loss(static_cast<Tape<double>*>(nullptr), logits, labels, false);
            },
            2);
  }

  return ctx.results;
}

bool all_checks_pass(const std::vector<GradCheckResult>& results, double tolerance) {
  return std::all_of(results.begin(), results.end(),
                     [tolerance](const GradCheckResult& r) { return r.passed(tolerance); });
}

}  // namespace hbmcn
