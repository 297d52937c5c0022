#include "hbmcn/model.hpp"

#include <stdexcept>

namespace hbmcn {

const char* branch_kind_name(BranchKind kind) {
  return kind == BranchKind::kRes ? "res" : "se_res";
}

const char* head_mode_name(HeadMode mode) {
  switch (mode) {
    case HeadMode::kStage5Last: return "stage5_last";
    case HeadMode::kTwoLevel: return "two_level";
    case HeadMode::kMultiLevel: return "multi_level";
  }
  return "?";
}

BranchKind branch_kind_from_name(const std::string& name) {
  if (name == "res") return BranchKind::kRes;
  if (name == "se_res") return BranchKind::kSeRes;
  throw std::invalid_argument("unknown branch kind '" + name + "'");
}

HeadMode head_mode_from_name(const std::string& name) {
  if (name == "stage5_last") return HeadMode::kStage5Last;
  if (name == "two_level") return HeadMode::kTwoLevel;
  if (name == "multi_level") return HeadMode::kMultiLevel;
  throw std::invalid_argument("unknown head mode '" + name + "'");
}

int ModelConfig::heads_per_branch() const {
  switch (head_mode) {
    case HeadMode::kStage5Last: return 1;
    case HeadMode::kTwoLevel: return 2;
    case HeadMode::kMultiLevel: return 1 + stage_blocks[3];
  }
  return 0;
}

int ModelConfig::head_count() const {
  return static_cast<int>(branches.size()) * heads_per_branch();
}

int ModelConfig::feature_length() const { return head_count() * feature_width; }

void ModelConfig::validate() const {
  if (input_h < 32 || input_w < 16) {
    throw std::invalid_argument("ModelConfig: input smaller than the stem can downsample");
  }
  if (stem_width < 1) throw std::invalid_argument("ModelConfig: stem width must be positive");
  for (int wdt : stage_widths) {
    if (wdt < 4 || wdt % 4 != 0) {
      throw std::invalid_argument("ModelConfig: stage widths must be positive multiples of 4");
    }
  }
  for (int b : stage_blocks) {
    if (b < 1) throw std::invalid_argument("ModelConfig: each stage needs at least one block");
  }
  if (stage5_stride != 1 && stage5_stride != 2) {
    throw std::invalid_argument("ModelConfig: stage5_stride must be 1 or 2");
  }
  if (num_classes < 1) throw std::invalid_argument("ModelConfig: num_classes must be positive");
  if (feature_width < 1) throw std::invalid_argument("ModelConfig: feature_width must be positive");
  if (branches.empty()) throw std::invalid_argument("ModelConfig: at least one branch required");
  const bool has_se = std::any_of(branches.begin(), branches.end(),
                                  [](BranchKind k) { return k == BranchKind::kSeRes; });
  if (has_se) {
    for (int stage = 2; stage < 4; ++stage) {
      if (se_ratio <= 0 || stage_widths[static_cast<size_t>(stage)] % se_ratio != 0) {
        throw std::invalid_argument("ModelConfig: se_ratio must divide the branch stage widths");
      }
    }
  }
}

ModelConfig paper_model_config() { return ModelConfig{}; }

ModelConfig nano_model_config() {
  ModelConfig cfg;
  cfg.input_h = 128;
  cfg.input_w = 64;
  cfg.stem_width = 8;
  cfg.stage_widths = {32, 64, 128, 256};
  cfg.stage_blocks = {1, 1, 2, 2};
  cfg.num_classes = 32;  // placeholder; training infers the real count
  cfg.feature_width = 32;
  cfg.se_ratio = 4;
  return cfg;
}

namespace {

std::array<int, 2> conv_out(std::array<int, 2> in, int k, int stride, int pad) {
  return {(in[0] + 2 * pad - k) / stride + 1, (in[1] + 2 * pad - k) / stride + 1};
}

}  // namespace

StagePlan plan_shapes(const ModelConfig& cfg) {
  StagePlan plan;
  plan.stem = conv_out({cfg.input_h, cfg.input_w}, 7, 2, 3);
  plan.pooled = conv_out(plan.stem, 3, 2, 1);
  std::array<int, 2> cur = plan.pooled;
  const std::array<int, 4> strides = {1, 2, 2, cfg.stage5_stride};
  for (int s = 0; s < 4; ++s) {
    cur = conv_out(cur, 1, strides[static_cast<size_t>(s)], 0);
    plan.stages[static_cast<size_t>(s)] = cur;
  }
  return plan;
}

template <class S>
Parameter<S>* Model<S>::find_param(const std::string& name) {
  for (Parameter<S>& p : params) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <class S>
std::vector<std::string> Model<S>::param_names() const {
  std::vector<std::string> names;
  names.reserve(params.size());
  for (const Parameter<S>& p : params) names.push_back(p.name);
  return names;
}

template <class S>
int64_t Model<S>::param_count() const {
  int64_t n = 0;
  for (const Parameter<S>& p : params) n += p.value.numel();
  return n;
}

namespace {

bool is_no_decay(InitKind kind) {
  return kind == InitKind::kBnGamma || kind == InitKind::kBnBeta || kind == InitKind::kBias;
}

template <class S>
class ModelBuilder {
 public:
  ModelBuilder(Model<S>& m, uint64_t seed) : m_(m), rng_(seed) {}

  Tensor<S> param(const std::string& name, InitKind kind, Shape shape, bool new_branch) {
    Tensor<S> t = Tensor<S>::from_values(shape, init_values<S>(kind, shape, rng_));
    t.set_requires_grad(true);
    Parameter<S> p;
    p.name = name;
    p.value = t;
    p.momentum.assign(static_cast<size_t>(t.numel()), S(0));
    p.weight_decay = !is_no_decay(kind);
    p.new_branch = new_branch;
    m_.params.push_back(std::move(p));
    return t;
  }

  Tensor<S> state(const std::string& name, int64_t c, S fill) {
    Tensor<S> t = Tensor<S>::full(Shape{c}, fill);
    m_.state.push_back(NamedState<S>{name, t});
    return t;
  }

  Conv2dLayer<S> conv(const std::string& prefix, int64_t cout, int64_t cin, int k, int stride,
                      int pad, bool with_bias, bool new_branch) {
    Conv2dLayer<S> layer;
    layer.weight = param(prefix + ".weight", InitKind::kConvWeight, Shape{cout, cin, k, k},
                         new_branch);
    if (with_bias) layer.bias = param(prefix + ".bias", InitKind::kBias, Shape{cout}, new_branch);
    layer.stride = stride;
    layer.pad = pad;
    return layer;
  }

  BatchNormLayer<S> bn(const std::string& prefix, int64_t c, bool new_branch) {
    BatchNormLayer<S> layer;
    layer.gamma = param(prefix + ".gamma", InitKind::kBnGamma, Shape{c}, new_branch);
    layer.beta = param(prefix + ".beta", InitKind::kBnBeta, Shape{c}, new_branch);
    layer.running_mean = state(prefix + ".running_mean", c, S(0));
    layer.running_var = state(prefix + ".running_var", c, S(1));
    return layer;
  }

  BottleneckBlock<S> block(const std::string& prefix, int64_t cin, int64_t width, int64_t cout,
                           int stride, bool with_se, int se_ratio, bool new_branch) {
    BottleneckBlock<S> b;
    b.conv1 = conv(prefix + ".conv1", width, cin, 1, stride, 0, false, new_branch);
    b.bn1 = bn(prefix + ".bn1", width, new_branch);
    b.conv2 = conv(prefix + ".conv2", width, width, 3, 1, 1, false, new_branch);
    b.bn2 = bn(prefix + ".bn2", width, new_branch);
    b.conv3 = conv(prefix + ".conv3", cout, width, 1, 1, 0, false, new_branch);
    b.bn3 = bn(prefix + ".bn3", cout, new_branch);
    if (stride != 1 || cin != cout) {
      b.has_projection = true;
      b.proj_conv = conv(prefix + ".proj", cout, cin, 1, stride, 0, false, new_branch);
      b.proj_bn = bn(prefix + ".proj_bn", cout, new_branch);
    }
    if (with_se) {
      b.has_se = true;
      b.se.ratio = se_ratio;
      b.se.w1 = param(prefix + ".se.w1", InitKind::kLinearWeight, Shape{cout / se_ratio, cout},
                      new_branch);
      b.se.w2 = param(prefix + ".se.w2", InitKind::kLinearWeight, Shape{cout, cout / se_ratio},
                      new_branch);
    }
    return b;
  }

  std::vector<BottleneckBlock<S>> stage(const std::string& prefix, int blocks, int64_t cin,
                                        int64_t cout, int first_stride, bool with_se, int se_ratio,
                                        bool new_branch) {
    std::vector<BottleneckBlock<S>> out;
    out.reserve(static_cast<size_t>(blocks));
    for (int i = 0; i < blocks; ++i) {
      const int64_t in_ch = i == 0 ? cin : cout;
      const int stride = i == 0 ? first_stride : 1;
      out.push_back(block(prefix + "." + std::to_string(i), in_ch, cout / 4, cout, stride, with_se,
                          se_ratio, new_branch));
    }
    return out;
  }

  HeadBlock<S> head(const std::string& prefix, int64_t cin, int64_t feature_width,
                    int64_t num_classes) {
    HeadBlock<S> h;
    h.reduction_conv = conv(prefix + ".reduction.conv", feature_width, cin, 1, 1, 0, false, true);
    h.reduction_bn = bn(prefix + ".reduction.bn", feature_width, true);
    h.classifier_conv = conv(prefix + ".classifier.conv", num_classes, feature_width, 1, 1, 0,
                             true, true);
    return h;
  }

 private:
  Model<S>& m_;
  std::mt19937_64 rng_;
};

}  // namespace

template <class S>
Model<S> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model<S> m;
  m.cfg = cfg;
  ModelBuilder<S> b(m, seed);

  m.stem_conv = b.conv("stem.conv", cfg.stem_width, 3, 7, 2, 3, false, false);
  m.stem_bn = b.bn("stem.bn", cfg.stem_width, false);
  m.stage2 = b.stage("stage2", cfg.stage_blocks[0], cfg.stem_width, cfg.stage_widths[0], 1, false,
                     cfg.se_ratio, false);
  m.stage3 = b.stage("stage3", cfg.stage_blocks[1], cfg.stage_widths[0], cfg.stage_widths[1], 2,
                     false, cfg.se_ratio, false);

  for (size_t i = 0; i < cfg.branches.size(); ++i) {
    const BranchKind kind = cfg.branches[i];
    const bool se = kind == BranchKind::kSeRes;
    typename Model<S>::Branch branch;
    branch.kind = kind;
    branch.prefix = "branch" + std::to_string(i) + "_" + branch_kind_name(kind);
    branch.stage4 = b.stage(branch.prefix + ".stage4", cfg.stage_blocks[2], cfg.stage_widths[1],
                            cfg.stage_widths[2], 2, se, cfg.se_ratio, se);
    branch.stage5 = b.stage(branch.prefix + ".stage5", cfg.stage_blocks[3], cfg.stage_widths[2],
                            cfg.stage_widths[3], cfg.stage5_stride, se, cfg.se_ratio, se);
    m.branches.push_back(std::move(branch));
  }

  for (size_t i = 0; i < m.branches.size(); ++i) {
    const std::string& prefix = m.branches[i].prefix;
    auto add_head = [&](const std::string& tap_name, int tap, int64_t cin) {
      typename Model<S>::Head h;
      h.name = "head." + prefix + "." + tap_name;
      h.branch_index = static_cast<int>(i);
      h.tap = tap;
      h.block = b.head(h.name, cin, cfg.feature_width, cfg.num_classes);
      m.heads.push_back(std::move(h));
    };
    const int64_t c4 = cfg.stage_widths[2];
    const int64_t c5 = cfg.stage_widths[3];
    switch (cfg.head_mode) {
      case HeadMode::kStage5Last:
        add_head("s5_last", cfg.stage_blocks[3] - 1, c5);
        break;
      case HeadMode::kTwoLevel:
        add_head("s4_last", -1, c4);
        add_head("s5_last", cfg.stage_blocks[3] - 1, c5);
        break;
      case HeadMode::kMultiLevel:
        add_head("s4_last", -1, c4);
        for (int j = 0; j < cfg.stage_blocks[3]; ++j) {
          add_head("s5_" + std::to_string(j), j, c5);
        }
        break;
    }
  }
  return m;
}

namespace {

template <class S>
Tensor<S> run_block(Tape<S>* tape, const Tensor<S>& x, BottleneckBlock<S>& block, BnMode mode) {
  return block.has_se ? se_res_module(tape, x, block, mode) : bottleneck(tape, x, block, mode);
}

}  // namespace

template <class S>
std::vector<Tensor<S>> forward_features(Model<S>& m, Tape<S>* tape, const Tensor<S>& batch,
                                        BnMode mode) {
  if (batch.rank() != 4 || batch.extent(1) != 3 || batch.extent(2) != m.cfg.input_h ||
      batch.extent(3) != m.cfg.input_w) {
    throw std::invalid_argument("forward: expected N x 3 x " + std::to_string(m.cfg.input_h) +
                                " x " + std::to_string(m.cfg.input_w) + ", got " +
                                shape_to_string(batch.shape()));
  }
  Tensor<S> h = conv2d<S>(tape, batch, m.stem_conv.weight, nullptr, m.stem_conv.stride,
                          m.stem_conv.pad);
  h = pointwise(tape, Pointwise::kRelu, forward_bn(tape, h, m.stem_bn, mode));
  h = max_pool(tape, h, 3, 2, 1);
  for (BottleneckBlock<S>& blk : m.stage2) h = run_block(tape, h, blk, mode);
  for (BottleneckBlock<S>& blk : m.stage3) h = run_block(tape, h, blk, mode);

  // Per branch: the stage-4 output plus every stage-5 block output are the
  // candidate tap points; heads select among them by index.
  std::vector<Tensor<S>> features(m.heads.size());
  for (size_t bi = 0; bi < m.branches.size(); ++bi) {
    typename Model<S>::Branch& branch = m.branches[bi];
    Tensor<S> x = h;
    for (BottleneckBlock<S>& blk : branch.stage4) x = run_block(tape, x, blk, mode);
    Tensor<S> tap4 = x;
    std::vector<Tensor<S>> tap5;
    tap5.reserve(branch.stage5.size());
    for (BottleneckBlock<S>& blk : branch.stage5) {
      x = run_block(tape, x, blk, mode);
      tap5.push_back(x);
    }
    for (size_t hi = 0; hi < m.heads.size(); ++hi) {
      typename Model<S>::Head& head = m.heads[hi];
      if (head.branch_index != static_cast<int>(bi)) continue;
      const Tensor<S>& tap = head.tap < 0 ? tap4 : tap5[static_cast<size_t>(head.tap)];
      Tensor<S> pooled = gap(tape, tap);
      pooled = reshape(tape, pooled, Shape{pooled.extent(0), pooled.extent(1), 1, 1});
      features[hi] = reduction_feature(tape, pooled, head.block, mode);
    }
  }
  return features;
}

template <class S>
std::vector<Tensor<S>> forward_train(Model<S>& m, Tape<S>& tape, const Tensor<S>& batch) {
  std::vector<Tensor<S>> features = forward_features(m, &tape, batch, BnMode::kTrain);
  std::vector<Tensor<S>> logits;
  logits.reserve(features.size());
  for (size_t i = 0; i < features.size(); ++i) {
    logits.push_back(classifier_logits(&tape, features[i], m.heads[i].block));
  }
  return logits;
}

template <class S>
Tensor<S> joint_loss(Tape<S>* tape, const std::vector<Tensor<S>>& logit_sets,
                     const std::vector<int>& labels, bool mean_reduce) {
  if (logit_sets.empty()) throw std::invalid_argument("joint_loss: need at least one head");
  Tensor<S> total;
  for (const Tensor<S>& logits : logit_sets) {
    Tensor<S> l = softmax_log_loss(tape, logits, labels, mean_reduce);
    total = total.defined() ? add(tape, total, l) : l;
  }
  return total;
}

template <class S>
Tensor<S> flip_horizontal(const Tensor<S>& t) {
  if (t.rank() != 3 && t.rank() != 4) {
    throw std::invalid_argument("flip_horizontal: expected C x H x W or N x C x H x W");
  }
  Tensor<S> out(t.shape());
  const int64_t w = t.extent(t.rank() - 1);
  const int64_t rows = t.numel() / w;
  for (int64_t r = 0; r < rows; ++r) {
    const S* src = t.data() + r * w;
    S* dst = out.data() + r * w;
    for (int64_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
  }
  return out;
}

template <class S>
std::vector<std::vector<S>> extract_features(Model<S>& m, const std::vector<Tensor<S>>& images,
                                             int max_batch) {
  if (max_batch < 1) throw std::invalid_argument("extract_features: max_batch must be positive");
  const int64_t fw = m.cfg.feature_width;
  const int64_t k = m.cfg.head_count();
  std::vector<std::vector<S>> out(images.size());

  for (size_t begin = 0; begin < images.size(); begin += static_cast<size_t>(max_batch)) {
    const size_t end = std::min(images.size(), begin + static_cast<size_t>(max_batch));
    const int64_t n = static_cast<int64_t>(end - begin);
    Tensor<S> batch(Shape{n, 3, m.cfg.input_h, m.cfg.input_w});
    const int64_t stride = 3ll * m.cfg.input_h * m.cfg.input_w;
    for (int64_t i = 0; i < n; ++i) {
      const Tensor<S>& img = images[begin + static_cast<size_t>(i)];
      if (img.rank() != 3 || img.numel() != stride) {
        throw std::invalid_argument("extract_features: image " + std::to_string(begin + i) +
                                    " has shape " + shape_to_string(img.shape()));
      }
      std::copy(img.data(), img.data() + stride, batch.data() + i * stride);
    }
    std::vector<Tensor<S>> plain = forward_features(m, static_cast<Tape<S>*>(nullptr), batch,
                                                    BnMode::kEval);
    Tensor<S> flipped = flip_horizontal(batch);
    std::vector<Tensor<S>> mirror = forward_features(m, static_cast<Tape<S>*>(nullptr), flipped,
                                                     BnMode::kEval);
    for (int64_t i = 0; i < n; ++i) {
      std::vector<S>& row = out[begin + static_cast<size_t>(i)];
      row.resize(static_cast<size_t>(k * fw));
      for (int64_t h = 0; h < k; ++h) {
        const S* a = plain[static_cast<size_t>(h)].data() + i * fw;
        const S* b = mirror[static_cast<size_t>(h)].data() + i * fw;
        S* dst = row.data() + h * fw;
        for (int64_t j = 0; j < fw; ++j) dst[j] = S(0.5) * (a[j] + b[j]);
      }
    }
  }
  return out;
}

template <class S>
std::vector<S> extract_feature(Model<S>& m, const Tensor<S>& image) {
  return extract_features(m, std::vector<Tensor<S>>{image}, 1).front();
}

template struct Model<float>;
template struct Model<double>;

#define HBMCN_INSTANTIATE_MODEL(S)                                                               \
  template Model<S> build_model<S>(const ModelConfig&, uint64_t);                                \
  template std::vector<Tensor<S>> forward_features<S>(Model<S>&, Tape<S>*, const Tensor<S>&,     \
                                                      BnMode);                                   \
  template std::vector<Tensor<S>> forward_train<S>(Model<S>&, Tape<S>&, const Tensor<S>&);       \
  template Tensor<S> joint_loss<S>(Tape<S>*, const std::vector<Tensor<S>>&,                      \
                                   const std::vector<int>&, bool);                               \
  template Tensor<S> flip_horizontal<S>(const Tensor<S>&);                                       \
  template std::vector<std::vector<S>> extract_features<S>(Model<S>&,                            \
                                                           const std::vector<Tensor<S>>&, int);  \
  template std::vector<S> extract_feature<S>(Model<S>&, const Tensor<S>&);

HBMCN_INSTANTIATE_MODEL(float)
HBMCN_INSTANTIATE_MODEL(double)

#undef HBMCN_INSTANTIATE_MODEL

}  // namespace hbmcn
