#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hbmcn/blocks.hpp"

namespace hbmcn {

enum class BranchKind { kRes, kSeRes };
enum class HeadMode { kStage5Last, kTwoLevel, kMultiLevel };

const char* branch_kind_name(BranchKind kind);
const char* head_mode_name(HeadMode mode);
BranchKind branch_kind_from_name(const std::string& name);
HeadMode head_mode_from_name(const std::string& name);

/// Widths/blocks describe stages 2..5; stage_widths are the expanded (output)
/// channel counts, the bottleneck width inside each block is width/4.
struct ModelConfig {
  int input_h = 384;
  int input_w = 192;
  int stem_width = 64;
  std::array<int, 4> stage_widths = {256, 512, 1024, 2048};
  std::array<int, 4> stage_blocks = {3, 4, 6, 3};
  int stage5_stride = 2;
  int num_classes = 751;
  int feature_width = 256;
  int se_ratio = 16;
  std::vector<BranchKind> branches = {BranchKind::kRes, BranchKind::kSeRes};
  HeadMode head_mode = HeadMode::kMultiLevel;

  int heads_per_branch() const;
  int head_count() const;      // K
  int feature_length() const;  // K * feature_width
  void validate() const;
};

/// Full two-branch multi-head configuration at paper scale.
ModelConfig paper_model_config();
/// Same topology at desk scale: 128x64 input, widths /8, blocks (1,1,2,2).
ModelConfig nano_model_config();

/// Spatial extents of each processing point for a given input; pure shape
/// arithmetic, no parameters needed.
struct StagePlan {
  std::array<int, 2> stem;    // after 7x7 stride-2 conv
  std::array<int, 2> pooled;  // after 3x3 stride-2 max pool
  std::array<std::array<int, 2>, 4> stages;  // after stages 2..5
};
StagePlan plan_shapes(const ModelConfig& cfg);

template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;          // requires_grad = true
  std::vector<S> momentum;  // SGD state, same element count
  bool weight_decay = true;
  bool new_branch = false;  // 10x learning-rate group
};

template <class S>
struct NamedState {
  std::string name;
  Tensor<S> value;  // batch-norm running statistic
};

template <class S>
struct Model {
  ModelConfig cfg;

  Conv2dLayer<S> stem_conv;
  BatchNormLayer<S> stem_bn;
  std::vector<BottleneckBlock<S>> stage2, stage3;

  struct Branch {
    BranchKind kind;
    std::string prefix;
    std::vector<BottleneckBlock<S>> stage4, stage5;
  };
  std::vector<Branch> branches;

  struct Head {
    std::string name;  // e.g. head.branch0_res.s4_last
    int branch_index;
    int tap;  // -1 = last block of stage 4, otherwise stage-5 block index
    HeadBlock<S> block;
  };
  std::vector<Head> heads;

  std::vector<Parameter<S>> params;     // registration order = checkpoint order
  std::vector<NamedState<S>> state;     // running statistics

  Parameter<S>* find_param(const std::string& name);
  std::vector<std::string> param_names() const;
  int64_t param_count() const;  // total scalar parameters
};

template <class S>
Model<S> build_model(const ModelConfig& cfg, uint64_t seed);

/// Per-head retrieval features (N x feature_width each) in fixed head order:
/// branch-major, stage-4 tap before the stage-5 taps.
template <class S>
std::vector<Tensor<S>> forward_features(Model<S>& m, Tape<S>* tape, const Tensor<S>& batch,
                                        BnMode mode);

/// K logit tensors (N x num_classes), train mode.
template <class S>
std::vector<Tensor<S>> forward_train(Model<S>& m, Tape<S>& tape, const Tensor<S>& batch);

/// Sum of the per-head softmax log-losses.
template <class S>
Tensor<S> joint_loss(Tape<S>* tape, const std::vector<Tensor<S>>& logit_sets,
                     const std::vector<int>& labels, bool mean_reduce = false);

/// Flip-averaged concatenated feature of a single 3 x H x W image (eval mode):
/// per level 0.5 * (f(I) + f(flip I)), levels concatenated in head order.
template <class S>
std::vector<S> extract_feature(Model<S>& m, const Tensor<S>& image);

/// Batched extraction; rows follow the input order. Eval-mode statistics make
/// the result independent of the batching.
template <class S>
std::vector<std::vector<S>> extract_features(Model<S>& m, const std::vector<Tensor<S>>& images,
                                             int max_batch = 16);

/// Mirror the W axis of a 3-D (C x H x W) or 4-D (N x C x H x W) tensor.
template <class S>
Tensor<S> flip_horizontal(const Tensor<S>& t);

extern template struct Model<float>;
extern template struct Model<double>;

}  // namespace hbmcn
