#pragma once

#include <string>
#include <vector>

#include "hbmcn/augment.hpp"
#include "hbmcn/data.hpp"
#include "hbmcn/model.hpp"

namespace hbmcn {

struct SgdHyper {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double new_param_lr_mult = 10.0;
};

/// Classic SGD with momentum and L2 folded into the gradient:
/// g' = g + wd*w (wd masked off for BN affine params and biases),
/// v <- m*v + g', w <- w - lr*mult*v.
template <class S>
void sgd_step(std::vector<Parameter<S>>& params, const SgdHyper& hyper, double lr);

struct TrainConfig {
  int batch_size = 32;
  int epochs = 80;
  std::vector<int> lr_boundaries = {40, 60};
  std::vector<double> lr_values = {0.01, 0.001, 0.0001};
  SgdHyper sgd;
  uint64_t seed = 0;
  bool mean_reduce_loss = false;  // divide the per-head loss by the batch size
  AugmentConfig augment;
  bool augment_enabled = true;

  void validate() const;
};

TrainConfig paper_train_config();
/// Desk-scale schedule: 20 epochs with plateaus scaled from the 80/40/60
/// shape, mean-reduced loss so the 0.01 base rate transfers.
TrainConfig nano_train_config();

/// Piecewise-constant schedule; throws on a negative epoch.
double lr_at_epoch(int epoch, const TrainConfig& cfg);

/// Deterministic per-epoch shuffle of [0, n).
std::vector<int64_t> epoch_order(uint64_t seed, int epoch, int64_t n);

struct LoadedDataset {
  std::vector<Tensor<float>> images;  // normalized, model input size
  std::vector<int> labels;            // contiguous class indices
};

/// Decode + resize + normalize one split against a manifest; train split also
/// remaps ids to class labels.
LoadedDataset load_split_images(const DatasetManifest& manifest, Split split, int input_h,
                                int input_w, const NormalizeConfig& norm = {});

struct FitResult {
  std::vector<double> epoch_lr;
  std::vector<double> epoch_mean_loss;  // joint loss per sample
  std::vector<double> step_loss;        // per optimizer step (batch sum or mean)
};

/// Shuffled mini-batch SGD: augment -> forward -> joint loss -> backward ->
/// step. Deterministic given cfg.seed. A trailing batch of one sample is
/// merged into the previous batch so batch-norm always sees N >= 2.
FitResult fit(Model<float>& model, const LoadedDataset& data, const TrainConfig& cfg);

/// CSV columns: epoch,lr,mean_joint_loss
void write_loss_trace_csv(const std::string& path, const FitResult& result);

}  // namespace hbmcn
