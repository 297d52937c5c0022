#include "hbmcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace hbmcn {

template <class S>
void sgd_step(std::vector<Parameter<S>>& params, const SgdHyper& hyper, double lr) {
  const S m = static_cast<S>(hyper.momentum);
  const S wd = static_cast<S>(hyper.weight_decay);
  for (Parameter<S>& p : params) {
    if (!p.value.requires_grad()) {
      throw std::logic_error("sgd_step: parameter '" + p.name + "' has no gradient buffer");
    }
    const S step = static_cast<S>(lr) * (p.new_branch ? static_cast<S>(hyper.new_param_lr_mult)
                                                      : S(1));
    const S* g = p.value.grad();
    S* w = p.value.data();
    S* v = p.momentum.data();
    const int64_t n = p.value.numel();
    if (p.weight_decay && wd != S(0)) {
      for (int64_t i = 0; i < n; ++i) {
        const S gi = g[i] + wd * w[i];
        v[i] = m * v[i] + gi;
        w[i] -= step * v[i];
      }
    } else {
      for (int64_t i = 0; i < n; ++i) {
        v[i] = m * v[i] + g[i];
        w[i] -= step * v[i];
      }
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (lr_values.size() != lr_boundaries.size() + 1) {
    throw std::invalid_argument("TrainConfig: need one lr value per schedule segment");
  }
  for (size_t i = 1; i < lr_boundaries.size(); ++i) {
    if (lr_boundaries[i] <= lr_boundaries[i - 1]) {
      throw std::invalid_argument("TrainConfig: lr boundaries must increase");
    }
  }
}

TrainConfig paper_train_config() { return TrainConfig{}; }

TrainConfig nano_train_config() {
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.lr_boundaries = {10, 15};
  cfg.mean_reduce_loss = true;
  return cfg;
}

double lr_at_epoch(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
  size_t seg = 0;
  while (seg < cfg.lr_boundaries.size() && epoch >= cfg.lr_boundaries[seg]) ++seg;
  return cfg.lr_values[seg];
}

namespace {
constexpr uint64_t kShuffleTag = 0x0d0e4f1e;
constexpr uint64_t kAugmentTag = 0x0a6a3247;
}  // namespace

std::vector<int64_t> epoch_order(uint64_t seed, int epoch, int64_t n) {
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), int64_t{0});
  std::mt19937_64 rng(derive_stream({seed, kShuffleTag, static_cast<uint64_t>(epoch)}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

LoadedDataset load_split_images(const DatasetManifest& manifest, Split split, int input_h,
                                int input_w, const NormalizeConfig& norm) {
  LoadedDataset out;
  const std::vector<SampleInfo>& samples = manifest.split(split);
  out.images.reserve(samples.size());
  out.labels.reserve(samples.size());
  for (const SampleInfo& s : samples) {
    out.images.push_back(decode_resize(s.path, input_h, input_w, norm));
    if (split == Split::kTrain) {
      const auto it = manifest.id_remap.find(s.person_id);
      if (it == manifest.id_remap.end()) {
        throw std::logic_error("train sample id missing from remap: " + s.filename);
      }
      out.labels.push_back(it->second);
    } else {
      out.labels.push_back(s.person_id);
    }
  }
  return out;
}

FitResult fit(Model<float>& model, const LoadedDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const int64_t n = static_cast<int64_t>(data.images.size());
  if (n == 0) throw std::invalid_argument("fit: empty dataset");
  if (n == 1) throw std::invalid_argument("fit: a single sample cannot form a batch");
  for (int label : data.labels) {
    if (label < 0 || label >= model.cfg.num_classes) {
      throw std::out_of_range("fit: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(model.cfg.num_classes) + ")");
    }
  }

  const int64_t ih = model.cfg.input_h, iw = model.cfg.input_w;
  const int64_t img_numel = 3 * ih * iw;
  FitResult result;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg);
    const std::vector<int64_t> order = epoch_order(cfg.seed, epoch, n);

    // Batch boundaries; a trailing single sample joins the previous batch.
    std::vector<std::pair<int64_t, int64_t>> batches;
    for (int64_t begin = 0; begin < n; begin += cfg.batch_size) {
      batches.emplace_back(begin, std::min<int64_t>(n, begin + cfg.batch_size));
    }
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = n;
      batches.pop_back();
    }

    double epoch_loss_sum = 0.0;
    for (const auto& [begin, end] : batches) {
      const int64_t b = end - begin;
      Tensor<float> batch(Shape{b, 3, ih, iw});
      std::vector<int> labels(static_cast<size_t>(b));
      for (int64_t i = 0; i < b; ++i) {
        const int64_t idx = order[static_cast<size_t>(begin + i)];
        Tensor<float> img = data.images[static_cast<size_t>(idx)];
        if (cfg.augment_enabled) {
          std::mt19937_64 rng(derive_stream({cfg.seed, kAugmentTag, static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(idx)}));
          img = augment(img, rng, cfg.augment);
        }
        std::copy(img.data(), img.data() + img_numel, batch.data() + i * img_numel);
        labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(idx)];
      }

      for (Parameter<float>& p : model.params) p.value.zero_grad();
      Tape<float> tape;
      std::vector<Tensor<float>> logits = forward_train(model, tape, batch);
      Tensor<float> loss = joint_loss(&tape, logits, labels, cfg.mean_reduce_loss);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("fit: non-finite joint loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      sgd_step(model.params, cfg.sgd, lr);

      result.step_loss.push_back(loss_value);
      epoch_loss_sum += cfg.mean_reduce_loss ? loss_value * static_cast<double>(b) : loss_value;
    }
    result.epoch_lr.push_back(lr);
    result.epoch_mean_loss.push_back(epoch_loss_sum / static_cast<double>(n));
  }
  return result;
}

void write_loss_trace_csv(const std::string& path, const FitResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,lr,mean_joint_loss\n";
  char line[128];
  for (size_t e = 0; e < result.epoch_lr.size(); ++e) {
    std::snprintf(line, sizeof(line), "%zu,%.6g,%.6f\n", e, result.epoch_lr[e],
                  result.epoch_mean_loss[e]);
    out << line;
  }
}

template void sgd_step<float>(std::vector<Parameter<float>>&, const SgdHyper&, double);
template void sgd_step<double>(std::vector<Parameter<double>>&, const SgdHyper&, double);

}  // namespace hbmcn
