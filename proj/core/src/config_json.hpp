#pragma once

// Internal: nlohmann adapters for the config structs. Kept out of public
// headers so installed consumers do not need the vendored json.

#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "hbmcn/model.hpp"
#include "hbmcn/train.hpp"

namespace hbmcn::detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.contains(key)) {
      throw std::invalid_argument("unknown key '" + key + "' in " + where);
    }
  }
}

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["input_h"] = cfg.input_h;
  j["input_w"] = cfg.input_w;
  j["stem_width"] = cfg.stem_width;
  j["stage_widths"] = cfg.stage_widths;
  j["stage_blocks"] = cfg.stage_blocks;
  j["stage5_stride"] = cfg.stage5_stride;
  j["num_classes"] = cfg.num_classes;
  j["feature_width"] = cfg.feature_width;
  j["se_ratio"] = cfg.se_ratio;
  nlohmann::json branches = nlohmann::json::array();
  for (BranchKind k : cfg.branches) branches.push_back(branch_kind_name(k));
  j["branches"] = std::move(branches);
  j["head_mode"] = head_mode_name(cfg.head_mode);
  return j;
}

/// Applies `j` on top of `cfg`; missing keys keep their current values.
inline void model_config_apply_json(const nlohmann::json& j, ModelConfig& cfg,
                                    const std::string& where) {
  reject_unknown_keys(j,
                      {"input_h", "input_w", "stem_width", "stage_widths", "stage_blocks",
                       "stage5_stride", "num_classes", "feature_width", "se_ratio", "branches",
                       "head_mode"},
                      where);
  if (j.contains("input_h")) cfg.input_h = j.at("input_h").get<int>();
  if (j.contains("input_w")) cfg.input_w = j.at("input_w").get<int>();
  if (j.contains("stem_width")) cfg.stem_width = j.at("stem_width").get<int>();
  if (j.contains("stage_widths")) cfg.stage_widths = j.at("stage_widths").get<std::array<int, 4>>();
  if (j.contains("stage_blocks")) cfg.stage_blocks = j.at("stage_blocks").get<std::array<int, 4>>();
  if (j.contains("stage5_stride")) cfg.stage5_stride = j.at("stage5_stride").get<int>();
  if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes").get<int>();
  if (j.contains("feature_width")) cfg.feature_width = j.at("feature_width").get<int>();
  if (j.contains("se_ratio")) cfg.se_ratio = j.at("se_ratio").get<int>();
  if (j.contains("branches")) {
    cfg.branches.clear();
    for (const nlohmann::json& b : j.at("branches")) {
      cfg.branches.push_back(branch_kind_from_name(b.get<std::string>()));
    }
  }
  if (j.contains("head_mode")) cfg.head_mode = head_mode_from_name(j.at("head_mode").get<std::string>());
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["lr_boundaries"] = cfg.lr_boundaries;
  j["lr_values"] = cfg.lr_values;
  j["momentum"] = cfg.sgd.momentum;
  j["weight_decay"] = cfg.sgd.weight_decay;
  j["new_param_lr_mult"] = cfg.sgd.new_param_lr_mult;
  j["mean_reduce_loss"] = cfg.mean_reduce_loss;
  j["augment"] = cfg.augment_enabled;
  j["augment_crop"] = cfg.augment.crop;
  j["augment_flip"] = cfg.augment.flip;
  j["augment_erase"] = cfg.augment.erase;
  return j;
}

inline void train_config_apply_json(const nlohmann::json& j, TrainConfig& cfg,
                                    const std::string& where) {
  reject_unknown_keys(j,
                      {"batch_size", "epochs", "lr_boundaries", "lr_values", "momentum",
                       "weight_decay", "new_param_lr_mult", "mean_reduce_loss", "augment",
                       "augment_crop", "augment_flip", "augment_erase"},
                      where);
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
  if (j.contains("lr_boundaries")) cfg.lr_boundaries = j.at("lr_boundaries").get<std::vector<int>>();
  if (j.contains("lr_values")) cfg.lr_values = j.at("lr_values").get<std::vector<double>>();
  if (j.contains("momentum")) cfg.sgd.momentum = j.at("momentum").get<double>();
  if (j.contains("weight_decay")) cfg.sgd.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("new_param_lr_mult")) {
    cfg.sgd.new_param_lr_mult = j.at("new_param_lr_mult").get<double>();
  }
  if (j.contains("mean_reduce_loss")) cfg.mean_reduce_loss = j.at("mean_reduce_loss").get<bool>();
  if (j.contains("augment")) cfg.augment_enabled = j.at("augment").get<bool>();
  if (j.contains("augment_crop")) cfg.augment.crop = j.at("augment_crop").get<bool>();
  if (j.contains("augment_flip")) cfg.augment.flip = j.at("augment_flip").get<bool>();
  if (j.contains("augment_erase")) cfg.augment.erase = j.at("augment_erase").get<bool>();
}

}  // namespace hbmcn::detail
