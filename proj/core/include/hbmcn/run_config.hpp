#pragma once

#include <string>

#include "hbmcn/model.hpp"
#include "hbmcn/train.hpp"

namespace hbmcn {

/// One experiment description: a preset expanded first, then any "model" /
/// "train" overrides applied on top. Unknown keys are rejected.
struct RunConfig {
  std::string preset = "nano";  // "nano" | "paper"
  uint64_t seed = 0;
  std::string ablation = "full";
  std::string data_dir;
  std::string out_dir;
  ModelConfig model;
  TrainConfig train;
};

RunConfig make_preset_run_config(const std::string& preset);
RunConfig run_config_from_json_text(const std::string& text);
RunConfig run_config_from_file(const std::string& path);

std::string model_config_to_json_text(const ModelConfig& cfg);

/// Ablation topologies: baseline (one Res branch, one head), res2 (two Res
/// branches), seres2 (Res + SE-Res, one head each), baseline2l (one Res
/// branch, heads at the stage-4 and stage-5 taps), full (the complete
/// two-branch multi-level network).
ModelConfig apply_ablation_mode(const ModelConfig& base, const std::string& mode);
const std::vector<std::string>& ablation_modes();

}  // namespace hbmcn
