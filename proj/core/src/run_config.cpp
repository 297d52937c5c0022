#include "hbmcn/run_config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "config_json.hpp"

namespace hbmcn {

RunConfig make_preset_run_config(const std::string& preset) {
  RunConfig rc;
  rc.preset = preset;
  if (preset == "nano") {
    rc.model = nano_model_config();
    rc.train = nano_train_config();
  } else if (preset == "paper") {
    rc.model = paper_model_config();
    rc.train = paper_train_config();
  } else {
    throw std::invalid_argument("unknown preset '" + preset + "' (expected nano or paper)");
  }
  return rc;
}

RunConfig run_config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("run config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  detail::reject_unknown_keys(
      j, {"preset", "seed", "ablation", "data_dir", "out_dir", "model", "train"}, "run config");

  // Preset expands before any override applies.
  const std::string preset = j.value("preset", std::string("nano"));
  RunConfig rc = make_preset_run_config(preset);
  if (j.contains("seed")) rc.seed = j.at("seed").get<uint64_t>();
  if (j.contains("ablation")) rc.ablation = j.at("ablation").get<std::string>();
  if (j.contains("data_dir")) rc.data_dir = j.at("data_dir").get<std::string>();
  if (j.contains("out_dir")) rc.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("model")) detail::model_config_apply_json(j.at("model"), rc.model, "run config model");
  if (j.contains("train")) detail::train_config_apply_json(j.at("train"), rc.train, "run config train");
  return rc;
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open run config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return run_config_from_json_text(buf.str());
}

std::string model_config_to_json_text(const ModelConfig& cfg) {
  return detail::model_config_to_json(cfg).dump();
}

const std::vector<std::string>& ablation_modes() {
  static const std::vector<std::string> modes = {"baseline", "res2", "seres2", "baseline2l",
                                                 "full"};
  return modes;
}

ModelConfig apply_ablation_mode(const ModelConfig& base, const std::string& mode) {
  ModelConfig cfg = base;
  if (mode == "baseline") {
    cfg.branches = {BranchKind::kRes};
    cfg.head_mode = HeadMode::kStage5Last;
  } else if (mode == "res2") {
    cfg.branches = {BranchKind::kRes, BranchKind::kRes};
    cfg.head_mode = HeadMode::kStage5Last;
  } else if (mode == "seres2") {
    cfg.branches = {BranchKind::kRes, BranchKind::kSeRes};
    cfg.head_mode = HeadMode::kStage5Last;
  } else if (mode == "baseline2l") {
    cfg.branches = {BranchKind::kRes};
    cfg.head_mode = HeadMode::kTwoLevel;
  } else if (mode == "full") {
    cfg.branches = {BranchKind::kRes, BranchKind::kSeRes};
    cfg.head_mode = HeadMode::kMultiLevel;
  } else {
    throw std::invalid_argument("unknown ablation mode '" + mode + "'");
  }
  return cfg;
}

}  // namespace hbmcn
