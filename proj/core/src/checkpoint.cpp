#include "hbmcn/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "config_json.hpp"
#include "hbmcn/io_util.hpp"

namespace hbmcn {

namespace {

constexpr char kCheckpointMagic[4] = {'H', 'B', 'M', 'C'};
constexpr uint32_t kCheckpointVersion = 1;

struct TensorRef {
  std::string name;
  Shape shape;
  const float* read = nullptr;
  float* write = nullptr;
};

std::vector<TensorRef> checkpoint_tensors(Model<float>& m) {
  std::vector<TensorRef> refs;
  for (Parameter<float>& p : m.params) {
    refs.push_back({p.name, p.value.shape(), p.value.data(), p.value.data()});
  }
  for (NamedState<float>& s : m.state) {
    refs.push_back({s.name, s.value.shape(), s.value.data(), s.value.data()});
  }
  for (Parameter<float>& p : m.params) {
    refs.push_back({"momentum/" + p.name, p.value.shape(), p.momentum.data(), p.momentum.data()});
  }
  return refs;
}

}  // namespace

void save_checkpoint(const Model<float>& model, const std::string& path) {
  std::vector<TensorRef> refs = checkpoint_tensors(const_cast<Model<float>&>(model));

  nlohmann::json tensors = nlohmann::json::array();
  uint64_t offset = 0;
  for (const TensorRef& ref : refs) {
    tensors.push_back({{"name", ref.name}, {"shape", ref.shape}, {"offset", offset}});
    offset += static_cast<uint64_t>(shape_numel(ref.shape)) * sizeof(float);
  }
  nlohmann::json manifest;
  manifest["config"] = detail::model_config_to_json(model.cfg);
  manifest["tensors"] = std::move(tensors);
  const std::string manifest_text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 4);
  io::write_u32le(out, kCheckpointVersion);
  io::write_u64le(out, manifest_text.size());
  out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
  for (const TensorRef& ref : refs) {
    const int64_t n = shape_numel(ref.shape);
    for (int64_t i = 0; i < n; ++i) io::write_f32le(out, ref.read[i]);
  }
  if (!out) throw std::runtime_error("short write to checkpoint " + path);
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  const auto fail = [&](const std::string& why) {
    throw std::runtime_error("bad checkpoint " + path + ": " + why);
  };

  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kCheckpointMagic)) fail("wrong magic");
  const uint32_t version = io::read_u32le(in);
  if (version != kCheckpointVersion) {
    fail("unknown version " + std::to_string(version));
  }
  const uint64_t manifest_len = io::read_u64le(in);
  std::string manifest_text(manifest_len, '\0');
  in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
  if (static_cast<uint64_t>(in.gcount()) != manifest_len) fail("truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("manifest JSON: ") + e.what());
  }

  ModelConfig cfg;
  try {
    detail::model_config_apply_json(manifest.at("config"), cfg, "checkpoint config");
  } catch (const std::exception& e) {
    fail(std::string("config: ") + e.what());
  }
  Model<float> model = build_model<float>(cfg, 0);
  std::vector<TensorRef> refs = checkpoint_tensors(model);

  const nlohmann::json& tensors = manifest.at("tensors");
  if (tensors.size() != refs.size()) {
    fail("tensor count mismatch: file has " + std::to_string(tensors.size()) + ", model expects " +
         std::to_string(refs.size()));
  }
  uint64_t expected_offset = 0;
  for (size_t i = 0; i < refs.size(); ++i) {
    const nlohmann::json& entry = tensors[i];
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    if (name != refs[i].name) {
      fail("tensor name mismatch at index " + std::to_string(i) + ": file '" + name +
           "' vs model '" + refs[i].name + "'");
    }
    if (shape != refs[i].shape) fail("shape mismatch for '" + name + "'");
    if (offset != expected_offset) fail("unexpected blob offset for '" + name + "'");
    expected_offset += static_cast<uint64_t>(shape_numel(shape)) * sizeof(float);
  }
  for (TensorRef& ref : refs) {
    const int64_t n = shape_numel(ref.shape);
    for (int64_t i = 0; i < n; ++i) {
      if (!io::try_read_f32le(in, ref.write[i])) fail("truncated blob at '" + ref.name + "'");
    }
  }
  return model;
}

}  // namespace hbmcn
