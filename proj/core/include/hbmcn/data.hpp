#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hbmcn/tensor.hpp"

namespace hbmcn {

enum class Split { kTrain, kQuery, kGallery };
const char* split_name(Split split);

inline constexpr int kJunkId = -1;

struct SampleInfo {
  std::string path;
  std::string filename;
  int person_id = 0;  // raw id from the filename; -1 marks junk
  int camera_id = 0;  // 1-based, as written
};

struct DatasetManifest {
  std::string root;
  std::vector<SampleInfo> train, query, gallery;
  std::map<int, int> id_remap;  // raw train id -> contiguous class index
  int num_classes = 0;

  const std::vector<SampleInfo>& split(Split s) const;
};

struct ParsedName {
  int person_id;
  int camera_id;
};

/// Filename grammar: `<pid>_c<cam>_<tag>.ppm` with pid zero-padded to 4
/// digits (or -1 for junk) and a 1-based camera id.
ParsedName parse_sample_filename(const std::string& filename);

/// Scans root/{train,query,gallery} for .ppm files (lexicographic order) and
/// builds the manifest. Train ids are remapped to contiguous class indices;
/// a junk id in train or an empty split is an error.
DatasetManifest load_dataset(const std::string& root_dir);

struct SynthParams {
  int n_ids = 48;
  int per_id = 8;
  int n_cams = 3;
  int height = 128;
  int width = 64;
  uint64_t seed = 7;
};

/// Writes a deterministic synthetic identity dataset under out_dir. Each id
/// gets a private color palette and rectangle layout; each image applies a
/// camera tint, translation, brightness jitter and pixel noise. The first
/// 2/3 of the ids form the train split; for the remaining ids image 0 becomes
/// the camera-1 query and the rest go to the gallery on other cameras.
void synth_dataset(const SynthParams& params, const std::string& out_dir);

/// Binary PPM (P6, maxval 255) codec; values in [0, 1], shape 3 x H x W.
Tensor<float> read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor<float>& image);

struct NormalizeConfig {
  std::array<float, 3> mean = {0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev = {0.5f, 0.5f, 0.5f};
};

/// Bilinear resize, half-pixel centers (corner alignment off).
Tensor<float> resize_bilinear(const Tensor<float>& image, int target_h, int target_w);

/// Decode + resize + per-channel normalization: the tensor a model consumes.
Tensor<float> decode_resize(const std::string& path, int target_h, int target_w,
                            const NormalizeConfig& norm = {});

}  // namespace hbmcn
