#include "hbmcn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace hbmcn {

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "?";
}

const std::vector<SampleInfo>& DatasetManifest::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kQuery: return query;
    case Split::kGallery: return gallery;
  }
  throw std::logic_error("bad split");
}

ParsedName parse_sample_filename(const std::string& filename) {
  const auto fail = [&](const std::string& why) {
    throw std::invalid_argument("cannot parse sample filename '" + filename + "': " + why);
  };
  if (filename.size() < std::string("0_c1_0.ppm").size() || !filename.ends_with(".ppm")) {
    fail("expected <pid>_c<cam>_<tag>.ppm");
  }
  const size_t us1 = filename.find('_');
  if (us1 == std::string::npos) fail("missing '_' after person id");
  const std::string pid_str = filename.substr(0, us1);
  if (pid_str.empty()) fail("empty person id");
  const bool junk = pid_str == "-1";
  if (!junk && !std::all_of(pid_str.begin(), pid_str.end(),
                            [](unsigned char ch) { return std::isdigit(ch); })) {
    fail("person id must be digits or -1");
  }
  if (us1 + 1 >= filename.size() || filename[us1 + 1] != 'c') fail("expected 'c<cam>'");
  const size_t cam_begin = us1 + 2;
  const size_t us2 = filename.find('_', cam_begin);
  if (us2 == std::string::npos || us2 == cam_begin) fail("missing camera id");
  const std::string cam_str = filename.substr(cam_begin, us2 - cam_begin);
  if (!std::all_of(cam_str.begin(), cam_str.end(),
                   [](unsigned char ch) { return std::isdigit(ch); })) {
    fail("camera id must be digits");
  }
  ParsedName parsed;
  parsed.person_id = junk ? kJunkId : std::stoi(pid_str);
  parsed.camera_id = std::stoi(cam_str);
  if (parsed.camera_id < 1) fail("camera id is 1-based");
  return parsed;
}

namespace {

std::vector<SampleInfo> scan_split(const fs::path& dir, Split split) {
  if (!fs::is_directory(dir)) {
    throw std::runtime_error("dataset split directory missing: " + dir.string());
  }
  std::vector<SampleInfo> out;
  for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".ppm") continue;
    SampleInfo info;
    info.path = entry.path().string();
    info.filename = entry.path().filename().string();
    const ParsedName parsed = parse_sample_filename(info.filename);
    info.person_id = parsed.person_id;
    info.camera_id = parsed.camera_id;
    out.push_back(std::move(info));
  }
  std::sort(out.begin(), out.end(),
            [](const SampleInfo& a, const SampleInfo& b) { return a.filename < b.filename; });
  if (out.empty()) {
    throw std::runtime_error(std::string("dataset split '") + split_name(split) +
                             "' has no .ppm files under " + dir.string());
  }
  return out;
}

}  // namespace

DatasetManifest load_dataset(const std::string& root_dir) {
  DatasetManifest m;
  m.root = root_dir;
  const fs::path root(root_dir);
  m.train = scan_split(root / "train", Split::kTrain);
  m.query = scan_split(root / "query", Split::kQuery);
  m.gallery = scan_split(root / "gallery", Split::kGallery);

  std::set<int> train_ids;
  for (const SampleInfo& s : m.train) {
    if (s.person_id == kJunkId) {
      throw std::runtime_error("junk id -1 in train split: " + s.filename);
    }
    train_ids.insert(s.person_id);
  }
  int next = 0;
  for (int raw : train_ids) m.id_remap[raw] = next++;
  m.num_classes = next;
  return m;
}

// ---------------------------------------------------------------------------
// PPM codec

Tensor<float> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const auto fail = [&](const std::string& why) {
    throw std::runtime_error("malformed PPM " + path + ": " + why);
  };

  // Header tokens may be separated by whitespace and '#' comments.
  auto next_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };

  if (next_token() != "P6") fail("expected P6 magic");
  const std::string ws = next_token(), hs = next_token(), maxs = next_token();
  if (ws.empty() || hs.empty() || maxs.empty()) fail("truncated header");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ws);
    h = std::stoi(hs);
    maxval = std::stoi(maxs);
  } catch (const std::exception&) {
    fail("non-numeric header field");
  }
  if (w < 1 || h < 1) fail("bad dimensions");
  if (maxval != 255) fail("only maxval 255 supported");

  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size()) fail("truncated pixel data");

  Tensor<float> img(Shape{3, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      img.data()[c * plane + p] = static_cast<float>(raw[static_cast<size_t>(p * 3 + c)]) / 255.0f;
    }
  }
  return img;
}

void write_ppm(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw std::invalid_argument("write_ppm: image must be 3 x H x W");
  }
  const int64_t h = image.extent(1), w = image.extent(2);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(h) * w * 3);
  const int64_t plane = h * w;
  for (int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(image.data()[c * plane + p], 0.0f, 1.0f);
      raw[static_cast<size_t>(p * 3 + c)] =
          static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

Tensor<float> resize_bilinear(const Tensor<float>& image, int target_h, int target_w) {
  if (image.rank() != 3) throw std::invalid_argument("resize_bilinear: image must be C x H x W");
  if (target_h < 1 || target_w < 1) throw std::invalid_argument("resize_bilinear: bad target");
  const int64_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
  Tensor<float> out(Shape{c, target_h, target_w});
  const float sy = static_cast<float>(h) / static_cast<float>(target_h);
  const float sx = static_cast<float>(w) / static_cast<float>(target_w);
  for (int64_t ch = 0; ch < c; ++ch) {
    const float* src = image.data() + ch * h * w;
    float* dst = out.data() + ch * static_cast<int64_t>(target_h) * target_w;
    for (int y = 0; y < target_h; ++y) {
      const float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
      const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(fy)), 0, h - 1);
      const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
      const float wy = std::clamp(fy - static_cast<float>(y0), 0.0f, 1.0f);
      for (int x = 0; x < target_w; ++x) {
        const float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
        const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(fx)), 0, w - 1);
        const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
        const float wx = std::clamp(fx - static_cast<float>(x0), 0.0f, 1.0f);
        const float a = src[y0 * w + x0], b = src[y0 * w + x1];
        const float d = src[y1 * w + x0], e = src[y1 * w + x1];
        dst[static_cast<int64_t>(y) * target_w + x] =
            (1.0f - wy) * ((1.0f - wx) * a + wx * b) + wy * ((1.0f - wx) * d + wx * e);
      }
    }
  }
  return out;
}

Tensor<float> decode_resize(const std::string& path, int target_h, int target_w,
                            const NormalizeConfig& norm) {
  Tensor<float> img = read_ppm(path);
  if (img.extent(1) != target_h || img.extent(2) != target_w) {
    img = resize_bilinear(img, target_h, target_w);
  }
  const int64_t plane = static_cast<int64_t>(target_h) * target_w;
  for (int c = 0; c < 3; ++c) {
    const float mean = norm.mean[static_cast<size_t>(c)];
    const float inv = 1.0f / norm.stddev[static_cast<size_t>(c)];
    float* p = img.data() + c * plane;
    for (int64_t i = 0; i < plane; ++i) p[i] = (p[i] - mean) * inv;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Synthetic identity dataset

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
  uint64_t state = 0x8badf00d5eed1234ull;
  for (uint64_t p : parts) state = splitmix64(state ^ p);
  return state;
}

struct RectSpec {
  float x0, y0, x1, y1;  // relative coordinates
  std::array<float, 3> color;
};

struct IdentityAppearance {
  std::array<float, 3> background;
  std::vector<RectSpec> rects;
};

float uniform(std::mt19937_64& rng, float lo, float hi) {
  return std::uniform_real_distribution<float>(lo, hi)(rng);
}

std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float c = v * s;
  const float hp = h * 6.0f;
  const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const float m = v - c;
  return {r + m, g + m, b + m};
}

IdentityAppearance make_appearance(uint64_t seed, int pid) {
  std::mt19937_64 rng(mix_seed({seed, 0xa11ce, static_cast<uint64_t>(pid)}));
  IdentityAppearance app;
  // Two low-discrepancy rotations (golden ratio for hue, sqrt(2) for
  // saturation) scatter consecutive ids across color space, so palettes of
  // any id subset stay far apart under the per-camera tint. Value is random:
  // the brightness jitter makes it an unreliable cue anyway.
  constexpr float kGolden = 0.6180339887f;
  constexpr float kSqrt2Frac = 0.4142135624f;
  const float base_hue = static_cast<float>(pid) * kGolden + uniform(rng, -0.01f, 0.01f);
  const float base_sat =
      0.4f + 0.55f * std::fmod(static_cast<float>(pid) * kSqrt2Frac + uniform(rng, 0.0f, 0.02f),
                               1.0f);
  app.background = hsv_to_rgb(base_hue, base_sat, uniform(rng, 0.35f, 0.8f));
  const int n_rects = 3 + static_cast<int>(rng() % 3);  // 3..5
  for (int r = 0; r < n_rects; ++r) {
    RectSpec rect;
    rect.x0 = uniform(rng, 0.0f, 0.6f);
    rect.y0 = uniform(rng, 0.0f, 0.6f);
    rect.x1 = rect.x0 + uniform(rng, 0.25f, 0.4f);
    rect.y1 = rect.y0 + uniform(rng, 0.25f, 0.4f);
    const float rect_hue = base_hue + 0.5f + 0.17f * static_cast<float>(r) +
                           uniform(rng, -0.06f, 0.06f);
    rect.color = hsv_to_rgb(rect_hue, uniform(rng, 0.55f, 1.0f), uniform(rng, 0.5f, 1.0f));
    app.rects.push_back(rect);
  }
  return app;
}

// Mild per-camera channel mixing so cross-camera retrieval is nontrivial.
std::array<std::array<float, 3>, 3> camera_tint(uint64_t seed, int cam) {
  std::mt19937_64 rng(mix_seed({seed, 0xca3e7a, static_cast<uint64_t>(cam)}));
  std::array<std::array<float, 3>, 3> m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      m[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          (i == j ? 1.0f : 0.0f) + uniform(rng, -0.06f, 0.06f);
    }
  }
  return m;
}

Tensor<float> render_image(const IdentityAppearance& app, uint64_t seed, int pid, int img_index,
                           int cam, int h, int w) {
  std::mt19937_64 rng(mix_seed({seed, 0x10a6e, static_cast<uint64_t>(pid),
                                static_cast<uint64_t>(img_index)}));
  const float dx = uniform(rng, -0.1f, 0.1f) * static_cast<float>(w);
  const float dy = uniform(rng, -0.1f, 0.1f) * static_cast<float>(h);
  const float brightness = uniform(rng, 0.8f, 1.2f);

  Tensor<float> img(Shape{3, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int c = 0; c < 3; ++c) {
    std::fill(img.data() + c * plane, img.data() + (c + 1) * plane,
              app.background[static_cast<size_t>(c)]);
  }
  for (const RectSpec& r : app.rects) {
    const int x0 = std::clamp(static_cast<int>(r.x0 * static_cast<float>(w) + dx), 0, w);
    const int x1 = std::clamp(static_cast<int>(r.x1 * static_cast<float>(w) + dx), 0, w);
    const int y0 = std::clamp(static_cast<int>(r.y0 * static_cast<float>(h) + dy), 0, h);
    const int y1 = std::clamp(static_cast<int>(r.y1 * static_cast<float>(h) + dy), 0, h);
    for (int c = 0; c < 3; ++c) {
      float* pl = img.data() + c * plane;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) pl[static_cast<int64_t>(y) * w + x] = r.color[static_cast<size_t>(c)];
      }
    }
  }

  const auto tint = camera_tint(seed, cam);
  std::normal_distribution<float> noise(0.0f, 0.05f);
  for (int64_t p = 0; p < plane; ++p) {
    const float in[3] = {img.data()[p], img.data()[plane + p], img.data()[2 * plane + p]};
    for (int c = 0; c < 3; ++c) {
      float v = tint[static_cast<size_t>(c)][0] * in[0] + tint[static_cast<size_t>(c)][1] * in[1] +
                tint[static_cast<size_t>(c)][2] * in[2];
      v = v * brightness + noise(rng);
      img.data()[c * plane + p] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return img;
}

}  // namespace

void synth_dataset(const SynthParams& params, const std::string& out_dir) {
  if (params.n_ids < 2 || params.per_id < 2 || params.n_cams < 2) {
    throw std::invalid_argument("synth_dataset: need n_ids >= 2, per_id >= 2, n_cams >= 2");
  }
  if (params.height < 8 || params.width < 8) {
    throw std::invalid_argument("synth_dataset: image too small");
  }
  const fs::path root(out_dir);
  for (const char* split : {"train", "query", "gallery"}) {
    fs::create_directories(root / split);
  }

  const int n_train_ids = 2 * params.n_ids / 3;
  nlohmann::json manifest;
  manifest["n_ids"] = params.n_ids;
  manifest["per_id"] = params.per_id;
  manifest["n_cams"] = params.n_cams;
  manifest["height"] = params.height;
  manifest["width"] = params.width;
  manifest["seed"] = params.seed;
  manifest["n_train_ids"] = n_train_ids;
  nlohmann::json files = {{"train", nlohmann::json::array()},
                          {"query", nlohmann::json::array()},
                          {"gallery", nlohmann::json::array()}};

  char name[64];
  for (int pid = 0; pid < params.n_ids; ++pid) {
    const IdentityAppearance app = make_appearance(params.seed, pid);
    const bool train_id = pid < n_train_ids;
    for (int j = 0; j < params.per_id; ++j) {
      std::string split;
      int cam;
      if (train_id) {
        split = "train";
        cam = 1 + j % params.n_cams;
      } else if (j == 0) {
        split = "query";
        cam = 1;
      } else {
        split = "gallery";
        cam = 2 + (j - 1) % (params.n_cams - 1);
      }
      const Tensor<float> img =
          render_image(app, params.seed, pid, j, cam, params.height, params.width);
      std::snprintf(name, sizeof(name), "%04d_c%d_%06d.ppm", pid, cam, j);
      write_ppm((root / split / name).string(), img);
      files[split].push_back(name);
    }
  }
  manifest["files"] = std::move(files);

  std::ofstream mf(root / "manifest.json", std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write manifest.json under " + out_dir);
  mf << manifest.dump(2) << "\n";
}

}  // namespace hbmcn
