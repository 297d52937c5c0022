#include "hbmcn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "hbmcn/data.hpp"
#include "hbmcn/io_util.hpp"

namespace hbmcn {

namespace {
constexpr char kFeatureMagic[4] = {'H', 'B', 'F', 'V'};
constexpr uint32_t kFeatureVersion = 1;
}  // namespace

void save_features(const std::string& path, const FeatureSet& features) {
  if (features.dim <= 0) throw std::invalid_argument("save_features: dimension must be positive");
  if (features.data.size() !=
      static_cast<size_t>(features.dim) * static_cast<size_t>(features.count())) {
    throw std::invalid_argument("save_features: data size does not match N*D");
  }
  nlohmann::json manifest;
  manifest["D"] = features.dim;
  manifest["N"] = features.count();
  nlohmann::json samples = nlohmann::json::array();
  for (const FeatureMeta& m : features.meta) {
    samples.push_back({{"person_id", m.person_id}, {"camera_id", m.camera_id}});
  }
  manifest["samples"] = std::move(samples);
  const std::string manifest_text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kFeatureMagic, 4);
  io::write_u32le(out, kFeatureVersion);
  io::write_u64le(out, manifest_text.size());
  out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
  for (float v : features.data) io::write_f32le(out, v);
  if (!out) throw std::runtime_error("short write to " + path);
}

FeatureSet load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const auto fail = [&](const std::string& why) {
    throw std::runtime_error("bad feature file " + path + ": " + why);
  };

  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kFeatureMagic)) fail("wrong magic");
  if (io::read_u32le(in) != kFeatureVersion) fail("unknown version");
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

  FeatureSet fs;
  try {
    fs.dim = manifest.at("D").get<int64_t>();
    const int64_t n = manifest.at("N").get<int64_t>();
    for (const nlohmann::json& s : manifest.at("samples")) {
      fs.meta.push_back({s.at("person_id").get<int>(), s.at("camera_id").get<int>()});
    }
    if (static_cast<int64_t>(fs.meta.size()) != n) fail("sample list length != N");
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("manifest fields: ") + e.what());
  }
  if (fs.dim <= 0) fail("non-positive dimension");

  fs.data.resize(static_cast<size_t>(fs.dim) * fs.meta.size());
  for (float& v : fs.data) {
    if (!io::try_read_f32le(in, v)) fail("truncated feature blob");
  }
  return fs;
}

std::vector<float> cosine_matrix(const FeatureSet& query, const FeatureSet& gallery) {
  if (query.dim != gallery.dim) {
    throw std::invalid_argument("cosine_matrix: dimension mismatch " + std::to_string(query.dim) +
                                " vs " + std::to_string(gallery.dim));
  }
  const int64_t d = query.dim;
  const auto norms = [&](const FeatureSet& fs, const char* which) {
    std::vector<float> out(static_cast<size_t>(fs.count()));
    for (int64_t i = 0; i < fs.count(); ++i) {
      const float* row = fs.row(i);
      double acc = 0;
      for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(row[j]) * row[j];
      if (acc == 0.0) {
        throw std::invalid_argument(std::string("cosine_matrix: zero-norm ") + which +
                                    " feature row " + std::to_string(i));
      }
      out[static_cast<size_t>(i)] = static_cast<float>(std::sqrt(acc));
    }
    return out;
  };
  const std::vector<float> qn = norms(query, "query");
  const std::vector<float> gn = norms(gallery, "gallery");

  std::vector<float> sim(static_cast<size_t>(query.count()) * static_cast<size_t>(gallery.count()));
  for (int64_t i = 0; i < query.count(); ++i) {
    const float* q = query.row(i);
    float* out_row = sim.data() + i * gallery.count();
    for (int64_t j = 0; j < gallery.count(); ++j) {
      const float* g = gallery.row(j);
      double acc = 0;
      for (int64_t k = 0; k < d; ++k) acc += static_cast<double>(q[k]) * g[k];
      out_row[j] = static_cast<float>(acc / (static_cast<double>(qn[static_cast<size_t>(i)]) *
                                             gn[static_cast<size_t>(j)]));
    }
  }
  return sim;
}

RankedList rank_and_filter(const float* scores, const FeatureMeta& query,
                           const std::vector<FeatureMeta>& gallery) {
  RankedList out;
  out.order.reserve(gallery.size());
  for (size_t j = 0; j < gallery.size(); ++j) {
    const FeatureMeta& g = gallery[j];
    if (g.person_id == kJunkId) continue;
    if (g.person_id == query.person_id && g.camera_id == query.camera_id) continue;
    out.order.push_back(static_cast<int>(j));
  }
  std::sort(out.order.begin(), out.order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  out.relevant.reserve(out.order.size());
  for (int j : out.order) {
    const FeatureMeta& g = gallery[static_cast<size_t>(j)];
    out.relevant.push_back(g.person_id == query.person_id && g.camera_id != query.camera_id);
  }
  return out;
}

std::optional<double> average_precision(const std::vector<char>& relevance_in_rank_order) {
  int64_t relevant_total = 0;
  double sum = 0.0;
  int64_t seen = 0;
  for (size_t p = 0; p < relevance_in_rank_order.size(); ++p) {
    if (relevance_in_rank_order[p]) {
      ++seen;
      sum += static_cast<double>(seen) / static_cast<double>(p + 1);
      ++relevant_total;
    }
  }
  if (relevant_total == 0) return std::nullopt;
  return sum / static_cast<double>(relevant_total);
}

double cmc_at(const std::vector<int>& first_hit_ranks, int k) {
  if (first_hit_ranks.empty()) return 0.0;
  int64_t hits = 0;
  for (int r : first_hit_ranks) {
    if (r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(first_hit_ranks.size());
}

double EvalReport::cmc_at_rank(int k) const {
  if (k < 1) throw std::invalid_argument("cmc_at_rank: rank is 1-based");
  if (cmc.empty()) return 0.0;
  const size_t idx = std::min(static_cast<size_t>(k), cmc.size());
  return cmc[idx - 1];
}

EvalReport evaluate(const FeatureSet& query, const FeatureSet& gallery) {
  if (query.count() == 0 || gallery.count() == 0) {
    throw std::invalid_argument("evaluate: empty query or gallery set");
  }
  const std::vector<float> sim = cosine_matrix(query, gallery);

  EvalReport report;
  std::vector<int> first_hits;
  size_t max_list = 0;
  double ap_sum = 0.0;
  for (int64_t i = 0; i < query.count(); ++i) {
    const RankedList ranked =
        rank_and_filter(sim.data() + i * gallery.count(), query.meta[static_cast<size_t>(i)],
                        gallery.meta);
    const std::optional<double> ap = average_precision(ranked.relevant);
    if (!ap) {
      ++report.skipped;
      continue;
    }
    ++report.evaluated;
    ap_sum += *ap;
    report.per_query_ap.push_back(*ap);
    max_list = std::max(max_list, ranked.relevant.size());
    for (size_t p = 0; p < ranked.relevant.size(); ++p) {
      if (ranked.relevant[p]) {
        first_hits.push_back(static_cast<int>(p + 1));
        break;
      }
    }
  }
  if (report.evaluated == 0) {
    throw std::runtime_error("evaluate: every query was skipped (no valid matches)");
  }
  report.map = ap_sum / static_cast<double>(report.evaluated);
  report.cmc.resize(max_list);
  for (size_t r = 1; r <= max_list; ++r) {
    report.cmc[r - 1] = cmc_at(first_hits, static_cast<int>(r));
  }
  return report;
}

void emit_report(const EvalReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  char line[64];

  std::ofstream metrics(root / "metrics.csv", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write metrics.csv under " + dir);
  metrics << "metric,value\n";
  std::snprintf(line, sizeof(line), "mAP,%.6f\n", report.map);
  metrics << line;
  for (int k : {1, 5, 10, 20}) {
    std::snprintf(line, sizeof(line), "R%d,%.6f\n", k, report.cmc_at_rank(k));
    metrics << line;
  }
  std::snprintf(line, sizeof(line), "evaluated,%d\n", report.evaluated);
  metrics << line;
  std::snprintf(line, sizeof(line), "skipped,%d\n", report.skipped);
  metrics << line;
  if (!metrics) throw std::runtime_error("short write to metrics.csv");

  std::ofstream curve(root / "cmc_curve.csv", std::ios::trunc);
  if (!curve) throw std::runtime_error("cannot write cmc_curve.csv under " + dir);
  curve << "rank,cmc\n";
  for (size_t r = 0; r < report.cmc.size(); ++r) {
    std::snprintf(line, sizeof(line), "%zu,%.6f\n", r + 1, report.cmc[r]);
    curve << line;
  }
  if (!curve) throw std::runtime_error("short write to cmc_curve.csv");
}

}  // namespace hbmcn
