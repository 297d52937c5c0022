#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hbmcn {

struct FeatureMeta {
  int person_id = 0;
  int camera_id = 0;
};

struct FeatureSet {
  int64_t dim = 0;
  std::vector<float> data;  // row-major, one row per sample
  std::vector<FeatureMeta> meta;

  int64_t count() const { return static_cast<int64_t>(meta.size()); }
  const float* row(int64_t i) const { return data.data() + i * dim; }
};

/// Feature file: "HBFV" magic, u32 LE version, u64 LE manifest length,
/// JSON manifest {D, N, samples:[{person_id,camera_id}]}, then N*D f32 LE.
void save_features(const std::string& path, const FeatureSet& features);
FeatureSet load_features(const std::string& path);

/// Row-major |Q| x |G| cosine similarities; throws on a zero-norm row.
std::vector<float> cosine_matrix(const FeatureSet& query, const FeatureSet& gallery);

/// Single-query protocol filter + ranking. Gallery entries sharing the
/// query's person AND camera are dropped, junk ids (-1) are dropped, the rest
/// are ordered by descending score with ties broken by ascending gallery
/// index. relevant[i] marks same person on a different camera.
struct RankedList {
  std::vector<int> order;      // gallery indices, best first
  std::vector<char> relevant;  // aligned with order
};
RankedList rank_and_filter(const float* scores, const FeatureMeta& query,
                           const std::vector<FeatureMeta>& gallery);

/// AP = (1/R) * sum over relevant positions p of precision@p.
/// Empty relevance -> nullopt (the query is skipped, not scored).
std::optional<double> average_precision(const std::vector<char>& relevance_in_rank_order);

/// Fraction of queries whose first hit is at rank <= k (ranks 1-based).
double cmc_at(const std::vector<int>& first_hit_ranks, int k);

struct EvalReport {
  double map = 0.0;
  std::vector<double> cmc;  // cmc[r-1] = CMC at rank r
  std::vector<double> per_query_ap;
  int evaluated = 0;
  int skipped = 0;

  double cmc_at_rank(int k) const;
};

/// Single-query evaluation over all queries; throws when every query is
/// skipped (no valid cross-camera match anywhere).
EvalReport evaluate(const FeatureSet& query, const FeatureSet& gallery);

/// Writes metrics.csv (metric,value) and cmc_curve.csv (rank,cmc) into dir.
void emit_report(const EvalReport& report, const std::string& dir);

}  // namespace hbmcn
