#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "hbmcn/data.hpp"
#include "hbmcn/eval.hpp"

using namespace hbmcn;
namespace fs = std::filesystem;

namespace {

FeatureSet make_set(int64_t dim, const std::vector<FeatureMeta>& meta,
                    const std::vector<float>& data) {
  FeatureSet fs;
  fs.dim = dim;
  fs.meta = meta;
  fs.data = data;
  return fs;
}

// Brute-force single-query reference: same protocol and tie-break, written
// from the definitions, independent of the library implementation.
struct RefReport {
  double map;
  std::vector<double> cmc;
  int evaluated;
  int skipped;
};

RefReport reference_evaluate(const FeatureSet& q, const FeatureSet& g) {
  RefReport out{0.0, {}, 0, 0};
  std::vector<double> aps;
  std::vector<int> first_hits;
  size_t longest = 0;
  for (int64_t i = 0; i < q.count(); ++i) {
    // cosine scores
    std::vector<float> scores(static_cast<size_t>(g.count()));
    double qn = 0;
    for (int64_t k = 0; k < q.dim; ++k) qn += static_cast<double>(q.row(i)[k]) * q.row(i)[k];
    for (int64_t j = 0; j < g.count(); ++j) {
      double dot = 0, gn = 0;
      for (int64_t k = 0; k < q.dim; ++k) {
        dot += static_cast<double>(q.row(i)[k]) * g.row(j)[k];
        gn += static_cast<double>(g.row(j)[k]) * g.row(j)[k];
      }
      scores[static_cast<size_t>(j)] = static_cast<float>(dot / (std::sqrt(qn) * std::sqrt(gn)));
    }
    // protocol filter
    std::vector<int> order;
    for (int j = 0; j < g.count(); ++j) {
      const FeatureMeta& m = g.meta[static_cast<size_t>(j)];
      if (m.person_id == -1) continue;
      if (m.person_id == q.meta[static_cast<size_t>(i)].person_id &&
          m.camera_id == q.meta[static_cast<size_t>(i)].camera_id) {
        continue;
      }
      order.push_back(j);
    }
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)]) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
      }
      return a < b;
    });
    int relevant_total = 0;
    for (int j : order) {
      const FeatureMeta& m = g.meta[static_cast<size_t>(j)];
      if (m.person_id == q.meta[static_cast<size_t>(i)].person_id &&
          m.camera_id != q.meta[static_cast<size_t>(i)].camera_id) {
        ++relevant_total;
      }
    }
    if (relevant_total == 0) {
      ++out.skipped;
      continue;
    }
    ++out.evaluated;
    longest = std::max(longest, order.size());
    double ap = 0;
    int seen = 0, first = -1;
    for (size_t p = 0; p < order.size(); ++p) {
      const FeatureMeta& m = g.meta[static_cast<size_t>(order[p])];
      const bool rel = m.person_id == q.meta[static_cast<size_t>(i)].person_id &&
                       m.camera_id != q.meta[static_cast<size_t>(i)].camera_id;
      if (rel) {
        ++seen;
        ap += static_cast<double>(seen) / static_cast<double>(p + 1);
        if (first < 0) first = static_cast<int>(p + 1);
      }
    }
    aps.push_back(ap / relevant_total);
    first_hits.push_back(first);
  }
  double sum = 0;
  for (double a : aps) sum += a;
  out.map = sum / static_cast<double>(aps.size());
  out.cmc.resize(longest);
  for (size_t r = 1; r <= longest; ++r) {
    int hits = 0;
    for (int f : first_hits) {
      if (f <= static_cast<int>(r)) ++hits;
    }
    out.cmc[r - 1] = static_cast<double>(hits) / static_cast<double>(first_hits.size());
  }
  return out;
}

FeatureSet random_planted(std::mt19937_64& rng, int n, int dim, int n_ids, int n_cams) {
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::uniform_int_distribution<int> id(0, n_ids - 1);
  std::uniform_int_distribution<int> cam(1, n_cams);
  FeatureSet fs;
  fs.dim = dim;
  for (int i = 0; i < n; ++i) {
    fs.meta.push_back({id(rng), cam(rng)});
    for (int k = 0; k < dim; ++k) fs.data.push_back(dist(rng));
  }
  return fs;
}

}  // namespace

TEST_CASE("cosine_matrix: identical, orthogonal, and scaled vectors") {
  FeatureSet q = make_set(2, {{0, 1}, {1, 1}}, {1, 0, 3, 0});
  FeatureSet g = make_set(2, {{0, 2}, {1, 2}}, {1, 0, 0, 5});
  const std::vector<float> sim = cosine_matrix(q, g);
  CHECK(sim[0] == doctest::Approx(1.0f));   // identical direction
  CHECK(sim[1] == doctest::Approx(0.0f));   // orthogonal
  CHECK(sim[2] == doctest::Approx(1.0f));   // scale invariance: 3*e0 vs e0
  CHECK(sim[3] == doctest::Approx(0.0f));

  FeatureSet zero = make_set(2, {{0, 1}}, {0, 0});
  CHECK_THROWS_AS(cosine_matrix(zero, g), std::invalid_argument);
  FeatureSet wrong = make_set(3, {{0, 1}}, {1, 0, 0});
  CHECK_THROWS_AS(cosine_matrix(wrong, g), std::invalid_argument);
}

TEST_CASE("rank_and_filter: protocol exclusions and index tie-break") {
  const std::vector<FeatureMeta> gallery = {
      {7, 1},   // same id, same cam as query -> excluded
      {7, 2},   // same id, other cam -> relevant
      {-1, 3},  // junk -> excluded
      {8, 1},   // other id -> kept, irrelevant
      {8, 2},
  };
  const FeatureMeta query{7, 1};
  const std::vector<float> scores = {0.9f, 0.5f, 0.99f, 0.5f, 0.1f};
  const RankedList ranked = rank_and_filter(scores.data(), query, gallery);
  REQUIRE(ranked.order.size() == 3);
  // scores 0.5 (idx 1), 0.5 (idx 3), 0.1 (idx 4): tie broken by index
  CHECK(ranked.order[0] == 1);
  CHECK(ranked.order[1] == 3);
  CHECK(ranked.order[2] == 4);
  CHECK(ranked.relevant[0] == 1);
  CHECK(ranked.relevant[1] == 0);
  CHECK(ranked.relevant[2] == 0);
}

TEST_CASE("average_precision: frozen hand cases") {
  CHECK(*average_precision({1, 1, 1}) == doctest::Approx(1.0).epsilon(1e-12));
  // 2 relevant at positions 1 and 3: (1/1 + 2/3) / 2
  const double expected = (1.0 + 2.0 / 3.0) / 2.0;
  CHECK(std::abs(*average_precision({1, 0, 1, 0}) - expected) <= 1e-9);
  // single relevant at position k -> 1/k
  CHECK(*average_precision({0, 0, 0, 1}) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(!average_precision({0, 0, 0}).has_value());
  CHECK(!average_precision({}).has_value());
}

TEST_CASE("AP is in [0,1] and hits 1 exactly when relevant precede irrelevant") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<char> rel(1 + rng() % 12);
    bool any = false;
    for (char& r : rel) {
      r = rng() % 2;
      any |= r;
    }
    if (!any) continue;
    const double ap = *average_precision(rel);
    CHECK(ap >= 0.0);
    CHECK(ap <= 1.0);
    const bool sorted_desc = std::is_sorted(rel.begin(), rel.end(), std::greater<char>());
    CHECK((ap == 1.0) == sorted_desc);
  }
}

TEST_CASE("cmc: counting oracle") {
  const std::vector<int> first_hits = {1, 3};
  CHECK(cmc_at(first_hits, 1) == doctest::Approx(0.5));
  CHECK(cmc_at(first_hits, 2) == doctest::Approx(0.5));
  CHECK(cmc_at(first_hits, 3) == doctest::Approx(1.0));
  CHECK(cmc_at(first_hits, 100) == doctest::Approx(1.0));
  CHECK(cmc_at({1, 1, 1}, 1) == doctest::Approx(1.0));
}

TEST_CASE("evaluate: id-constant features retrieve perfectly") {
  // every sample of an id shares one feature vector; ids span 2 cameras
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  const int n_ids = 5, dim = 8;
  std::map<int, std::vector<float>> id_vec;
  for (int id = 0; id < n_ids; ++id) {
    std::vector<float> v(dim);
    for (float& x : v) x = dist(rng);
    id_vec[id] = v;
  }
  FeatureSet set;
  set.dim = dim;
  for (int id = 0; id < n_ids; ++id) {
    for (int cam = 1; cam <= 2; ++cam) {
      set.meta.push_back({id, cam});
      set.data.insert(set.data.end(), id_vec[id].begin(), id_vec[id].end());
    }
  }
  const EvalReport report = evaluate(set, set);
  CHECK(report.map == doctest::Approx(1.0));
  CHECK(report.cmc_at_rank(1) == doctest::Approx(1.0));
  CHECK(report.evaluated == 10);
  CHECK(report.skipped == 0);
}

TEST_CASE("evaluate: matches the brute-force reference exactly on random instances") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int nq = 5 + static_cast<int>(rng() % 46);   // up to 50
    const int ng = 20 + static_cast<int>(rng() % 181); // up to 200
    const int dim = 4 + static_cast<int>(rng() % 13);
    const int n_ids = 3 + static_cast<int>(rng() % 10);
    FeatureSet q = random_planted(rng, nq, dim, n_ids, 3);
    FeatureSet g = random_planted(rng, ng, dim, n_ids, 3);
    // sprinkle junk into the gallery
    for (int j = 0; j < ng / 10; ++j) g.meta[rng() % static_cast<size_t>(ng)].person_id = -1;

    bool all_skipped = true;
    for (const FeatureMeta& qm : q.meta) {
      for (const FeatureMeta& gm : g.meta) {
        if (gm.person_id == qm.person_id && gm.camera_id != qm.camera_id) all_skipped = false;
      }
    }
    if (all_skipped) continue;

    const EvalReport fast = evaluate(q, g);
    const RefReport ref = reference_evaluate(q, g);
    CHECK(fast.map == ref.map);
    CHECK(fast.evaluated == ref.evaluated);
    CHECK(fast.skipped == ref.skipped);
    REQUIRE(fast.cmc.size() == ref.cmc.size());
    for (size_t r = 0; r < ref.cmc.size(); ++r) CHECK(fast.cmc[r] == ref.cmc[r]);
  }
}

TEST_CASE("evaluate: permuting gallery storage leaves the metrics unchanged") {
  std::mt19937_64 rng(8);
  FeatureSet q = random_planted(rng, 12, 6, 4, 3);
  FeatureSet g = random_planted(rng, 40, 6, 4, 3);
  const EvalReport before = evaluate(q, g);

  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  FeatureSet shuffled;
  shuffled.dim = g.dim;
  for (int j : perm) {
    shuffled.meta.push_back(g.meta[static_cast<size_t>(j)]);
    shuffled.data.insert(shuffled.data.end(), g.row(j), g.row(j) + g.dim);
  }
  const EvalReport after = evaluate(q, shuffled);
  CHECK(before.map == doctest::Approx(after.map).epsilon(1e-12));
  REQUIRE(before.cmc.size() == after.cmc.size());
  for (size_t r = 0; r < before.cmc.size(); ++r) {
    CHECK(before.cmc[r] == doctest::Approx(after.cmc[r]).epsilon(1e-12));
  }
}

TEST_CASE("evaluate: skipped queries are counted; all-skipped is an error") {
  FeatureSet q = make_set(2, {{1, 1}, {9, 1}}, {1, 0, 0, 1});
  FeatureSet g = make_set(2, {{1, 2}, {2, 1}}, {1, 0, 0, 1});
  const EvalReport report = evaluate(q, g);  // id 9 has no match anywhere
  CHECK(report.evaluated == 1);
  CHECK(report.skipped == 1);

  FeatureSet g_none = make_set(2, {{3, 1}}, {1, 0});
  CHECK_THROWS_AS(evaluate(q, g_none), std::runtime_error);
}

TEST_CASE("e2e CMC curve is non-decreasing and ends at 1 when every query matches") {
  std::mt19937_64 rng(9);
  FeatureSet q = random_planted(rng, 20, 5, 4, 2);
  FeatureSet g = random_planted(rng, 60, 5, 4, 2);
  // guarantee every id appears on both cameras in the gallery
  for (int id = 0; id < 4; ++id) {
    g.meta[static_cast<size_t>(2 * id)].person_id = id;
    g.meta[static_cast<size_t>(2 * id)].camera_id = 1;
    g.meta[static_cast<size_t>(2 * id + 1)].person_id = id;
    g.meta[static_cast<size_t>(2 * id + 1)].camera_id = 2;
  }
  const EvalReport report = evaluate(q, g);
  CHECK(report.skipped == 0);
  for (size_t r = 1; r < report.cmc.size(); ++r) CHECK(report.cmc[r] >= report.cmc[r - 1]);
  CHECK(report.cmc.back() == doctest::Approx(1.0));
  for (double v : report.cmc) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(report.map >= 0.0);
  CHECK(report.map <= 1.0);
}

TEST_CASE("emit_report: stable bytes, exact metric lines, full curve length") {
  EvalReport report;
  report.map = 0.5;
  report.cmc = {0.25, 0.5, 1.0};
  report.per_query_ap = {0.5, 0.5};
  report.evaluated = 2;
  report.skipped = 1;

  const fs::path dir = fs::temp_directory_path() / "hbmcn_eval_report";
  fs::remove_all(dir);
  emit_report(report, dir.string());

  std::ifstream metrics(dir / "metrics.csv");
  std::string line;
  std::getline(metrics, line);
  CHECK(line == "metric,value");
  std::getline(metrics, line);
  CHECK(line == "mAP,0.500000");
  std::getline(metrics, line);
  CHECK(line == "R1,0.250000");

  std::ifstream curve(dir / "cmc_curve.csv");
  int rows = 0;
  std::getline(curve, line);
  CHECK(line == "rank,cmc");
  while (std::getline(curve, line) && !line.empty()) ++rows;
  CHECK(rows == 3);

  const auto read_all = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  const std::string first = read_all(dir / "metrics.csv") + read_all(dir / "cmc_curve.csv");
  emit_report(report, dir.string());
  const std::string second = read_all(dir / "metrics.csv") + read_all(dir / "cmc_curve.csv");
  CHECK(first == second);
}

TEST_CASE("feature files: round trip, wrong magic, truncation") {
  std::mt19937_64 rng(10);
  FeatureSet fs_out = random_planted(rng, 9, 7, 3, 2);
  const fs::path dir = fs::temp_directory_path() / "hbmcn_eval_feat";
  fs::create_directories(dir);
  const fs::path path = dir / "feat.hbfv";
  save_features(path.string(), fs_out);
  const FeatureSet fs_in = load_features(path.string());
  CHECK(fs_in.dim == fs_out.dim);
  REQUIRE(fs_in.count() == fs_out.count());
  CHECK(fs_in.data == fs_out.data);
  for (int64_t i = 0; i < fs_in.count(); ++i) {
    CHECK(fs_in.meta[static_cast<size_t>(i)].person_id ==
          fs_out.meta[static_cast<size_t>(i)].person_id);
    CHECK(fs_in.meta[static_cast<size_t>(i)].camera_id ==
          fs_out.meta[static_cast<size_t>(i)].camera_id);
  }

  std::vector<char> bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  bytes[0] = 'Z';
  {
    std::ofstream out(dir / "bad.hbfv", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(load_features((dir / "bad.hbfv").string()),
                       doctest::Contains("magic"), std::runtime_error);

  bytes[0] = 'H';
  bytes.resize(bytes.size() - 5);
  {
    std::ofstream out(dir / "short.hbfv", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(load_features((dir / "short.hbfv").string()),
                       doctest::Contains("truncated"), std::runtime_error);
}
