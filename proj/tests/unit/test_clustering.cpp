#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "../common/oracle.hpp"
#include "ctxrisk/clustering.hpp"
#include "doctest.h"

using namespace ctxrisk;

namespace {

std::vector<Point> blobs(std::mt19937_64& rng, std::size_t per_blob, double spread = 0.05) {
  std::normal_distribution<double> noise(0.0, spread);
  std::vector<Point> pts;
  for (std::size_t i = 0; i < per_blob; ++i) pts.push_back({0.1 + noise(rng), 0.1 + noise(rng)});
  for (std::size_t i = 0; i < per_blob; ++i) pts.push_back({0.9 + noise(rng), 0.8 + noise(rng)});
  return pts;
}

bool blob_partition(const std::vector<int>& labels, std::size_t per_blob) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int expect = i < per_blob ? labels[0] : labels[per_blob];
    if (labels[i] != expect) return false;
  }
  return labels[0] != labels[per_blob];
}

FeatureVector coded(std::vector<int> codes) {
  FeatureVector v;
  for (int c : codes) {
    v.values.push_back(0.5);
    v.present.push_back(c != 0);
    v.codes.push_back(c == 0 ? RiskLevel::Low : level_from_code(c));
  }
  return v;
}

}  // namespace

TEST_CASE("dbscan basics") {
  auto a = dbscan({{0.3, 0.3}, {0.3, 0.3}}, 0.01, 2);
  CHECK(a.labels == std::vector<int>{0, 0});
  auto b = dbscan({{0.0, 0.0}, {0.0, 0.0}, {5.0, 5.0}}, 0.5, 2);
  CHECK(b.labels == std::vector<int>{0, 0, -1});
  CHECK(b.cluster_count == 1);
  CHECK_THROWS_AS(dbscan({}, 0.1, 2), Error);

  // chain of points reachable through core points, plus a border point
  std::vector<Point> line{{0.0}, {1.0}, {2.0}, {3.0}, {4.5}, {20.0}};
  auto c = dbscan(line, 1.5, 3);
  CHECK(c.labels == std::vector<int>{0, 0, 0, 0, 0, -1});
}

TEST_CASE("dbscan partition is invariant under permutation") {
  std::mt19937_64 rng(5);
  auto pts = blobs(rng, 40, 0.08);
  pts.push_back({0.5, 0.45});
  pts.push_back(pts[3]);
  auto base = dbscan(pts, 0.08, 4);
  for (int round = 0; round < 20; ++round) {
    std::vector<std::size_t> perm(pts.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Point> shuffled;
    for (auto i : perm) shuffled.push_back(pts[i]);
    auto got = dbscan(shuffled, 0.08, 4);
    std::vector<int> back(pts.size());
    for (std::size_t i = 0; i < perm.size(); ++i) back[perm[i]] = got.labels[i];
    canonicalize_labels(back);
    CHECK(back == base.labels);
  }
}

TEST_CASE("dbscan model predicts through core points") {
  std::mt19937_64 rng(9);
  auto pts = blobs(rng, 30, 0.02);
  auto fit = fit_dbscan(pts, {0.1, 5});
  CHECK(fit.assignment.cluster_count == 2);
  CHECK(fit.model.predict(std::vector<double>{0.1, 0.1}) == fit.assignment.labels[0]);
  CHECK(fit.model.predict(std::vector<double>{0.9, 0.8}) == fit.assignment.labels[30]);
  CHECK(fit.model.predict(std::vector<double>{0.5, 0.5}) == -1);
}

TEST_CASE("agglomerative matches the brute-force merge oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int linkage = 0; linkage < 3; ++linkage) {
    for (int round = 0; round < 30; ++round) {
      std::vector<Point> pts;
      std::size_t n = 5 + rng() % 16;
      for (std::size_t i = 0; i < n; ++i) pts.push_back({u(rng), u(rng), u(rng)});
      if (round % 3 == 0) pts.push_back(pts[1]);
      if (round % 5 == 0) pts.push_back(pts[2]);
      std::size_t k = 1 + rng() % pts.size();
      auto got = agglomerative(pts, k, static_cast<Linkage>(linkage));
      CHECK(got.labels == oracle::brute_agglomerative(pts, k, linkage));
      CHECK(got.merges == pts.size() - k);
      CHECK(got.cluster_count == k);
    }
  }
}

TEST_CASE("agglomerative edge cases") {
  std::vector<Point> pts{{0.0}, {0.0}, {1.0}, {0.0}};
  auto all = agglomerative(pts, 4, Linkage::Ward);
  CHECK(all.labels == std::vector<int>{0, 1, 2, 3});
  auto three = agglomerative(pts, 3, Linkage::Ward);
  CHECK(three.labels == std::vector<int>{0, 0, 1, 2});
  auto one = agglomerative(pts, 1, Linkage::Complete);
  CHECK(one.labels == std::vector<int>{0, 0, 0, 0});
  CHECK_THROWS_AS(agglomerative(pts, 5, Linkage::Ward), Error);
  std::mt19937_64 rng(2);
  auto b = blobs(rng, 10);
  CHECK(blob_partition(agglomerative(b, 2, Linkage::Ward).labels, 10));
}

TEST_CASE("gmm") {
  std::mt19937_64 rng(23);
  SUBCASE("k = 1 recovers the data mean") {
    std::vector<Point> pts{{0.0, 1.0}, {2.0, 3.0}, {4.0, 2.0}};
    auto r = gmm_em(pts, 1, {});
    CHECK(r.means[0][0] == doctest::Approx(2.0));
    CHECK(r.means[0][1] == doctest::Approx(2.0));
    CHECK(r.assignment.labels == std::vector<int>{0, 0, 0});
  }
  SUBCASE("blobs, determinism and monotone likelihood") {
    auto pts = blobs(rng, 25);
    GmmConfig cfg;
    cfg.seed = 4;
    auto r1 = gmm_em(pts, 2, cfg);
    auto r2 = gmm_em(pts, 2, cfg);
    CHECK(r1.assignment.labels == r2.assignment.labels);
    CHECK(r1.log_likelihood == r2.log_likelihood);
    CHECK(blob_partition(r1.assignment.labels, 25));
    for (std::size_t i = 1; i < r1.log_likelihood.size(); ++i) {
      CHECK(r1.log_likelihood[i] >= r1.log_likelihood[i - 1] - 1e-9);
    }
  }
  SUBCASE("duplicates trigger the variance floor") {
    std::vector<Point> pts{{0.5}, {0.5}, {0.5}, {0.5}};
    auto r = gmm_em(pts, 2, {});
    CHECK_FALSE(r.warnings.empty());
    CHECK(r.warnings[0].code == WarningCode::CollapsedComponent);
  }
  SUBCASE("spherical") {
    auto pts = blobs(rng, 20);
    GmmConfig cfg;
    cfg.covariance = CovarianceType::Spherical;
    auto r = gmm_em(pts, 2, cfg);
    CHECK(r.variances[0][0] == r.variances[0][1]);
    CHECK(blob_partition(r.assignment.labels, 20));
  }
}

TEST_CASE("cluster level ladder") {
  CHECK(level_for_crv(1.0) == ClusterLevel::L);
  CHECK(level_for_crv(1.5) == ClusterLevel::LM);
  CHECK(level_for_crv(1.52) == ClusterLevel::ML);
  CHECK(level_for_crv(1.55) == ClusterLevel::ML);
  CHECK(level_for_crv(2.0) == ClusterLevel::M);
  CHECK(level_for_crv(2.5) == ClusterLevel::MH);
  CHECK(level_for_crv(2.51) == ClusterLevel::HM);
  CHECK(level_for_crv(3.0) == ClusterLevel::H);
  CHECK(level_for_crv(7.0 / 4.0) == ClusterLevel::ML);
  CHECK_THROWS_AS(level_for_crv(0.5), Error);
}

TEST_CASE("summaries, dataset risk and decisions") {
  std::vector<FeatureVector> vs{coded({1, 1, 1, 1}), coded({3, 3, 3, 3}), coded({3, 2, 1, 1}),
                                coded({1, 0, 0, 1})};
  ClusterAssignment a;
  a.labels = {0, 1, 2, -1};
  auto s = summarize_clusters(a, vs);
  REQUIRE(s.size() == 4);
  CHECK(s[0].cluster == -1);
  CHECK(s[0].counts.total() == 2);
  CHECK(s[1].level == ClusterLevel::L);
  CHECK(s[2].level == ClusterLevel::H);
  CHECK(s[3].crv == 1.75);
  CHECK(s[3].level == ClusterLevel::ML);
  std::size_t total = 0;
  for (const auto& x : s) total += x.samples;
  CHECK(total == vs.size());

  std::vector<FeatureVector> lows{coded({1, 1, 1, 1})};
  CHECK(dataset_risk(lows).value == 1.0);
  std::vector<FeatureVector> highs{coded({3, 3, 3, 3})};
  CHECK(dataset_risk(highs).level == ClusterLevel::H);

  CHECK(decide_cluster(ClusterLevel::H, vs[0], false) == Decision::Deny);
  CHECK(decide_cluster(ClusterLevel::L, vs[1], false) == Decision::Permit);
  CHECK(decide_cluster(ClusterLevel::M, coded({2, 2, 3, 1}), false) == Decision::Deny);
  CHECK(decide_cluster(ClusterLevel::M, coded({2, 2, 2, 1}), false) == Decision::Permit);
  CHECK(decide_cluster(ClusterLevel::L, vs[0], true) == Decision::Escalate);

  auto d = decide_samples(a, s, vs);
  CHECK(d == std::vector<Decision>{Decision::Permit, Decision::Deny, Decision::Permit,
                                   Decision::Escalate});

  std::ostringstream out;
  write_cluster_report(out, s);
  CHECK(out.str().find("index,risk_value,risk_level,samples,pct_high,pct_medium,pct_low\n-1,1.00,L,1,0.00,0.00,100.00\n") == 0);
}

TEST_CASE("k-distance helper") {
  std::vector<Point> pts{{0.0}, {1.0}, {3.0}};
  CHECK(k_distance(pts, 1) == std::vector<double>{2.0, 1.0, 1.0});
  CHECK_THROWS_AS(k_distance(pts, 3), Error);
}
