#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxrisk/error.hpp"
#include "ctxrisk/risk_features.hpp"

namespace ctxrisk {

using Point = std::vector<double>;

enum class Algorithm { Dbscan, Agglomerative, Gmm };
enum class Linkage { Ward, Average, Complete };
enum class CovarianceType { Diagonal, Spherical };

std::string_view to_string(Algorithm a);
Algorithm algorithm_from_string(std::string_view text);
std::string_view to_string(Linkage l);
Linkage linkage_from_string(std::string_view text);
std::string_view to_string(CovarianceType c);
CovarianceType covariance_from_string(std::string_view text);

struct DbscanConfig {
  double eps = 0.05;
  std::size_t min_pts = 10;
};

struct AgglomerativeConfig {
  std::size_t k = 0;  // 0: use the DBSCAN cluster count
  Linkage linkage = Linkage::Ward;
};

struct GmmConfig {
  std::size_t k = 0;  // 0: use the DBSCAN cluster count
  std::size_t max_iter = 200;
  double tolerance = 1e-6;
  CovarianceType covariance = CovarianceType::Diagonal;
  std::uint64_t seed = 0;
  double variance_floor = 1e-6;
};

struct ClusteringConfig {
  DbscanConfig dbscan;
  AgglomerativeConfig agglomerative;
  GmmConfig gmm;
};

struct ClusterAssignment {
  std::vector<int> labels;  // -1 is DBSCAN noise
  Algorithm algorithm = Algorithm::Dbscan;
  std::size_t cluster_count = 0;
  std::uint64_t seed = 0;
  std::size_t merges = 0;  // agglomerative only
  ClusteringConfig config;
};

/// Fitted DBSCAN state sufficient to place new points.
struct DbscanModel {
  DbscanConfig config;
  std::vector<Point> core_points;  // unique core points
  std::vector<int> core_labels;

  /// Label of the nearest core point within eps, else -1.
  int predict(std::span<const double> point) const;
};

struct DbscanResult {
  ClusterAssignment assignment;
  DbscanModel model;
};

DbscanResult fit_dbscan(const std::vector<Point>& points, const DbscanConfig& cfg);
ClusterAssignment dbscan(const std::vector<Point>& points, double eps, std::size_t min_pts);

ClusterAssignment agglomerative(const std::vector<Point>& points, std::size_t k, Linkage linkage);

struct GmmResult {
  ClusterAssignment assignment;
  std::vector<double> log_likelihood;  // one entry per E-step, starting from the initial fit
  std::vector<Point> means;
  std::vector<Point> variances;  // per dimension (all equal for spherical)
  std::vector<double> weights;
  Warnings warnings;
};

GmmResult gmm_em(const std::vector<Point>& points, std::size_t k, const GmmConfig& cfg);

/// Distance of every point to its k-th nearest other point, sorted descending.
std::vector<double> k_distance(const std::vector<Point>& points, std::size_t k);

enum class ClusterLevel { L, LM, ML, M, MH, HM, H };

std::string_view to_string(ClusterLevel level);
ClusterLevel cluster_level_from_string(std::string_view text);

/// Seven-level ladder over [1, 3]: 1 -> L, (1, 1.5] -> LM, (1.5, 2) -> ML, 2 -> M,
/// (2, 2.5] -> MH, (2.5, 3) -> HM, 3 -> H.
ClusterLevel level_for_crv(double crv);

struct RiskCounts {
  std::size_t high = 0;
  std::size_t medium = 0;
  std::size_t low = 0;

  std::size_t total() const { return high + medium + low; }
  double crv() const;
};

RiskCounts count_risks(std::span<const FeatureVector> vectors);

struct ClusterRiskSummary {
  int cluster = 0;
  RiskCounts counts;
  double crv = 1.0;
  ClusterLevel level = ClusterLevel::L;
  std::size_t samples = 0;
};

/// One summary per label, ascending (noise first).
std::vector<ClusterRiskSummary> summarize_clusters(const ClusterAssignment& assignment,
                                                   std::span<const FeatureVector> vectors);

struct DatasetRisk {
  double value = 1.0;
  ClusterLevel level = ClusterLevel::L;
};

DatasetRisk dataset_risk(std::span<const FeatureVector> vectors);

enum class Decision { Permit, Deny, Escalate };

std::string_view to_string(Decision d);
Decision decision_from_string(std::string_view text);

Decision decide_cluster(ClusterLevel level, const FeatureVector& sample, bool outlier);

/// Level of each sample's cluster; noise samples take their own cluster's level too.
std::vector<Decision> decide_samples(const ClusterAssignment& assignment,
                                     const std::vector<ClusterRiskSummary>& summaries,
                                     std::span<const FeatureVector> vectors);

/// index, risk_value, risk_level, samples, pct_high, pct_medium, pct_low
void write_cluster_report(std::ostream& out, const std::vector<ClusterRiskSummary>& summaries);

/// Relabels so cluster ids follow the order of first appearance; -1 is kept.
void canonicalize_labels(std::vector<int>& labels);

}  // namespace ctxrisk
