#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxrisk/clustering.hpp"
#include "ctxrisk/coupling.hpp"
#include "ctxrisk/event_engine.hpp"
#include "ctxrisk/risk_features.hpp"

namespace ctxrisk {

struct PolicyWeights {
  double w_devloc = 0.5;
  double w_traffic = 0.5;
  double w_coexist = 0.5;
  double w_docloc = 0.5;
  double w_doctime = 0.5;
  double w_dev = 0.3;
  double w_env = 0.4;
  double w_act = 0.3;
  double permit_threshold = 1.2;

  /// Throws InvalidConfig unless the overall weights sum to 1 and all are >= 0.
  void validate() const;
};

enum class TrafficDirection { Crowding, Rarity };

std::string_view to_string(TrafficDirection d);
TrafficDirection traffic_direction_from_string(std::string_view text);

/// Mean/stdev thresholds over the per-event person count. Crowding: High above
/// mean + alpha*stdev, Medium above the mean. Rarity mirrors this below the mean.
struct TrafficModel {
  double mean = 0.0;
  double stdev = 0.0;
  double alpha = 1.0;
  TrafficDirection direction = TrafficDirection::Crowding;

  RiskLevel classify(std::size_t persons) const;
};

TrafficModel fit_traffic(const EventIndex& index, double alpha, TrafficDirection direction);

struct PolicyModel {
  CouplingSet couplings;
  std::optional<Binning> dev_loc;
  std::optional<Binning> doc_loc;
  std::optional<Binning> triple;
  std::optional<Binning> doc_time;
  TrafficModel traffic;
  PolicyWeights weights;
};

PolicyModel build_policy_model(const CouplingSet& couplings, const EventIndex& index,
                               const RiskBinningConfig& binning, const PolicyWeights& weights,
                               double traffic_alpha = 1.0,
                               TrafficDirection direction = TrafficDirection::Crowding,
                               Warnings* warnings = nullptr);

struct PolicyRiskBreakdown {
  int r_devloc = 3;
  int r_traffic = 3;
  int r_coexist = 3;
  int r_docloc = 3;
  int r_doctime = 3;
  double r_dev = 0.0;
  double r_env = 0.0;
  double r_act = 0.0;
  double r_overall = 0.0;
  Decision decision = Decision::Deny;
  Warnings warnings;
};

/// Scores one read of `document` through `device` inside `event` (the device's
/// current event). Missing couplings score High.
PolicyRiskBreakdown evaluate_policy(const Event& event, const FactorId& device,
                                    const FactorId& document, Timestamp time,
                                    const PolicyModel& model);

/// Recomputes the weighted sums and decision from the five codes.
void apply_weights(PolicyRiskBreakdown& b, const PolicyWeights& w);

struct ConsistencyTable {
  std::size_t permit_medium_low = 0;
  std::size_t permit_high = 0;
  std::size_t deny_medium_low = 0;
  std::size_t deny_high = 0;
  std::size_t escalated = 0;
  /// Policy decision -> cluster level -> count (compared reads only).
  std::map<Decision, std::map<ClusterLevel, std::size_t>> level_histogram;

  std::size_t compared() const {
    return permit_medium_low + permit_high + deny_medium_low + deny_high;
  }
  std::optional<double> permit_consistency() const;  // percent
  std::optional<double> deny_consistency() const;
  std::optional<double> overall() const;
};

/// Cross-tabulates policy Permit/Deny against RASA's bucket (High = RASA Deny).
/// Reads RASA escalated are counted separately and excluded from the rates.
ConsistencyTable compare_consistency(std::span<const Decision> rasa,
                                     std::span<const Decision> policy,
                                     std::span<const ClusterLevel> levels = {});

/// Rows Policy / <algorithm> / Number / Consistency / Overall Consistency.
void write_consistency_csv(std::ostream& out, const ConsistencyTable& table,
                           const std::string& algorithm_label = "DBSCAN");
/// policy,rasa_bucket,count rows plus escalated, and the level histogram.
void write_consistency_detail_csv(std::ostream& out, const ConsistencyTable& table);

std::string format_percent(double pct);

struct ThresholdChoice {
  double theta = 0.0;
  double consistency = 0.0;  // percent; 0 when nothing is comparable
};

/// Sweeps theta over `grid`; each read is Permit when r_overall < theta. Ties keep the
/// smallest theta.
ThresholdChoice tune_threshold(std::span<const double> r_overall,
                               std::span<const Decision> rasa, std::span<const double> grid);

/// 0.85, 0.90, ..., 2.55 (and one step above, so "permit all" is reachable).
std::vector<double> default_theta_grid();

}  // namespace ctxrisk
