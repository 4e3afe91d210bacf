#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxrisk/coupling.hpp"
#include "ctxrisk/error.hpp"
#include "ctxrisk/event_engine.hpp"

namespace ctxrisk {

enum class RiskLevel { Low = 1, Medium = 2, High = 3 };

constexpr int code(RiskLevel level) { return static_cast<int>(level); }
RiskLevel level_from_code(int code);
std::string_view to_string(RiskLevel level);

enum class BinPopulation { AllCells, NonZeroCells };

struct RiskBinningConfig {
  double alpha = 1.0;
  BinPopulation population = BinPopulation::AllCells;
  /// Per-matrix alpha keyed by "<flavor>:<A>-<B>" (e.g. "Frequency:Ppl-Ppl"),
  /// or "triple" / "doc_time" for the policy couplings.
  std::map<std::string, double> alpha_overrides;

  double alpha_for(const std::string& key) const;
};

/// Mean-value binning: High below mean - alpha*stdev (clamped at 0), Medium below
/// the mean, Low otherwise. A zero spread makes every value Low.
struct Binning {
  double mean = 0.0;
  double stdev = 0.0;
  double t_high = 0.0;
  double t_med = 0.0;
  bool degenerate = false;

  RiskLevel classify(double value) const;
};

Binning bin_values(std::span<const double> values, double alpha, BinPopulation population,
                   Warnings* warnings = nullptr);

struct MatrixBinning {
  Binning binning;
  std::vector<RiskLevel> cells;  // row-major, undefined cells Low
};

MatrixBinning bin_matrix(const CouplingMatrix& matrix, const RiskBinningConfig& cfg,
                         Warnings* warnings = nullptr);

std::string binning_key(CouplingType type, CouplingFlavor flavor);

enum class FeatureFlavor { Frequency, Duration, Combined };

std::string_view to_string(FeatureFlavor flavor);
FeatureFlavor feature_flavor_from_string(std::string_view text);

struct FeatureConfig {
  std::vector<CouplingType> couplings{kFeatureCouplings.begin(), kFeatureCouplings.end()};
  double absent_value = 1.0;
};

struct FeatureVector {
  EventId sample = 0;
  FeatureFlavor flavor = FeatureFlavor::Frequency;
  std::vector<double> values;
  std::vector<bool> present;
  std::vector<RiskLevel> codes;  // absent features carry Low

  std::size_t present_count() const;
  bool any_high() const;
};

/// Coupling matrices with their binnings, ready to featurize events.
struct RiskModel {
  CouplingSet couplings;
  RiskBinningConfig binning_config;
  FeatureConfig feature_config;
  std::map<std::string, Binning> binnings;  // keyed by binning_key

  const Binning* binning_for(CouplingType type, CouplingFlavor flavor) const;
  std::vector<std::string> feature_names(FeatureFlavor flavor) const;
};

RiskModel build_risk_model(CouplingSet couplings, const RiskBinningConfig& binning = {},
                           const FeatureConfig& features = {}, Warnings* warnings = nullptr);

/// Minimum normalized coupling per coupling type over the event's member pairs.
/// Members unknown to the model couple at 0 and force a High code.
FeatureVector extract_feature(const Event& event, const RiskModel& model, FeatureFlavor flavor,
                              Warnings* warnings = nullptr);

struct AverageRisk {
  double value = 1.0;
  RiskLevel level = RiskLevel::Low;
};

/// Mean risk code over all features (absent ones count as Low); cuts at 1.5 and 2.5.
/// Throws Error(NoPresentFeatures) when the vector has no present feature.
AverageRisk average_event_risk(const FeatureVector& vector);

std::vector<FeatureVector> featurize_dataset(const EventIndex& index,
                                             std::span<const EventId> samples,
                                             const RiskModel& model, FeatureFlavor flavor,
                                             Warnings* warnings = nullptr);

/// CSV: sample_id, flavor, one value column per feature, one risk column per feature
/// (0 marks an absent feature), average_risk.
void write_features_csv(std::ostream& out, std::span<const FeatureVector> vectors,
                        const std::vector<std::string>& names);
std::vector<FeatureVector> read_features_csv(std::istream& in);

/// Values as plain rows for the clustering and tree code.
std::vector<std::vector<double>> feature_rows(std::span<const FeatureVector> vectors);

}  // namespace ctxrisk
