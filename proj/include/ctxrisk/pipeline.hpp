#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctxrisk/action_log.hpp"
#include "ctxrisk/clustering.hpp"
#include "ctxrisk/coupling.hpp"
#include "ctxrisk/event_engine.hpp"
#include "ctxrisk/policy.hpp"
#include "ctxrisk/risk_features.hpp"
#include "ctxrisk/supervised.hpp"

namespace ctxrisk {

enum class LabelMode { Decision, Level };

std::string_view to_string(LabelMode mode);
LabelMode label_mode_from_string(std::string_view text);

struct PipelineConfig {
  // Paths are resolved by the CLI; the library never touches them.
  std::string log_path;
  std::string fixtures_path;
  std::string output_path = "out";

  DwellConfig dwell;
  CouplingOptions coupling;
  RiskBinningConfig binning;
  FeatureConfig features;
  SampleSelector samples = SampleSelector::AllEvents;
  FeatureFlavor rasa_flavor = FeatureFlavor::Combined;
  ClusteringConfig clustering;
  PolicyWeights weights;
  double traffic_alpha = 1.0;
  TrafficDirection traffic_direction = TrafficDirection::Crowding;
  bool tune_theta = true;
  std::vector<double> theta_grid;  // empty: default grid
  TreeConfig tree{0, 1};
  FeatureFlavor tree_flavor = FeatureFlavor::Combined;
  LabelMode labels = LabelMode::Decision;

  void validate() const;
};

std::string pipeline_config_to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const std::string& text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

inline constexpr std::array<FeatureFlavor, 3> kAllFeatureFlavors = {
    FeatureFlavor::Frequency, FeatureFlavor::Duration, FeatureFlavor::Combined};

/// Clustering, labelling and per-read decisions for one feature flavor.
struct FlavorRun {
  FeatureFlavor flavor = FeatureFlavor::Frequency;
  std::vector<FeatureVector> vectors;  // aligned with PipelineResult::samples
  DbscanResult dbscan;
  std::vector<ClusterRiskSummary> summaries;
  std::vector<Decision> decisions;  // per sample
  ClusterAssignment agglomerative;
  std::vector<ClusterRiskSummary> agglomerative_summaries;
  GmmResult gmm;
  std::vector<ClusterRiskSummary> gmm_summaries;
  DatasetRisk risk;
  std::vector<Decision> read_decisions;  // per read, aligned with EventIndex::reads()
  std::vector<ClusterLevel> read_levels;
  ConsistencyTable consistency;
};

struct PipelineResult {
  EventIndex index;
  std::vector<EventId> samples;
  std::map<EventId, std::size_t> sample_position;
  RiskModel model;
  PolicyModel policy;
  std::vector<PolicyRiskBreakdown> policy_reads;  // per read, final theta applied
  ThresholdChoice theta;
  std::vector<FlavorRun> runs;  // in kAllFeatureFlavors order
  Warnings warnings;

  const FlavorRun& run(FeatureFlavor flavor) const;
};

/// Events, couplings, features for all flavors, clustering, labels, policy scores,
/// theta tuning and consistency tables.
PipelineResult run_pipeline(const ActionLog& log, const PipelineConfig& cfg);

/// Labels for the supervised stage: binary decisions (Escalate counts as Deny) or
/// the seven-level ladder of each sample's cluster ("Outlier" for DBSCAN noise).
std::vector<std::string> training_labels(const FlavorRun& run, LabelMode mode);

/// Features of another dataset computed with this result's model, labelled by the
/// other dataset's own pipeline run.
struct CrossDataset {
  std::vector<Point> train_x;
  std::vector<std::string> train_y;
  std::vector<Point> test_x;
  std::vector<std::string> test_y;
};

CrossDataset cross_dataset(const PipelineResult& train, const PipelineResult& test,
                           const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Trained model artifact and the live decision service.

struct TrainedModel {
  PipelineConfig config;
  RiskModel risk;
  PolicyModel policy;
  DbscanModel dbscan;
  std::map<int, ClusterLevel> cluster_levels;
};

TrainedModel make_trained_model(const PipelineResult& result, const PipelineConfig& cfg);
std::string trained_model_to_json(const TrainedModel& model);
TrainedModel trained_model_from_json(const std::string& text);
void save_trained_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_trained_model(const std::filesystem::path& path);

/// JSON form of a coupling set (matrices, triple and document-time couplings).
std::string coupling_set_to_json(const CouplingSet& set);
CouplingSet coupling_set_from_json(const std::string& text);

struct RasaVerdict {
  Decision decision = Decision::Deny;
  int cluster = -1;
  std::optional<ClusterLevel> level;
  FeatureVector features;
  Warnings warnings;
};

/// RASA decision for an event through the fitted DBSCAN model.
RasaVerdict rasa_decide(const Event& event, const TrainedModel& model);

struct ServiceDecision {
  Decision decision = Decision::Deny;
  RasaVerdict rasa;
  PolicyRiskBreakdown policy;
};

/// Deny when either side denies, else Escalate when RASA escalates, else Permit.
Decision combine_decisions(Decision rasa, Decision policy);

ServiceDecision decide_read(const Event& event, const FactorId& device, const FactorId& document,
                            Timestamp time, const TrainedModel& model);

/// Line-oriented decision point. Each request line yields one response line:
///   action record (JSON Lines schema) -> applied to live state; reads are decided
///   {"query": {"device", "document", "location"?, "time"?}} -> hypothetical read
///   {"event": {"location", "members", "time"?}} -> read of the snapshot's document
/// Malformed requests produce {"error": ...} and leave state unchanged.
class DecisionService {
 public:
  explicit DecisionService(TrainedModel model);

  std::string handle(const std::string& line);
  /// Reads requests until EOF; returns the number of requests handled.
  std::size_t serve(std::istream& in, std::ostream& out);

  const TrainedModel& model() const { return model_; }

 private:
  std::string respond(const ServiceDecision& d) const;
  std::string fail_closed(const std::string& why) const;

  TrainedModel model_;
  EventBuilder builder_;
  std::size_t records_ = 0;
  std::optional<Timestamp> last_time_;
};

std::string decision_to_json(const ServiceDecision& d, double theta);

}  // namespace ctxrisk
