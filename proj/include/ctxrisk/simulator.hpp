#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ctxrisk/action_log.hpp"
#include "ctxrisk/error.hpp"

namespace ctxrisk {

enum class LocationRole { Consultation, Ward, Hallway, Room };

std::string_view to_string(LocationRole role);
LocationRole location_role_from_string(std::string_view text);

struct LocationSpec {
  std::string id;
  LocationRole role = LocationRole::Room;
};

enum class AnomalyType { CrossPatientRead, HallwayRead, UnfamiliarRoomEntry };

std::string_view to_string(AnomalyType type);
AnomalyType anomaly_type_from_string(std::string_view text);

struct AnomalySpec {
  AnomalyType type = AnomalyType::CrossPatientRead;
  std::size_t count = 0;
  std::int64_t window_start = 0;  // simulated seconds
  std::int64_t window_end = -1;   // -1: end of the run
};

/// Activity mix of the on-duty physician. Each row sums to 1.
struct ActivityMix {
  double consult = 0.0;
  double charting = 0.0;
  double rounds = 0.0;
  double idle = 1.0;
};

struct ScheduleConfig {
  int first_shift_hour = 7;
  int shift_hours = 12;
  std::int64_t handover_s = 900;
  int rotation_days = 7;  // day and night physicians swap after this many days
  int day_start_hour = 7;
  int day_end_hour = 22;
  ActivityMix day{0.45, 0.25, 0.15, 0.15};
  ActivityMix night{0.0, 0.0, 0.3, 0.7};
  double consult_mean_s = 900;
  double rounds_mean_s = 1200;
  double idle_mean_s = 600;
  double hallway_transit_mean_s = 45;  // 0 disables hallway transit
  double room_visits_per_day = 1.0;    // per patient, daytime only
  double room_visit_mean_s = 1800;
  std::vector<double> patient_weights;  // consult selection; empty = uniform
};

struct ReadingConfig {
  double consult_reads_mean = 1.5;
  double charting_reads_mean = 2.0;
  std::int64_t read_dwell_min_s = 30;
  std::int64_t read_dwell_max_s = 280;  // stays below the 300 s document dwell
};

struct ScenarioConfig {
  std::uint64_t seed = 7;
  std::int64_t duration_s = 30 * 86400;
  std::string start = "2021-06-01T00:00:00Z";
  std::size_t physicians = 2;
  std::size_t patients = 6;
  std::size_t devices = 1;
  std::size_t documents = 6;  // document i is owned by patient i; extras are unowned
  std::vector<LocationSpec> locations;
  ScheduleConfig schedule;
  ReadingConfig reading;
  std::vector<AnomalySpec> anomalies;

  /// Reference population: 2 physicians, 6 patients, 1 device, 6 documents,
  /// 7 locations (consultation loc1, ward loc4, hallway loc7, rooms loc2/3/5/6),
  /// 30 days, 5 cross-patient reads and 5 hallway reads.
  static ScenarioConfig default_scenario();

  /// Throws InvalidConfig.
  void validate() const;
};

ScenarioConfig scenario_from_json(const std::string& text);
std::string scenario_to_json(const ScenarioConfig& config);
ScenarioConfig load_scenario(const std::filesystem::path& path);

struct Annotation {
  std::size_t record_index = 0;
  AnomalyType type = AnomalyType::CrossPatientRead;
  std::string detail;
};

struct SimulationResult {
  ActionLog log;
  std::vector<Annotation> annotations;  // ascending record index
  /// Document id -> owning patient id (unowned documents are absent).
  std::vector<std::pair<std::string, std::string>> ownership;
  std::vector<std::string> physician_ids;
  std::vector<std::string> patient_ids;
  Warnings warnings;
};

SimulationResult generate(const ScenarioConfig& config);

/// Two runs of the same population: the first as configured, the second with seed+1
/// and schedule parameters scaled by factors drawn from [1 - p, 1 + p].
std::pair<SimulationResult, SimulationResult> make_pair(const ScenarioConfig& config,
                                                        double perturbation = 0.2);

ScenarioConfig perturb(const ScenarioConfig& config, double perturbation, std::uint64_t seed);

/// JSON Lines: {"record", "type", "time", "detail"}.
void write_annotations(std::ostream& out, const SimulationResult& sim);
std::vector<Annotation> read_annotations(std::istream& in);

}  // namespace ctxrisk
