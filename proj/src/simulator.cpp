#include "ctxrisk/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ctxrisk {

std::string_view to_string(LocationRole role) {
  switch (role) {
    case LocationRole::Consultation: return "Consultation";
    case LocationRole::Ward: return "Ward";
    case LocationRole::Hallway: return "Hallway";
    case LocationRole::Room: return "Room";
  }
  return "Room";
}

LocationRole location_role_from_string(std::string_view text) {
  if (text == "Consultation") return LocationRole::Consultation;
  if (text == "Ward") return LocationRole::Ward;
  if (text == "Hallway") return LocationRole::Hallway;
  if (text == "Room") return LocationRole::Room;
  throw Error(ErrorCode::InvalidConfig, "unknown location role: " + std::string(text));
}

std::string_view to_string(AnomalyType type) {
  switch (type) {
    case AnomalyType::CrossPatientRead: return "CrossPatientRead";
    case AnomalyType::HallwayRead: return "HallwayRead";
    case AnomalyType::UnfamiliarRoomEntry: return "UnfamiliarRoomEntry";
  }
  return "CrossPatientRead";
}

AnomalyType anomaly_type_from_string(std::string_view text) {
  if (text == "CrossPatientRead") return AnomalyType::CrossPatientRead;
  if (text == "HallwayRead") return AnomalyType::HallwayRead;
  if (text == "UnfamiliarRoomEntry") return AnomalyType::UnfamiliarRoomEntry;
  throw Error(ErrorCode::InvalidConfig, "unknown anomaly type: " + std::string(text));
}

ScenarioConfig ScenarioConfig::default_scenario() {
  ScenarioConfig c;
  c.locations = {{"loc1", LocationRole::Consultation}, {"loc2", LocationRole::Room},
                 {"loc3", LocationRole::Room},         {"loc4", LocationRole::Ward},
                 {"loc5", LocationRole::Room},         {"loc6", LocationRole::Room},
                 {"loc7", LocationRole::Hallway}};
  c.anomalies = {{AnomalyType::CrossPatientRead, 5, 0, -1},
                 {AnomalyType::HallwayRead, 5, 0, -1}};
  return c;
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidConfig, what);
}

void validate_mix(const ActivityMix& m, const std::string& name) {
  for (double p : {m.consult, m.charting, m.rounds, m.idle}) {
    require(std::isfinite(p) && p >= 0.0, name + " probabilities must be >= 0");
  }
  require(std::abs(m.consult + m.charting + m.rounds + m.idle - 1.0) < 1e-9,
          name + " probabilities must sum to 1");
}

std::size_t count_role(const ScenarioConfig& c, LocationRole role) {
  return static_cast<std::size_t>(std::count_if(c.locations.begin(), c.locations.end(),
                                                [&](const LocationSpec& l) { return l.role == role; }));
}

}  // namespace

void ScenarioConfig::validate() const {
  require(duration_s >= 0, "duration_s must be >= 0");
  parse_timestamp(start);
  std::set<std::string> ids;
  for (const auto& l : locations) {
    require(!l.id.empty(), "location id must be non-empty");
    require(ids.insert(l.id).second, "duplicate location id " + l.id);
  }
  if (physicians + patients > 0) {
    require(count_role(*this, LocationRole::Consultation) >= 1, "need a consultation room");
    require(count_role(*this, LocationRole::Ward) >= 1, "need a ward");
  }
  require(physicians == 0 || devices >= 1, "physicians need at least one device");

  const auto& s = schedule;
  require(s.shift_hours >= 1 && s.shift_hours <= 24 && 24 % s.shift_hours == 0,
          "shift_hours must divide 24");
  require(s.first_shift_hour >= 0 && s.first_shift_hour < 24, "first_shift_hour out of range");
  require(s.handover_s >= 0 && s.handover_s < s.shift_hours * 3600 / 2, "handover_s out of range");
  require(s.rotation_days >= 1, "rotation_days must be >= 1");
  require(s.day_start_hour >= 0 && s.day_start_hour < s.day_end_hour && s.day_end_hour <= 24,
          "day hours out of range");
  validate_mix(s.day, "day");
  validate_mix(s.night, "night");
  for (double m : {s.consult_mean_s, s.rounds_mean_s, s.idle_mean_s, s.room_visit_mean_s}) {
    require(std::isfinite(m) && m > 0.0, "schedule means must be > 0");
  }
  require(s.hallway_transit_mean_s >= 0.0, "hallway_transit_mean_s must be >= 0");
  require(s.room_visits_per_day >= 0.0, "room_visits_per_day must be >= 0");
  if (!s.patient_weights.empty()) {
    require(s.patient_weights.size() == patients, "patient_weights needs one entry per patient");
    double total = 0.0;
    for (double w : s.patient_weights) {
      require(std::isfinite(w) && w >= 0.0, "patient_weights must be >= 0");
      total += w;
    }
    require(total > 0.0, "patient_weights must not all be zero");
  }

  require(reading.consult_reads_mean >= 1.0 && reading.charting_reads_mean >= 1.0,
          "read means must be >= 1");
  require(reading.read_dwell_min_s >= 1 && reading.read_dwell_min_s <= reading.read_dwell_max_s,
          "read dwell range invalid");

  for (const auto& a : anomalies) {
    const std::int64_t end = a.window_end < 0 ? duration_s : a.window_end;
    require(a.window_start >= 0 && a.window_start <= end && end <= duration_s,
            "anomaly window out of range");
    if (a.count == 0) continue;
    switch (a.type) {
      case AnomalyType::CrossPatientRead:
        require(physicians >= 1 && std::min(patients, documents) >= 2,
                "CrossPatientRead needs a physician and two patients with documents");
        break;
      case AnomalyType::HallwayRead:
        require(physicians >= 1 && documents >= 1 && count_role(*this, LocationRole::Hallway) >= 1,
                "HallwayRead needs a physician, a document and a hallway");
        break;
      case AnomalyType::UnfamiliarRoomEntry:
        require(patients >= 1 && count_role(*this, LocationRole::Room) >= 2,
                "UnfamiliarRoomEntry needs a patient and two rooms");
        break;
    }
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

ojson mix_to_json(const ActivityMix& m) {
  return {{"consult", m.consult}, {"charting", m.charting}, {"rounds", m.rounds}, {"idle", m.idle}};
}

ActivityMix mix_from_json(const json& j, ActivityMix m) {
  m.consult = j.value("consult", m.consult);
  m.charting = j.value("charting", m.charting);
  m.rounds = j.value("rounds", m.rounds);
  m.idle = j.value("idle", m.idle);
  return m;
}

}  // namespace

std::string scenario_to_json(const ScenarioConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["duration_s"] = c.duration_s;
  j["start"] = c.start;
  j["population"] = {{"physicians", c.physicians},
                     {"patients", c.patients},
                     {"devices", c.devices},
                     {"documents", c.documents}};
  auto locs = ojson::array();
  for (const auto& l : c.locations) locs.push_back({{"id", l.id}, {"role", to_string(l.role)}});
  j["locations"] = locs;
  const auto& s = c.schedule;
  j["schedule"] = {{"first_shift_hour", s.first_shift_hour},
                   {"shift_hours", s.shift_hours},
                   {"handover_s", s.handover_s},
                   {"rotation_days", s.rotation_days},
                   {"day_start_hour", s.day_start_hour},
                   {"day_end_hour", s.day_end_hour},
                   {"day", mix_to_json(s.day)},
                   {"night", mix_to_json(s.night)},
                   {"consult_mean_s", s.consult_mean_s},
                   {"rounds_mean_s", s.rounds_mean_s},
                   {"idle_mean_s", s.idle_mean_s},
                   {"hallway_transit_mean_s", s.hallway_transit_mean_s},
                   {"room_visits_per_day", s.room_visits_per_day},
                   {"room_visit_mean_s", s.room_visit_mean_s},
                   {"patient_weights", s.patient_weights}};
  const auto& r = c.reading;
  j["reading"] = {{"consult_reads_mean", r.consult_reads_mean},
                  {"charting_reads_mean", r.charting_reads_mean},
                  {"read_dwell_min_s", r.read_dwell_min_s},
                  {"read_dwell_max_s", r.read_dwell_max_s}};
  auto an = ojson::array();
  for (const auto& a : c.anomalies) {
    an.push_back({{"type", to_string(a.type)},
                  {"count", a.count},
                  {"window_start", a.window_start},
                  {"window_end", a.window_end}});
  }
  j["anomalies"] = an;
  return j.dump(2) + "\n";
}

ScenarioConfig scenario_from_json(const std::string& text) {
  ScenarioConfig c = ScenarioConfig::default_scenario();
  try {
    const json j = json::parse(text);
    c.seed = j.value("seed", c.seed);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.start = j.value("start", c.start);
    if (j.contains("population")) {
      const auto& p = j["population"];
      c.physicians = p.value("physicians", c.physicians);
      c.patients = p.value("patients", c.patients);
      c.devices = p.value("devices", c.devices);
      c.documents = p.value("documents", c.documents);
    }
    if (j.contains("locations")) {
      c.locations.clear();
      for (const auto& l : j["locations"]) {
        c.locations.push_back({l.at("id").get<std::string>(),
                               location_role_from_string(l.at("role").get<std::string>())});
      }
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      auto& o = c.schedule;
      o.first_shift_hour = s.value("first_shift_hour", o.first_shift_hour);
      o.shift_hours = s.value("shift_hours", o.shift_hours);
      o.handover_s = s.value("handover_s", o.handover_s);
      o.rotation_days = s.value("rotation_days", o.rotation_days);
      o.day_start_hour = s.value("day_start_hour", o.day_start_hour);
      o.day_end_hour = s.value("day_end_hour", o.day_end_hour);
      if (s.contains("day")) o.day = mix_from_json(s["day"], o.day);
      if (s.contains("night")) o.night = mix_from_json(s["night"], o.night);
      o.consult_mean_s = s.value("consult_mean_s", o.consult_mean_s);
      o.rounds_mean_s = s.value("rounds_mean_s", o.rounds_mean_s);
      o.idle_mean_s = s.value("idle_mean_s", o.idle_mean_s);
      o.hallway_transit_mean_s = s.value("hallway_transit_mean_s", o.hallway_transit_mean_s);
      o.room_visits_per_day = s.value("room_visits_per_day", o.room_visits_per_day);
      o.room_visit_mean_s = s.value("room_visit_mean_s", o.room_visit_mean_s);
      o.patient_weights = s.value("patient_weights", o.patient_weights);
    }
    if (j.contains("reading")) {
      const auto& r = j["reading"];
      auto& o = c.reading;
      o.consult_reads_mean = r.value("consult_reads_mean", o.consult_reads_mean);
      o.charting_reads_mean = r.value("charting_reads_mean", o.charting_reads_mean);
      o.read_dwell_min_s = r.value("read_dwell_min_s", o.read_dwell_min_s);
      o.read_dwell_max_s = r.value("read_dwell_max_s", o.read_dwell_max_s);
    }
    if (j.contains("anomalies")) {
      c.anomalies.clear();
      for (const auto& a : j["anomalies"]) {
        AnomalySpec s;
        s.type = anomaly_type_from_string(a.at("type").get<std::string>());
        s.count = a.value("count", s.count);
        s.window_start = a.value("window_start", s.window_start);
        s.window_end = a.value("window_end", s.window_end);
        c.anomalies.push_back(s);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("scenario: ") + e.what());
  }
  c.validate();
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Generation

namespace {

constexpr std::int64_t kDay = 86400;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double u01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double exponential(double mean) { return -mean * std::log1p(-u01()); }

  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    auto v = lo + static_cast<std::int64_t>(u01() * static_cast<double>(hi - lo + 1));
    return std::min(v, hi);
  }
  std::size_t pick(std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(u01() * n)); }

  std::size_t weighted(const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = u01() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (u < w[i]) return i;
      u -= w[i];
    }
    for (std::size_t i = w.size(); i-- > 0;) {
      if (w[i] > 0) return i;
    }
    return 0;
  }

  /// Duration with the given mean, clamped to [mean/4, 3*mean] and at least `floor`.
  std::int64_t duration(double mean, std::int64_t floor = 1) {
    double d = std::clamp(exponential(mean), mean / 4.0, 3.0 * mean);
    return std::max<std::int64_t>(floor, std::llround(d));
  }

  /// Count >= 1 with the given mean (geometric), capped at 6.
  std::size_t count(double mean) {
    std::size_t n = 1;
    const double q = 1.0 - 1.0 / mean;
    while (n < 6 && u01() < q) ++n;
    return n;
  }

 private:
  std::mt19937_64 eng_;
};

struct Interval {
  std::int64_t begin;
  std::int64_t end;
};

bool overlaps(const std::vector<Interval>& busy, std::int64_t b, std::int64_t e) {
  return std::any_of(busy.begin(), busy.end(),
                     [&](const Interval& i) { return i.begin <= e && b <= i.end; });
}

struct Emitted {
  std::int64_t t;
  std::size_t seq;
  ActionRecord record;
  std::optional<Annotation> tag;
};

class Simulation {
 public:
  explicit Simulation(const ScenarioConfig& cfg)
      : cfg_(cfg), sched_(cfg.schedule), read_(cfg.reading), rng_(cfg.seed),
        t0_(parse_timestamp(cfg.start)) {
    for (std::size_t i = 0; i < cfg.physicians; ++i) physicians_.push_back(person(i));
    for (std::size_t i = 0; i < cfg.patients; ++i) patients_.push_back(person(cfg.physicians + i));
    for (std::size_t i = 0; i < cfg.devices; ++i) devices_.push_back({FactorKind::Device, "dev" + std::to_string(i + 1)});
    for (std::size_t i = 0; i < cfg.documents; ++i) docs_.push_back({FactorKind::Document, "doc" + std::to_string(i + 1)});
    for (const auto& l : cfg.locations) {
      FactorId f{FactorKind::Location, l.id};
      switch (l.role) {
        case LocationRole::Consultation: consult_rooms_.push_back(f); break;
        case LocationRole::Ward: wards_.push_back(f); break;
        case LocationRole::Hallway: hallways_.push_back(f); break;
        case LocationRole::Room: rooms_.push_back(f); break;
      }
    }
    busy_.resize(patients_.size());
  }

  SimulationResult run() {
    SimulationResult res;
    for (const auto& p : physicians_) res.physician_ids.push_back(p.id);
    for (const auto& p : patients_) res.patient_ids.push_back(p.id);
    for (std::size_t i = 0; i < std::min(patients_.size(), docs_.size()); ++i) {
      res.ownership.emplace_back(docs_[i].id, patients_[i].id);
    }
    if (physicians_.size() + patients_.size() < 2) {
      res.warnings.push_back({WarningCode::SmallPopulation,
                              "fewer than two people: coupling distributions are unreliable"});
    }
    if (cfg_.duration_s == 0) return res;

    plan_anomaly_times();
    for (const auto& d : devices_) emit(0, enter(d, base()));
    for (std::size_t i = 0; i < patients_.size(); ++i) emit(0, enter(patients_[i], home(i)));
    plan_unfamiliar_entries();
    plan_room_visits();
    run_shifts();

    std::stable_sort(out_.begin(), out_.end(), [](const Emitted& a, const Emitted& b) {
      return a.t != b.t ? a.t < b.t : a.seq < b.seq;
    });
    for (std::size_t i = 0; i < out_.size(); ++i) {
      res.log.records.push_back(out_[i].record);
      if (out_[i].tag) {
        Annotation a = *out_[i].tag;
        a.record_index = i;
        res.annotations.push_back(std::move(a));
      }
    }
    return res;
  }

 private:
  static FactorId person(std::size_t i) { return {FactorKind::Person, "ppl" + std::to_string(i + 1)}; }

  const FactorId& base() const { return consult_rooms_.front(); }
  const FactorId& home(std::size_t patient) const { return wards_[patient % wards_.size()]; }
  std::optional<FactorId> own_room(std::size_t patient) const {
    if (rooms_.empty()) return std::nullopt;
    return rooms_[patient % rooms_.size()];
  }
  std::optional<FactorId> owned_doc(std::size_t patient) const {
    if (patient < docs_.size()) return docs_[patient];
    return std::nullopt;
  }

  ActionRecord enter(const FactorId& who, const FactorId& where) const {
    ActionRecord r;
    r.act = ActionKind::Enter;
    r.agent = who;
    r.location = where;
    return r;
  }
  ActionRecord exit(const FactorId& who, const FactorId& where) const {
    auto r = enter(who, where);
    r.act = ActionKind::Exit;
    return r;
  }
  ActionRecord doc_action(ActionKind act, const FactorId& dev, const FactorId& doc) const {
    ActionRecord r;
    r.act = act;
    r.device = dev;
    r.document = doc;
    return r;
  }

  void emit(std::int64_t t, ActionRecord r, std::optional<Annotation> tag = std::nullopt) {
    r.time = t0_ + Seconds(t);
    out_.push_back({t, seq_++, std::move(r), std::move(tag)});
  }

  std::int64_t transit_time() {
    if (hallways_.empty() || sched_.hallway_transit_mean_s <= 0.0) return 0;
    return rng_.duration(sched_.hallway_transit_mean_s, 5);
  }

  /// Moves a group between two locations, through the hallway when transit > 0.
  void move(std::int64_t t, const std::vector<FactorId>& who, const FactorId& from,
            const FactorId& to, std::int64_t transit, std::optional<Annotation> tag = std::nullopt) {
    for (const auto& w : who) emit(t, exit(w, from));
    if (transit > 0) {
      for (const auto& w : who) emit(t, enter(w, hallways_.front()));
      for (const auto& w : who) emit(t + transit, exit(w, hallways_.front()));
    }
    bool first = true;
    for (const auto& w : who) {
      emit(t + transit, enter(w, to), first ? tag : std::nullopt);
      first = false;
    }
  }

  bool is_day(std::int64_t t) const {
    const std::int64_t h = ((t % kDay) + kDay) % kDay / 3600;
    return h >= sched_.day_start_hour && h < sched_.day_end_hour;
  }

  void plan_anomaly_times() {
    for (const auto& a : cfg_.anomalies) {
      const std::int64_t end = a.window_end < 0 ? cfg_.duration_s : a.window_end;
      for (std::size_t i = 0; i < a.count; ++i) {
        std::int64_t t = a.window_start + static_cast<std::int64_t>(rng_.u01() * static_cast<double>(end - a.window_start));
        if (a.type == AnomalyType::UnfamiliarRoomEntry) {
          room_anomalies_.push_back(t);
        } else {
          physician_anomalies_.emplace(t, a.type);
        }
      }
    }
    std::sort(room_anomalies_.begin(), room_anomalies_.end());
  }

  struct RoomVisit {
    std::size_t patient;
    FactorId room;
    std::int64_t leave, arrive, depart, back;
    std::int64_t transit_out, transit_in;
  };

  RoomVisit plan_visit(std::size_t patient, const FactorId& room, std::int64_t t) {
    RoomVisit v{patient, room, t, 0, 0, 0, transit_time(), transit_time()};
    v.arrive = t + v.transit_out;
    v.depart = v.arrive + rng_.duration(sched_.room_visit_mean_s, 60);
    v.back = v.depart + v.transit_in;
    return v;
  }

  void emit_visit(const RoomVisit& v, std::optional<Annotation> tag = std::nullopt) {
    const auto& p = patients_[v.patient];
    move(v.leave, {p}, home(v.patient), v.room, v.transit_out, std::move(tag));
    move(v.depart, {p}, v.room, home(v.patient), v.transit_in);
    busy_[v.patient].push_back({v.leave, v.back});
  }

  void plan_unfamiliar_entries() {
    for (std::int64_t t : room_anomalies_) {
      for (int attempt = 0; attempt < 64; ++attempt, t += 600) {
        const std::size_t p = rng_.pick(patients_.size());
        std::vector<FactorId> others;
        for (const auto& r : rooms_) {
          if (r != own_room(p)) others.push_back(r);
        }
        auto v = plan_visit(p, others[rng_.pick(others.size())], t);
        if (v.back >= cfg_.duration_s || overlaps(busy_[p], v.leave, v.back)) continue;
        emit_visit(v, Annotation{0, AnomalyType::UnfamiliarRoomEntry,
                                 patients_[p].id + " entered " + v.room.id});
        break;
      }
    }
  }

  void plan_room_visits() {
    if (rooms_.empty() || sched_.room_visits_per_day <= 0.0) return;
    const std::int64_t window = (sched_.day_end_hour - sched_.day_start_hour) * 3600;
    const double gap = static_cast<double>(window) / sched_.room_visits_per_day;
    for (std::size_t p = 0; p < patients_.size(); ++p) {
      for (std::int64_t day = 0; day * kDay < cfg_.duration_s; ++day) {
        const std::int64_t ws = day * kDay + sched_.day_start_hour * 3600;
        const std::int64_t we = std::min(day * kDay + sched_.day_end_hour * 3600, cfg_.duration_s);
        std::int64_t t = ws + std::llround(rng_.exponential(gap));
        while (t < we) {
          auto v = plan_visit(p, *own_room(p), t);
          if (v.back >= we) break;
          if (!overlaps(busy_[p], v.leave, v.back)) emit_visit(v);
          t = v.back + 1 + std::llround(rng_.exponential(gap));
        }
      }
    }
  }

  std::vector<std::size_t> free_patients(std::int64_t b, std::int64_t e, bool need_doc) const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < patients_.size(); ++p) {
      if (need_doc && !owned_doc(p)) continue;
      if (!overlaps(busy_[p], b, e)) out.push_back(p);
    }
    return out;
  }

  // Physician timeline -------------------------------------------------------

  void run_shifts() {
    if (physicians_.empty()) return;
    const std::int64_t len = sched_.shift_hours * 3600;
    const std::int64_t per_rotation = (24 / sched_.shift_hours) * sched_.rotation_days;
    std::int64_t start = sched_.first_shift_hour * 3600;
    while (start > 0) start -= len;
    std::optional<std::size_t> prev;
    for (std::int64_t idx = 0; start < cfg_.duration_s; ++idx, start += len) {
      const std::size_t swap = static_cast<std::size_t>((idx / per_rotation) % 2);
      const std::size_t who = (static_cast<std::size_t>(idx) + swap) % physicians_.size();
      const FactorId& p = physicians_[who];
      const FactorId& dev = devices_[static_cast<std::size_t>(idx) % devices_.size()];
      const std::int64_t s = std::max<std::int64_t>(0, start);
      const std::int64_t e = std::min(cfg_.duration_s, start + len);
      if (!prev) {
        emit(s, enter(p, base()));
      } else if (*prev != who) {
        emit(std::max<std::int64_t>(0, s - sched_.handover_s), enter(p, base()));
        emit(s, exit(physicians_[*prev], base()));
      }
      prev = who;
      const std::int64_t work_end = e < cfg_.duration_s ? e - sched_.handover_s : e;
      work(p, dev, s, work_end);
    }
  }

  void work(const FactorId& p, const FactorId& dev, std::int64_t t, std::int64_t work_end) {
    while (t < work_end) {
      if (!physician_anomalies_.empty() && physician_anomalies_.begin()->first <= t) {
        const AnomalyType type = physician_anomalies_.begin()->second;
        std::optional<std::int64_t> done =
            type == AnomalyType::CrossPatientRead ? consult(p, dev, t, work_end, true)
                                                  : hallway_read(p, dev, t, work_end);
        if (done) {
          physician_anomalies_.erase(physician_anomalies_.begin());
          t = *done;
          continue;
        }
      }
      const ActivityMix& mix = is_day(t) ? sched_.day : sched_.night;
      const std::size_t choice = rng_.weighted({mix.consult, mix.charting, mix.rounds, mix.idle});
      std::optional<std::int64_t> next;
      if (choice == 0) next = consult(p, dev, t, work_end, false);
      if (choice == 1 || (choice == 0 && !next)) next = charting(dev, t, work_end);
      if (choice == 2) next = rounds(p, dev, t, work_end);
      t = next ? *next : std::min(work_end, t + rng_.duration(sched_.idle_mean_s, 60));
    }
  }

  /// Back-to-back read/release spans after `cursor`; returns the last release time.
  std::int64_t read_spans(std::size_t n, std::int64_t cursor,
                          std::vector<std::pair<std::int64_t, std::int64_t>>& spans) {
    for (std::size_t i = 0; i < n; ++i) {
      cursor += rng_.range(20, 90);
      const std::int64_t release = cursor + rng_.range(read_.read_dwell_min_s, read_.read_dwell_max_s);
      spans.emplace_back(cursor, release);
      cursor = release;
    }
    return cursor;
  }

  std::optional<std::int64_t> consult(const FactorId& p, const FactorId& dev, std::int64_t t,
                                      std::int64_t work_end, bool anomalous) {
    const std::int64_t out_transit = transit_time();
    const std::int64_t back_transit = transit_time();
    const std::int64_t length = rng_.duration(sched_.consult_mean_s, 120);
    const std::size_t reads = anomalous ? 1 : rng_.count(read_.consult_reads_mean);
    const std::int64_t arrive = t + out_transit;
    std::vector<std::pair<std::int64_t, std::int64_t>> spans;
    const std::int64_t last = read_spans(reads, arrive, spans);
    const std::int64_t leave = std::max(arrive + length, last + rng_.range(10, 60));
    const std::int64_t back = leave + back_transit;
    if (leave >= work_end || back >= cfg_.duration_s) return std::nullopt;

    auto candidates = free_patients(t, back, true);
    if (candidates.empty()) return std::nullopt;
    std::size_t pat;
    if (sched_.patient_weights.empty()) {
      pat = candidates[rng_.pick(candidates.size())];
    } else {
      std::vector<double> w;
      for (auto c : candidates) w.push_back(sched_.patient_weights[c]);
      pat = candidates[rng_.weighted(w)];
    }
    FactorId doc = *owned_doc(pat);
    std::optional<Annotation> tag;
    if (anomalous) {
      std::vector<std::size_t> others;
      for (std::size_t q = 0; q < patients_.size(); ++q) {
        if (q != pat && owned_doc(q)) others.push_back(q);
      }
      const std::size_t owner = others[rng_.pick(others.size())];
      doc = *owned_doc(owner);
      tag = Annotation{0, AnomalyType::CrossPatientRead,
                       p.id + " read " + doc.id + " (owner " + patients_[owner].id + ") with " +
                           patients_[pat].id + " in " + base().id};
    }
    const FactorId& patient = patients_[pat];
    move(t, {patient}, home(pat), base(), out_transit);
    for (const auto& [r, rel] : spans) {
      emit(r, doc_action(ActionKind::Read, dev, doc), tag);
      emit(rel, doc_action(ActionKind::Release, dev, doc));
    }
    move(leave, {patient}, base(), home(pat), back_transit);
    busy_[pat].push_back({t, back});
    return leave + rng_.range(5, 60);
  }

  std::optional<std::int64_t> charting(const FactorId& dev, std::int64_t t, std::int64_t work_end) {
    if (docs_.empty()) return std::nullopt;
    const std::size_t n = rng_.count(read_.charting_reads_mean);
    std::vector<FactorId> docs;
    for (std::size_t i = 0; i < n; ++i) docs.push_back(docs_[rng_.pick(docs_.size())]);
    std::vector<std::pair<std::int64_t, std::int64_t>> spans;
    const std::int64_t end = read_spans(docs.size(), t, spans);
    if (end >= work_end) return std::nullopt;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      emit(spans[i].first, doc_action(ActionKind::Read, dev, docs[i]));
      emit(spans[i].second, doc_action(ActionKind::Release, dev, docs[i]));
    }
    return end + rng_.range(5, 60);
  }

  std::optional<std::int64_t> rounds(const FactorId& p, const FactorId& dev, std::int64_t t,
                                     std::int64_t work_end) {
    const FactorId ward = wards_[rng_.pick(wards_.size())];
    const std::int64_t out_transit = transit_time();
    const std::int64_t back_transit = transit_time();
    const std::int64_t leave = t + out_transit + rng_.duration(sched_.rounds_mean_s, 120);
    const std::int64_t back = leave + back_transit;
    if (back >= work_end) return std::nullopt;
    move(t, {p, dev}, base(), ward, out_transit);
    move(leave, {p, dev}, ward, base(), back_transit);
    return back + rng_.range(5, 60);
  }

  std::optional<std::int64_t> hallway_read(const FactorId& p, const FactorId& dev, std::int64_t t,
                                           std::int64_t work_end) {
    const FactorId& hall = hallways_.front();
    const FactorId doc = docs_[rng_.pick(docs_.size())];
    const std::int64_t read = t + rng_.range(10, 40);
    const std::int64_t release = read + rng_.range(read_.read_dwell_min_s, read_.read_dwell_max_s);
    const std::int64_t back = release + rng_.range(10, 60);
    if (back >= work_end) return std::nullopt;
    emit(t, exit(p, base()));
    emit(t, exit(dev, base()));
    emit(t, enter(p, hall));
    emit(t, enter(dev, hall));
    emit(read, doc_action(ActionKind::Read, dev, doc),
         Annotation{0, AnomalyType::HallwayRead, p.id + " read " + doc.id + " in " + hall.id});
    emit(release, doc_action(ActionKind::Release, dev, doc));
    emit(back, exit(p, hall));
    emit(back, exit(dev, hall));
    emit(back, enter(p, base()));
    emit(back, enter(dev, base()));
    return back + rng_.range(5, 60);
  }

  const ScenarioConfig& cfg_;
  const ScheduleConfig& sched_;
  const ReadingConfig& read_;
  Rng rng_;
  Timestamp t0_;
  std::vector<FactorId> physicians_, patients_, devices_, docs_;
  std::vector<FactorId> consult_rooms_, wards_, hallways_, rooms_;
  std::vector<std::vector<Interval>> busy_;
  std::multimap<std::int64_t, AnomalyType> physician_anomalies_;
  std::vector<std::int64_t> room_anomalies_;
  std::vector<Emitted> out_;
  std::size_t seq_ = 0;
};

}  // namespace

SimulationResult generate(const ScenarioConfig& config) {
  config.validate();
  return Simulation(config).run();
}

ScenarioConfig perturb(const ScenarioConfig& config, double perturbation, std::uint64_t seed) {
  if (!(perturbation >= 0.0 && perturbation < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "perturbation must be in [0, 1)");
  }
  ScenarioConfig c = config;
  c.seed = seed;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto scale = [&](double& v) { v *= 1.0 + perturbation * (2.0 * rng.u01() - 1.0); };
  auto& s = c.schedule;
  scale(s.consult_mean_s);
  scale(s.rounds_mean_s);
  scale(s.idle_mean_s);
  scale(s.room_visits_per_day);
  scale(s.room_visit_mean_s);
  scale(s.hallway_transit_mean_s);
  for (ActivityMix* m : {&s.day, &s.night}) {
    for (double* p : {&m->consult, &m->charting, &m->rounds, &m->idle}) scale(*p);
    const double total = m->consult + m->charting + m->rounds + m->idle;
    if (total > 0.0) {
      for (double* p : {&m->consult, &m->charting, &m->rounds, &m->idle}) *p /= total;
    }
  }
  if (s.patient_weights.empty()) s.patient_weights.assign(c.patients, 1.0);
  for (double& w : s.patient_weights) scale(w);
  scale(c.reading.consult_reads_mean);
  scale(c.reading.charting_reads_mean);
  c.reading.consult_reads_mean = std::max(1.0, c.reading.consult_reads_mean);
  c.reading.charting_reads_mean = std::max(1.0, c.reading.charting_reads_mean);
  return c;
}

std::pair<SimulationResult, SimulationResult> make_pair(const ScenarioConfig& config,
                                                        double perturbation) {
  config.validate();
  auto second = perturb(config, perturbation, config.seed + 1);
  second.validate();
  return {generate(config), generate(second)};
}

void write_annotations(std::ostream& out, const SimulationResult& sim) {
  for (const auto& a : sim.annotations) {
    ojson j;
    j["record"] = a.record_index;
    j["type"] = to_string(a.type);
    j["time"] = format_timestamp(sim.log.records.at(a.record_index).time);
    j["detail"] = a.detail;
    out << j.dump() << '\n';
  }
}

std::vector<Annotation> read_annotations(std::istream& in) {
  std::vector<Annotation> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      out.push_back({j.at("record").get<std::size_t>(),
                     anomaly_type_from_string(j.at("type").get<std::string>()),
                     j.value("detail", std::string())});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedLine, e.what(), n);
    }
  }
  return out;
}

}  // namespace ctxrisk
