#include "ctxrisk/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "ctxrisk/csv.hpp"

namespace ctxrisk {

void PolicyWeights::validate() const {
  for (double w : {w_devloc, w_traffic, w_coexist, w_docloc, w_doctime, w_dev, w_env, w_act}) {
    if (!(w >= 0.0)) throw Error(ErrorCode::InvalidConfig, "policy weights must be >= 0");
  }
  if (std::abs(w_dev + w_env + w_act - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig, "overall policy weights must sum to 1");
  }
  if (!std::isfinite(permit_threshold)) {
    throw Error(ErrorCode::InvalidConfig, "permit_threshold must be finite");
  }
}

std::string_view to_string(TrafficDirection d) {
  return d == TrafficDirection::Crowding ? "Crowding" : "Rarity";
}

TrafficDirection traffic_direction_from_string(std::string_view text) {
  if (text == "Crowding" || text == "crowding") return TrafficDirection::Crowding;
  if (text == "Rarity" || text == "rarity") return TrafficDirection::Rarity;
  throw Error(ErrorCode::InvalidArgument, "unknown traffic direction: " + std::string(text));
}

RiskLevel TrafficModel::classify(std::size_t persons) const {
  const double x = static_cast<double>(persons);
  if (direction == TrafficDirection::Crowding) {
    if (x > mean + alpha * stdev) return RiskLevel::High;
    if (x > mean) return RiskLevel::Medium;
    return RiskLevel::Low;
  }
  if (x < mean - alpha * stdev) return RiskLevel::High;
  if (x < mean) return RiskLevel::Medium;
  return RiskLevel::Low;
}

TrafficModel fit_traffic(const EventIndex& index, double alpha, TrafficDirection direction) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidConfig, "traffic alpha must be > 0");
  TrafficModel m;
  m.alpha = alpha;
  m.direction = direction;
  const auto& events = index.events();
  if (events.empty()) return m;
  double sum = 0.0;
  for (const auto& ev : events) sum += static_cast<double>(ev.count(FactorKind::Person));
  m.mean = sum / static_cast<double>(events.size());
  double ss = 0.0;
  for (const auto& ev : events) {
    double d = static_cast<double>(ev.count(FactorKind::Person)) - m.mean;
    ss += d * d;
  }
  m.stdev = std::sqrt(ss / static_cast<double>(events.size()));
  return m;
}

namespace {

const CouplingMatrix* find_either(const CouplingSet& set, FactorKind x, FactorKind y,
                                  bool& swapped) {
  swapped = false;
  if (const auto* m = set.find({x, y}, CouplingFlavor::Frequency)) return m;
  swapped = true;
  return set.find({y, x}, CouplingFlavor::Frequency);
}

std::optional<double> lookup(const CouplingSet& set, const FactorId& x, const FactorId& y) {
  bool swapped = false;
  const auto* m = find_either(set, x.kind, y.kind, swapped);
  if (!m) return std::nullopt;
  return swapped ? m->coupling(y, x) : m->coupling(x, y);
}

std::optional<Binning> matrix_binning(const CouplingSet& set, FactorKind x, FactorKind y,
                                      const RiskBinningConfig& cfg, Warnings* warnings) {
  bool swapped = false;
  const auto* m = find_either(set, x, y, swapped);
  if (!m) return std::nullopt;
  return bin_matrix(*m, cfg, warnings).binning;
}

}  // namespace

PolicyModel build_policy_model(const CouplingSet& couplings, const EventIndex& index,
                               const RiskBinningConfig& binning, const PolicyWeights& weights,
                               double traffic_alpha, TrafficDirection direction,
                               Warnings* warnings) {
  weights.validate();
  PolicyModel m;
  m.couplings = couplings;
  m.weights = weights;
  m.dev_loc = matrix_binning(couplings, FactorKind::Device, FactorKind::Location, binning, warnings);
  m.doc_loc =
      matrix_binning(couplings, FactorKind::Document, FactorKind::Location, binning, warnings);

  auto docs = couplings.elements.count(FactorKind::Document)
                  ? couplings.elements.at(FactorKind::Document)
                  : std::vector<FactorId>{};
  auto locs = couplings.elements.count(FactorKind::Location)
                  ? couplings.elements.at(FactorKind::Location)
                  : std::vector<FactorId>{};
  auto triple_values = couplings.triple.all_values(docs, locs);
  if (!triple_values.empty()) {
    m.triple = bin_values(triple_values, binning.alpha_for("triple"), binning.population, warnings);
  }
  std::vector<double> dt_values;
  for (const auto& [doc, row] : couplings.doc_time.normalized) {
    dt_values.insert(dt_values.end(), row.begin(), row.end());
  }
  if (!dt_values.empty()) {
    m.doc_time = bin_values(dt_values, binning.alpha_for("doc_time"), binning.population, warnings);
  }
  m.traffic = fit_traffic(index, traffic_alpha, direction);
  return m;
}

void apply_weights(PolicyRiskBreakdown& b, const PolicyWeights& w) {
  b.r_dev = w.w_devloc * b.r_devloc;
  b.r_env = w.w_traffic * b.r_traffic + w.w_coexist * b.r_coexist;
  b.r_act = w.w_docloc * b.r_docloc + w.w_doctime * b.r_doctime;
  b.r_overall = w.w_dev * b.r_dev + w.w_env * b.r_env + w.w_act * b.r_act;
  b.decision = b.r_overall < w.permit_threshold ? Decision::Permit : Decision::Deny;
}

PolicyRiskBreakdown evaluate_policy(const Event& event, const FactorId& device,
                                    const FactorId& document, Timestamp time,
                                    const PolicyModel& model) {
  PolicyRiskBreakdown b;
  auto missing = [&b](const std::string& what) {
    b.warnings.push_back({WarningCode::MissingCoupling, what});
    return 3;
  };
  auto score = [&](std::optional<double> value, const std::optional<Binning>& bin,
                   const std::string& what) {
    if (!value || !bin) return missing(what);
    return code(bin->classify(*value));
  };

  b.r_devloc = score(lookup(model.couplings, device, event.location), model.dev_loc,
                     "device-location " + device.token() + " @ " + event.location.token());
  b.r_docloc = score(lookup(model.couplings, document, event.location), model.doc_loc,
                     "document-location " + document.token() + " @ " + event.location.token());
  b.r_doctime = score(model.couplings.doc_time.coupling(document, time), model.doc_time,
                      "document-time " + document.token());

  std::optional<double> coexist;
  bool any_person = false;
  for (const auto& m : event.members) {
    if (m.kind != FactorKind::Person) continue;
    any_person = true;
    auto c = model.couplings.triple.coupling(m, document, event.location);
    if (!c) {
      coexist.reset();
      break;
    }
    coexist = coexist ? std::min(*coexist, *c) : *c;
  }
  b.r_coexist = any_person ? score(coexist, model.triple, "co-existence " + document.token())
                           : missing("co-existence: no person present");
  b.r_traffic = code(model.traffic.classify(event.count(FactorKind::Person)));
  apply_weights(b, model.weights);
  return b;
}

std::optional<double> ConsistencyTable::permit_consistency() const {
  std::size_t n = permit_medium_low + permit_high;
  if (n == 0) return std::nullopt;
  return 100.0 * static_cast<double>(permit_medium_low) / static_cast<double>(n);
}

std::optional<double> ConsistencyTable::deny_consistency() const {
  std::size_t n = deny_medium_low + deny_high;
  if (n == 0) return std::nullopt;
  return 100.0 * static_cast<double>(deny_high) / static_cast<double>(n);
}

std::optional<double> ConsistencyTable::overall() const {
  if (compared() == 0) return std::nullopt;
  return 100.0 * static_cast<double>(permit_medium_low + deny_high) /
         static_cast<double>(compared());
}

ConsistencyTable compare_consistency(std::span<const Decision> rasa,
                                     std::span<const Decision> policy,
                                     std::span<const ClusterLevel> levels) {
  if (rasa.size() != policy.size() || (!levels.empty() && levels.size() != rasa.size())) {
    throw Error(ErrorCode::LengthMismatch, "decision streams differ in length");
  }
  ConsistencyTable t;
  for (std::size_t i = 0; i < rasa.size(); ++i) {
    if (rasa[i] == Decision::Escalate) {
      ++t.escalated;
      continue;
    }
    if (policy[i] == Decision::Escalate) {
      throw Error(ErrorCode::InvalidArgument, "policy decisions are Permit or Deny");
    }
    const bool high = rasa[i] == Decision::Deny;
    if (policy[i] == Decision::Permit) {
      ++(high ? t.permit_high : t.permit_medium_low);
    } else {
      ++(high ? t.deny_high : t.deny_medium_low);
    }
    if (!levels.empty()) ++t.level_histogram[policy[i]][levels[i]];
  }
  return t;
}

std::string format_percent(double pct) {
  std::string s = csv::format_fixed(pct, 2);
  if (s.size() > 3 && s.compare(s.size() - 3, 3, ".00") == 0) s.resize(s.size() - 3);
  return s + "%";
}

void write_consistency_csv(std::ostream& out, const ConsistencyTable& t,
                           const std::string& algorithm_label) {
  auto pct = [](std::optional<double> v) { return v ? format_percent(*v) : std::string("n/a"); };
  out << "Policy,Permit,Deny,\n";
  out << csv::escape(algorithm_label) << ",Medium-Low,Medium-Low,High\n";
  out << "Number," << t.permit_medium_low << ',' << t.deny_medium_low << ',' << t.deny_high
      << '\n';
  out << "Consistency," << pct(t.permit_consistency()) << ',' << pct(t.deny_consistency())
      << ",\n";
  out << "Overall Consistency," << pct(t.overall()) << ",,\n";
}

void write_consistency_detail_csv(std::ostream& out, const ConsistencyTable& t) {
  out << "policy,rasa,level,count\n";
  out << "Permit,Medium-Low,," << t.permit_medium_low << '\n';
  out << "Permit,High,," << t.permit_high << '\n';
  out << "Deny,Medium-Low,," << t.deny_medium_low << '\n';
  out << "Deny,High,," << t.deny_high << '\n';
  out << ",Escalate,," << t.escalated << '\n';
  for (const auto& [decision, hist] : t.level_histogram) {
    for (const auto& [level, n] : hist) {
      out << to_string(decision) << ",," << to_string(level) << ',' << n << '\n';
    }
  }
}

ThresholdChoice tune_threshold(std::span<const double> r_overall, std::span<const Decision> rasa,
                               std::span<const double> grid) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty threshold grid");
  if (r_overall.size() != rasa.size()) {
    throw Error(ErrorCode::LengthMismatch, "risk values and decisions differ in length");
  }
  std::vector<double> thetas(grid.begin(), grid.end());
  std::sort(thetas.begin(), thetas.end());
  ThresholdChoice best{thetas.front(), -1.0};
  std::vector<Decision> policy(rasa.size());
  for (double theta : thetas) {
    for (std::size_t i = 0; i < rasa.size(); ++i) {
      policy[i] = r_overall[i] < theta ? Decision::Permit : Decision::Deny;
    }
    double c = compare_consistency(rasa, policy).overall().value_or(0.0);
    if (c > best.consistency) best = {theta, c};
  }
  return best;
}

std::vector<double> default_theta_grid() {
  std::vector<double> grid;
  for (int i = 85; i <= 260; i += 5) grid.push_back(i / 100.0);
  return grid;
}

}  // namespace ctxrisk
