#include "ctxrisk/risk_features.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "ctxrisk/csv.hpp"

namespace ctxrisk {

RiskLevel level_from_code(int c) {
  if (c < 1 || c > 3) {
    throw Error(ErrorCode::InvalidArgument, "risk code out of range: " + std::to_string(c));
  }
  return static_cast<RiskLevel>(c);
}

std::string_view to_string(RiskLevel level) {
  switch (level) {
    case RiskLevel::Low: return "Low";
    case RiskLevel::Medium: return "Medium";
    case RiskLevel::High: return "High";
  }
  return "?";
}

double RiskBinningConfig::alpha_for(const std::string& key) const {
  auto it = alpha_overrides.find(key);
  return it == alpha_overrides.end() ? alpha : it->second;
}

RiskLevel Binning::classify(double value) const {
  if (degenerate) return RiskLevel::Low;
  if (value < t_high) return RiskLevel::High;
  if (value < t_med) return RiskLevel::Medium;
  return RiskLevel::Low;
}

Binning bin_values(std::span<const double> values, double alpha, BinPopulation population,
                   Warnings* warnings) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidConfig, "alpha must be > 0");
  std::vector<double> pop;
  pop.reserve(values.size());
  for (double v : values) {
    if (population == BinPopulation::NonZeroCells && v == 0.0) continue;
    pop.push_back(v);
  }
  Binning b;
  if (pop.empty()) {
    b.degenerate = true;
    if (warnings) warnings->push_back({WarningCode::DegenerateDistribution, "empty population"});
    return b;
  }
  const double n = static_cast<double>(pop.size());
  b.mean = std::accumulate(pop.begin(), pop.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : pop) ss += (v - b.mean) * (v - b.mean);
  b.stdev = std::sqrt(ss / n);
  b.t_high = std::max(0.0, b.mean - alpha * b.stdev);
  b.t_med = b.mean;
  if (b.stdev == 0.0) {
    b.degenerate = true;
    if (warnings) {
      warnings->push_back({WarningCode::DegenerateDistribution, "zero spread; all cells Low"});
    }
  }
  return b;
}

MatrixBinning bin_matrix(const CouplingMatrix& m, const RiskBinningConfig& cfg,
                         Warnings* warnings) {
  std::vector<double> values;
  for (std::size_t r = 0; r < m.normalized.rows(); ++r) {
    for (std::size_t c = 0; c < m.normalized.cols(); ++c) {
      if (m.defined(r, c)) values.push_back(m.normalized(r, c));
    }
  }
  MatrixBinning out;
  Warnings local;
  out.binning = bin_values(values, cfg.alpha_for(binning_key(m.type, m.flavor)), cfg.population,
                           &local);
  for (auto& w : local) {
    w.detail = binning_key(m.type, m.flavor) + ": " + w.detail;
    if (warnings) warnings->push_back(w);
  }
  out.cells.reserve(m.normalized.data().size());
  for (std::size_t r = 0; r < m.normalized.rows(); ++r) {
    for (std::size_t c = 0; c < m.normalized.cols(); ++c) {
      out.cells.push_back(m.defined(r, c) ? out.binning.classify(m.normalized(r, c))
                                          : RiskLevel::Low);
    }
  }
  return out;
}

std::string binning_key(CouplingType type, CouplingFlavor flavor) {
  return std::string(to_string(flavor)) + ":" + type.name();
}

std::string_view to_string(FeatureFlavor flavor) {
  switch (flavor) {
    case FeatureFlavor::Frequency: return "Frequency";
    case FeatureFlavor::Duration: return "Duration";
    case FeatureFlavor::Combined: return "Combined";
  }
  return "?";
}

FeatureFlavor feature_flavor_from_string(std::string_view text) {
  if (text == "Frequency" || text == "frequency" || text == "freq") return FeatureFlavor::Frequency;
  if (text == "Duration" || text == "duration" || text == "dur") return FeatureFlavor::Duration;
  if (text == "Combined" || text == "combined") return FeatureFlavor::Combined;
  throw Error(ErrorCode::InvalidArgument, "unknown feature flavor: " + std::string(text));
}

std::size_t FeatureVector::present_count() const {
  return static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
}

bool FeatureVector::any_high() const {
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (present[i] && codes[i] == RiskLevel::High) return true;
  }
  return false;
}

const Binning* RiskModel::binning_for(CouplingType type, CouplingFlavor flavor) const {
  auto it = binnings.find(binning_key(type, flavor));
  return it == binnings.end() ? nullptr : &it->second;
}

std::vector<std::string> RiskModel::feature_names(FeatureFlavor flavor) const {
  std::vector<std::string> names;
  auto add = [&](CouplingFlavor f) {
    for (const auto& t : feature_config.couplings) names.push_back(binning_key(t, f));
  };
  if (flavor != FeatureFlavor::Duration) add(CouplingFlavor::Frequency);
  if (flavor != FeatureFlavor::Frequency) add(CouplingFlavor::Duration);
  return names;
}

RiskModel build_risk_model(CouplingSet couplings, const RiskBinningConfig& binning,
                           const FeatureConfig& features, Warnings* warnings) {
  RiskModel model;
  model.binning_config = binning;
  model.feature_config = features;
  for (const auto& m : couplings.matrices) {
    model.binnings[binning_key(m.type, m.flavor)] = bin_matrix(m, binning, warnings).binning;
  }
  model.couplings = std::move(couplings);
  return model;
}

namespace {

std::vector<FactorId> side(const Event& event, FactorKind kind) {
  if (kind == FactorKind::Location) return {event.location};
  std::vector<FactorId> out;
  for (const auto& m : event.members) {
    if (m.kind == kind) out.push_back(m);
  }
  return out;
}

void append_flavor(FeatureVector& out, const Event& event, const RiskModel& model,
                   CouplingFlavor flavor, Warnings* warnings) {
  for (const auto& type : model.feature_config.couplings) {
    const auto as = side(event, type.a);
    const auto bs = side(event, type.b);
    const CouplingMatrix* m = model.couplings.find(type, flavor);
    const Binning* bin = model.binning_for(type, flavor);

    bool any_pair = false;
    bool unknown_at_min = false;
    double best = 1.0;
    for (const auto& a : as) {
      for (const auto& b : bs) {
        if (a == b) continue;
        std::optional<double> c;
        if (m) c = m->coupling(a, b);
        double v = c.value_or(0.0);
        if (!c && warnings) {
          warnings->push_back({WarningCode::UnknownMember,
                               type.name() + " pair " + a.token() + " / " + b.token()});
        }
        if (!any_pair || v < best) {
          best = v;
          unknown_at_min = !c;
        } else if (v == best && !c) {
          unknown_at_min = true;
        }
        any_pair = true;
      }
    }
    if (!any_pair) {
      out.values.push_back(model.feature_config.absent_value);
      out.present.push_back(false);
      out.codes.push_back(RiskLevel::Low);
      continue;
    }
    out.values.push_back(best);
    out.present.push_back(true);
    if (unknown_at_min || !bin) {
      out.codes.push_back(RiskLevel::High);
    } else {
      out.codes.push_back(bin->classify(best));
    }
  }
}

}  // namespace

FeatureVector extract_feature(const Event& event, const RiskModel& model, FeatureFlavor flavor,
                              Warnings* warnings) {
  FeatureVector out;
  out.sample = event.id;
  out.flavor = flavor;
  if (flavor != FeatureFlavor::Duration) {
    append_flavor(out, event, model, CouplingFlavor::Frequency, warnings);
  }
  if (flavor != FeatureFlavor::Frequency) {
    append_flavor(out, event, model, CouplingFlavor::Duration, warnings);
  }
  return out;
}

AverageRisk average_event_risk(const FeatureVector& vector) {
  if (vector.present_count() == 0) {
    throw Error(ErrorCode::NoPresentFeatures,
                "sample " + std::to_string(vector.sample) + " has no present feature");
  }
  double sum = 0.0;
  for (RiskLevel c : vector.codes) sum += code(c);
  AverageRisk r;
  r.value = sum / static_cast<double>(vector.codes.size());
  r.level = r.value < 1.5 ? RiskLevel::Low : r.value < 2.5 ? RiskLevel::Medium : RiskLevel::High;
  return r;
}

std::vector<FeatureVector> featurize_dataset(const EventIndex& index,
                                             std::span<const EventId> samples,
                                             const RiskModel& model, FeatureFlavor flavor,
                                             Warnings* warnings) {
  std::vector<FeatureVector> out;
  out.reserve(samples.size());
  for (EventId id : samples) out.push_back(extract_feature(index.event(id), model, flavor, warnings));
  return out;
}

void write_features_csv(std::ostream& out, std::span<const FeatureVector> vectors,
                        const std::vector<std::string>& names) {
  std::vector<std::string> header{"sample_id", "flavor"};
  for (const auto& n : names) header.push_back(n);
  for (const auto& n : names) header.push_back("risk:" + n);
  header.push_back("average_risk");
  out << csv::join(header) << '\n';
  for (const auto& v : vectors) {
    if (v.values.size() != names.size()) {
      throw Error(ErrorCode::DimensionMismatch, "feature vector length differs from header");
    }
    std::vector<std::string> row{std::to_string(v.sample), std::string(to_string(v.flavor))};
    for (double x : v.values) row.push_back(csv::format_double(x));
    for (std::size_t i = 0; i < v.codes.size(); ++i) {
      row.push_back(v.present[i] ? std::to_string(code(v.codes[i])) : "0");
    }
    row.push_back(v.present_count() ? csv::format_fixed(average_event_risk(v).value, 4) : "");
    out << csv::join(row) << '\n';
  }
}

std::vector<FeatureVector> read_features_csv(std::istream& in) {
  auto rows = csv::read_rows(in);
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, "feature file has no header");
  const auto& header = rows.front();
  if (header.size() < 3 || (header.size() - 3) % 2 != 0 || header[0] != "sample_id") {
    throw Error(ErrorCode::MalformedLine, "unexpected feature header", 1);
  }
  const std::size_t dims = (header.size() - 3) / 2;
  std::vector<FeatureVector> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != header.size()) {
      throw Error(ErrorCode::MalformedLine, "wrong column count", i + 1);
    }
    FeatureVector v;
    try {
      v.sample = static_cast<EventId>(std::stoull(row[0]));
      v.flavor = feature_flavor_from_string(row[1]);
      for (std::size_t d = 0; d < dims; ++d) v.values.push_back(csv::parse_double(row[2 + d]));
      for (std::size_t d = 0; d < dims; ++d) {
        int c = std::stoi(row[2 + dims + d]);
        v.present.push_back(c != 0);
        v.codes.push_back(c == 0 ? RiskLevel::Low : level_from_code(c));
      }
    } catch (const Error& e) {
      throw Error(e.code(), e.what(), i + 1);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::MalformedLine, e.what(), i + 1);
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::vector<double>> feature_rows(std::span<const FeatureVector> vectors) {
  std::vector<std::vector<double>> rows;
  rows.reserve(vectors.size());
  for (const auto& v : vectors) rows.push_back(v.values);
  return rows;
}

}  // namespace ctxrisk
