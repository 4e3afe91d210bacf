#include "ctxrisk/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ctxrisk {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(LabelMode mode) { return mode == LabelMode::Decision ? "Decision" : "Level"; }

LabelMode label_mode_from_string(std::string_view text) {
  if (text == "Decision") return LabelMode::Decision;
  if (text == "Level") return LabelMode::Level;
  throw Error(ErrorCode::InvalidConfig, "unknown label mode: " + std::string(text));
}

namespace {

std::string_view to_string(OrientationMode m) { return m == OrientationMode::Canonical ? "Canonical" : "ByVariance"; }

OrientationMode orientation_from_string(std::string_view s) {
  if (s == "Canonical") return OrientationMode::Canonical;
  if (s == "ByVariance") return OrientationMode::ByVariance;
  throw Error(ErrorCode::InvalidConfig, "unknown orientation: " + std::string(s));
}

std::string_view to_string(SampleSelector s) {
  return s == SampleSelector::AllEvents ? "AllEvents" : "EventsWithDocument";
}

SampleSelector selector_from_string(std::string_view s) {
  if (s == "AllEvents") return SampleSelector::AllEvents;
  if (s == "EventsWithDocument") return SampleSelector::EventsWithDocument;
  throw Error(ErrorCode::InvalidConfig, "unknown sample selector: " + std::string(s));
}

std::string_view to_string(BinPopulation p) { return p == BinPopulation::AllCells ? "AllCells" : "NonZeroCells"; }

BinPopulation population_from_string(std::string_view s) {
  if (s == "AllCells") return BinPopulation::AllCells;
  if (s == "NonZeroCells") return BinPopulation::NonZeroCells;
  throw Error(ErrorCode::InvalidConfig, "unknown bin population: " + std::string(s));
}

CouplingType coupling_type_from_name(const std::string& name) {
  auto dash = name.find('-');
  if (dash == std::string::npos) throw Error(ErrorCode::InvalidConfig, "bad coupling name: " + name);
  return {kind_from_tag(name.substr(0, dash)), kind_from_tag(name.substr(dash + 1))};
}

ojson config_json(const PipelineConfig& c) {
  ojson j;
  j["paths"] = {{"log", c.log_path}, {"fixtures", c.fixtures_path}, {"output", c.output_path}};
  j["dwell"] = {{"document_dwell_s", c.dwell.document_dwell.count()},
                {"close_on_device_exit", c.dwell.close_on_device_exit}};
  j["coupling"] = {{"orientation", to_string(c.coupling.orientation)},
                   {"time_buckets", c.coupling.time_buckets}};
  ojson overrides = ojson::object();
  for (const auto& [k, v] : c.binning.alpha_overrides) overrides[k] = v;
  j["binning"] = {{"alpha", c.binning.alpha},
                  {"population", to_string(c.binning.population)},
                  {"alpha_overrides", overrides}};
  auto names = ojson::array();
  for (const auto& t : c.features.couplings) names.push_back(t.name());
  j["features"] = {{"couplings", names}, {"absent_value", c.features.absent_value}};
  j["samples"] = to_string(c.samples);
  j["rasa_flavor"] = to_string(c.rasa_flavor);
  const auto& cl = c.clustering;
  j["clustering"] = {
      {"dbscan", {{"eps", cl.dbscan.eps}, {"min_pts", cl.dbscan.min_pts}}},
      {"agglomerative", {{"k", cl.agglomerative.k}, {"linkage", to_string(cl.agglomerative.linkage)}}},
      {"gmm",
       {{"k", cl.gmm.k},
        {"max_iter", cl.gmm.max_iter},
        {"tolerance", cl.gmm.tolerance},
        {"covariance", to_string(cl.gmm.covariance)},
        {"seed", cl.gmm.seed},
        {"variance_floor", cl.gmm.variance_floor}}}};
  const auto& w = c.weights;
  j["policy"] = {{"w_devloc", w.w_devloc},
                 {"w_traffic", w.w_traffic},
                 {"w_coexist", w.w_coexist},
                 {"w_docloc", w.w_docloc},
                 {"w_doctime", w.w_doctime},
                 {"w_dev", w.w_dev},
                 {"w_env", w.w_env},
                 {"w_act", w.w_act},
                 {"permit_threshold", w.permit_threshold},
                 {"traffic_alpha", c.traffic_alpha},
                 {"traffic_direction", to_string(c.traffic_direction)},
                 {"tune_theta", c.tune_theta},
                 {"theta_grid", c.theta_grid}};
  j["tree"] = {{"max_depth", c.tree.max_depth},
               {"min_samples_leaf", c.tree.min_samples_leaf},
               {"flavor", to_string(c.tree_flavor)},
               {"labels", to_string(c.labels)}};
  return j;
}

PipelineConfig config_from(const json& j) {
  PipelineConfig c;
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    c.log_path = p.value("log", c.log_path);
    c.fixtures_path = p.value("fixtures", c.fixtures_path);
    c.output_path = p.value("output", c.output_path);
  }
  if (j.contains("dwell")) {
    const auto& d = j["dwell"];
    c.dwell.document_dwell = Seconds(d.value("document_dwell_s", c.dwell.document_dwell.count()));
    c.dwell.close_on_device_exit = d.value("close_on_device_exit", c.dwell.close_on_device_exit);
  }
  if (j.contains("coupling")) {
    const auto& d = j["coupling"];
    c.coupling.orientation = orientation_from_string(d.value("orientation", std::string("Canonical")));
    c.coupling.time_buckets = d.value("time_buckets", c.coupling.time_buckets);
  }
  if (j.contains("binning")) {
    const auto& b = j["binning"];
    c.binning.alpha = b.value("alpha", c.binning.alpha);
    c.binning.population = population_from_string(b.value("population", std::string("AllCells")));
    if (b.contains("alpha_overrides")) {
      for (const auto& [k, v] : b["alpha_overrides"].items()) c.binning.alpha_overrides[k] = v.get<double>();
    }
  }
  if (j.contains("features")) {
    const auto& f = j["features"];
    if (f.contains("couplings")) {
      c.features.couplings.clear();
      for (const auto& n : f["couplings"]) c.features.couplings.push_back(coupling_type_from_name(n.get<std::string>()));
    }
    c.features.absent_value = f.value("absent_value", c.features.absent_value);
  }
  if (j.contains("samples")) c.samples = selector_from_string(j["samples"].get<std::string>());
  if (j.contains("rasa_flavor")) c.rasa_flavor = feature_flavor_from_string(j["rasa_flavor"].get<std::string>());
  if (j.contains("clustering")) {
    const auto& cl = j["clustering"];
    if (cl.contains("dbscan")) {
      c.clustering.dbscan.eps = cl["dbscan"].value("eps", c.clustering.dbscan.eps);
      c.clustering.dbscan.min_pts = cl["dbscan"].value("min_pts", c.clustering.dbscan.min_pts);
    }
    if (cl.contains("agglomerative")) {
      auto& a = c.clustering.agglomerative;
      a.k = cl["agglomerative"].value("k", a.k);
      a.linkage = linkage_from_string(cl["agglomerative"].value("linkage", std::string(to_string(a.linkage))));
    }
    if (cl.contains("gmm")) {
      auto& g = c.clustering.gmm;
      const auto& s = cl["gmm"];
      g.k = s.value("k", g.k);
      g.max_iter = s.value("max_iter", g.max_iter);
      g.tolerance = s.value("tolerance", g.tolerance);
      g.covariance = covariance_from_string(s.value("covariance", std::string(to_string(g.covariance))));
      g.seed = s.value("seed", g.seed);
      g.variance_floor = s.value("variance_floor", g.variance_floor);
    }
  }
  if (j.contains("policy")) {
    const auto& p = j["policy"];
    auto& w = c.weights;
    w.w_devloc = p.value("w_devloc", w.w_devloc);
    w.w_traffic = p.value("w_traffic", w.w_traffic);
    w.w_coexist = p.value("w_coexist", w.w_coexist);
    w.w_docloc = p.value("w_docloc", w.w_docloc);
    w.w_doctime = p.value("w_doctime", w.w_doctime);
    w.w_dev = p.value("w_dev", w.w_dev);
    w.w_env = p.value("w_env", w.w_env);
    w.w_act = p.value("w_act", w.w_act);
    w.permit_threshold = p.value("permit_threshold", w.permit_threshold);
    c.traffic_alpha = p.value("traffic_alpha", c.traffic_alpha);
    if (p.contains("traffic_direction")) {
      c.traffic_direction = traffic_direction_from_string(p["traffic_direction"].get<std::string>());
    }
    c.tune_theta = p.value("tune_theta", c.tune_theta);
    c.theta_grid = p.value("theta_grid", c.theta_grid);
  }
  if (j.contains("tree")) {
    const auto& t = j["tree"];
    c.tree.max_depth = t.value("max_depth", c.tree.max_depth);
    c.tree.min_samples_leaf = t.value("min_samples_leaf", c.tree.min_samples_leaf);
    if (t.contains("flavor")) c.tree_flavor = feature_flavor_from_string(t["flavor"].get<std::string>());
    if (t.contains("labels")) c.labels = label_mode_from_string(t["labels"].get<std::string>());
  }
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void PipelineConfig::validate() const {
  if (dwell.document_dwell.count() <= 0) throw Error(ErrorCode::InvalidConfig, "document dwell must be > 0");
  if (!(binning.alpha > 0.0)) throw Error(ErrorCode::InvalidConfig, "alpha must be > 0");
  for (const auto& [k, v] : binning.alpha_overrides) {
    if (!(v > 0.0)) throw Error(ErrorCode::InvalidConfig, "alpha override " + k + " must be > 0");
  }
  if (features.couplings.empty()) throw Error(ErrorCode::InvalidConfig, "no feature couplings");
  if (!(clustering.dbscan.eps > 0.0) || clustering.dbscan.min_pts < 1) {
    throw Error(ErrorCode::InvalidConfig, "dbscan needs eps > 0 and min_pts >= 1");
  }
  if (clustering.gmm.max_iter < 1 || !(clustering.gmm.tolerance >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "gmm needs max_iter >= 1 and tolerance >= 0");
  }
  weights.validate();
  if (!(traffic_alpha > 0.0)) throw Error(ErrorCode::InvalidConfig, "traffic_alpha must be > 0");
}

std::string pipeline_config_to_json(const PipelineConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

PipelineConfig pipeline_config_from_json(const std::string& text) {
  PipelineConfig c;
  try {
    c = config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  return pipeline_config_from_json(read_file(path));
}

// ---------------------------------------------------------------------------

const FlavorRun& PipelineResult::run(FeatureFlavor flavor) const {
  for (const auto& r : runs) {
    if (r.flavor == flavor) return r;
  }
  throw Error(ErrorCode::InvalidArgument, "flavor not computed: " + std::string(to_string(flavor)));
}

namespace {

std::size_t default_k(const DbscanResult& d, std::size_t configured, std::size_t n) {
  std::size_t k = configured ? configured : std::max<std::size_t>(1, d.assignment.cluster_count);
  return std::min(k, n);
}

FlavorRun run_flavor(const PipelineResult& r, FeatureFlavor flavor, const PipelineConfig& cfg,
                     Warnings& warnings) {
  FlavorRun fr;
  fr.flavor = flavor;
  fr.vectors = featurize_dataset(r.index, r.samples, r.model, flavor, &warnings);
  const auto pts = feature_rows(fr.vectors);
  fr.dbscan = fit_dbscan(pts, cfg.clustering.dbscan);
  fr.summaries = summarize_clusters(fr.dbscan.assignment, fr.vectors);
  fr.decisions = decide_samples(fr.dbscan.assignment, fr.summaries, fr.vectors);

  const std::size_t ka = default_k(fr.dbscan, cfg.clustering.agglomerative.k, pts.size());
  fr.agglomerative = agglomerative(pts, ka, cfg.clustering.agglomerative.linkage);
  fr.agglomerative_summaries = summarize_clusters(fr.agglomerative, fr.vectors);
  const std::size_t kg = default_k(fr.dbscan, cfg.clustering.gmm.k, pts.size());
  fr.gmm = gmm_em(pts, kg, cfg.clustering.gmm);
  fr.gmm_summaries = summarize_clusters(fr.gmm.assignment, fr.vectors);
  for (const auto& w : fr.gmm.warnings) warnings.push_back(w);
  fr.risk = dataset_risk(fr.vectors);

  std::map<int, ClusterLevel> level;
  for (const auto& s : fr.summaries) level[s.cluster] = s.level;
  for (const auto& read : r.index.reads()) {
    const std::size_t pos = r.sample_position.at(read.event);
    fr.read_decisions.push_back(fr.decisions[pos]);
    fr.read_levels.push_back(level.at(fr.dbscan.assignment.labels[pos]));
  }
  return fr;
}

}  // namespace

PipelineResult run_pipeline(const ActionLog& log, const PipelineConfig& cfg) {
  cfg.validate();
  PipelineResult r;
  r.index = build_event_index(log, cfg.dwell);
  r.warnings = r.index.warnings();
  r.model = build_risk_model(build_all_couplings(r.index, cfg.coupling), cfg.binning, cfg.features,
                             &r.warnings);
  r.policy = build_policy_model(r.model.couplings, r.index, cfg.binning, cfg.weights,
                                cfg.traffic_alpha, cfg.traffic_direction, &r.warnings);
  r.samples = event_samples(r.index, cfg.samples);
  if (r.samples.empty()) throw Error(ErrorCode::EmptyInput, "log produced no samples");
  for (std::size_t i = 0; i < r.samples.size(); ++i) r.sample_position[r.samples[i]] = i;

  for (const auto& read : r.index.reads()) {
    r.policy_reads.push_back(
        evaluate_policy(r.index.event(read.event), read.device, read.document, read.time, r.policy));
  }
  for (FeatureFlavor f : kAllFeatureFlavors) r.runs.push_back(run_flavor(r, f, cfg, r.warnings));

  const FlavorRun& rasa = r.run(cfg.rasa_flavor);
  std::vector<double> overall;
  for (const auto& b : r.policy_reads) overall.push_back(b.r_overall);
  if (cfg.tune_theta && !overall.empty()) {
    const auto grid = cfg.theta_grid.empty() ? default_theta_grid() : cfg.theta_grid;
    r.theta = tune_threshold(overall, rasa.read_decisions, grid);
    r.policy.weights.permit_threshold = r.theta.theta;
  } else {
    r.theta.theta = cfg.weights.permit_threshold;
  }
  for (auto& b : r.policy_reads) apply_weights(b, r.policy.weights);

  std::vector<Decision> policy_decisions;
  for (const auto& b : r.policy_reads) policy_decisions.push_back(b.decision);
  for (auto& fr : r.runs) {
    fr.consistency = compare_consistency(fr.read_decisions, policy_decisions, fr.read_levels);
  }
  r.theta.consistency = r.run(cfg.rasa_flavor).consistency.overall().value_or(0.0);
  return r;
}

std::vector<std::string> training_labels(const FlavorRun& run, LabelMode mode) {
  std::vector<std::string> out;
  out.reserve(run.decisions.size());
  if (mode == LabelMode::Decision) {
    for (Decision d : run.decisions) out.emplace_back(d == Decision::Permit ? "Permit" : "Deny");
    return out;
  }
  std::map<int, ClusterLevel> level;
  for (const auto& s : run.summaries) level[s.cluster] = s.level;
  for (int l : run.dbscan.assignment.labels) {
    out.emplace_back(l < 0 ? std::string("Outlier") : std::string(to_string(level.at(l))));
  }
  return out;
}

CrossDataset cross_dataset(const PipelineResult& train, const PipelineResult& test,
                           const PipelineConfig& cfg) {
  CrossDataset out;
  const FlavorRun& tr = train.run(cfg.tree_flavor);
  out.train_x = feature_rows(tr.vectors);
  out.train_y = training_labels(tr, cfg.labels);
  auto vectors = featurize_dataset(test.index, test.samples, train.model, cfg.tree_flavor);
  out.test_x = feature_rows(vectors);
  out.test_y = training_labels(test.run(cfg.tree_flavor), cfg.labels);
  return out;
}

// ---------------------------------------------------------------------------
// Artifact serialization

namespace {

ojson binning_json(const Binning& b) {
  return {{"mean", b.mean}, {"stdev", b.stdev}, {"t_high", b.t_high}, {"t_med", b.t_med},
          {"degenerate", b.degenerate}};
}

Binning binning_from(const json& j) {
  Binning b;
  b.mean = j.at("mean").get<double>();
  b.stdev = j.at("stdev").get<double>();
  b.t_high = j.at("t_high").get<double>();
  b.t_med = j.at("t_med").get<double>();
  b.degenerate = j.at("degenerate").get<bool>();
  return b;
}

ojson optional_binning(const std::optional<Binning>& b) { return b ? binning_json(*b) : ojson(nullptr); }

std::optional<Binning> optional_binning_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return binning_from(j);
}

ojson ids_json(const std::vector<FactorId>& ids) {
  auto a = ojson::array();
  for (const auto& f : ids) a.push_back(f.token());
  return a;
}

std::vector<FactorId> ids_from(const json& j) {
  std::vector<FactorId> out;
  for (const auto& t : j) out.push_back(FactorId::parse(t.get<std::string>()));
  return out;
}

ojson dense_json(const DenseMatrix& m) {
  auto rows = ojson::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = ojson::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

DenseMatrix dense_from(const json& j, std::size_t rows, std::size_t cols) {
  DenseMatrix m(rows, cols);
  if (j.size() != rows) throw Error(ErrorCode::MalformedLine, "matrix row count mismatch");
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw Error(ErrorCode::MalformedLine, "matrix column count mismatch");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

ojson coupling_json(const CouplingSet& s) {
  ojson j;
  auto ms = ojson::array();
  for (const auto& m : s.matrices) {
    ms.push_back({{"type", m.type.name()},
                  {"flavor", to_string(m.flavor)},
                  {"a_ids", ids_json(m.a_ids)},
                  {"b_ids", ids_json(m.b_ids)},
                  {"raw", dense_json(m.raw)},
                  {"normalized", dense_json(m.normalized)}});
  }
  j["matrices"] = ms;
  auto triple = ojson::array();
  for (const auto& [person, cells] : s.triple.by_person) {
    auto row = ojson::array();
    for (const auto& [key, cell] : cells) {
      row.push_back({key.first.token(), key.second.token(), cell.raw, cell.normalized});
    }
    triple.push_back({{"person", person.token()}, {"cells", row}});
  }
  j["triple"] = triple;
  ojson raw = ojson::object(), norm = ojson::object();
  for (const auto& [doc, v] : s.doc_time.raw) raw[doc.token()] = v;
  for (const auto& [doc, v] : s.doc_time.normalized) norm[doc.token()] = v;
  j["doc_time"] = {{"buckets", s.doc_time.buckets}, {"raw", raw}, {"normalized", norm}};
  auto skipped = ojson::array();
  for (const auto& sk : s.skipped) skipped.push_back({{"type", sk.type.name()}, {"reason", sk.reason}});
  j["skipped"] = skipped;
  ojson elements = ojson::object();
  for (const auto& [kind, ids] : s.elements) elements[std::string(kind_tag(kind))] = ids_json(ids);
  j["elements"] = elements;
  return j;
}

CouplingSet coupling_from(const json& j) {
  CouplingSet s;
  for (const auto& m : j.at("matrices")) {
    CouplingMatrix cm;
    cm.type = coupling_type_from_name(m.at("type").get<std::string>());
    cm.flavor = flavor_from_string(m.at("flavor").get<std::string>());
    cm.a_ids = ids_from(m.at("a_ids"));
    cm.b_ids = ids_from(m.at("b_ids"));
    cm.raw = dense_from(m.at("raw"), cm.a_ids.size(), cm.b_ids.size());
    cm.normalized = dense_from(m.at("normalized"), cm.a_ids.size(), cm.b_ids.size());
    s.matrices.push_back(std::move(cm));
  }
  for (const auto& p : j.at("triple")) {
    auto& cells = s.triple.by_person[FactorId::parse(p.at("person").get<std::string>())];
    for (const auto& c : p.at("cells")) {
      cells[{FactorId::parse(c[0].get<std::string>()), FactorId::parse(c[1].get<std::string>())}] =
          {c[2].get<double>(), c[3].get<double>()};
    }
  }
  const auto& dt = j.at("doc_time");
  s.doc_time.buckets = dt.at("buckets").get<std::size_t>();
  for (const auto& [k, v] : dt.at("raw").items()) s.doc_time.raw[FactorId::parse(k)] = v.get<std::vector<double>>();
  for (const auto& [k, v] : dt.at("normalized").items()) {
    s.doc_time.normalized[FactorId::parse(k)] = v.get<std::vector<double>>();
  }
  for (const auto& sk : j.at("skipped")) {
    s.skipped.push_back({coupling_type_from_name(sk.at("type").get<std::string>()),
                         sk.at("reason").get<std::string>()});
  }
  for (const auto& [k, v] : j.at("elements").items()) s.elements[kind_from_tag(k)] = ids_from(v);
  return s;
}

}  // namespace

std::string coupling_set_to_json(const CouplingSet& set) { return coupling_json(set).dump(1) + "\n"; }

CouplingSet coupling_set_from_json(const std::string& text) {
  try {
    return coupling_from(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedLine, std::string("coupling set: ") + e.what());
  }
}

TrainedModel make_trained_model(const PipelineResult& result, const PipelineConfig& cfg) {
  TrainedModel m;
  m.config = cfg;
  m.config.weights = result.policy.weights;
  m.risk = result.model;
  m.policy = result.policy;
  const FlavorRun& run = result.run(cfg.rasa_flavor);
  m.dbscan = run.dbscan.model;
  for (const auto& s : run.summaries) {
    if (s.cluster >= 0) m.cluster_levels[s.cluster] = s.level;
  }
  return m;
}

std::string trained_model_to_json(const TrainedModel& m) {
  ojson j;
  j["config"] = config_json(m.config);
  j["couplings"] = coupling_json(m.risk.couplings);
  ojson rb = ojson::object();
  for (const auto& [k, b] : m.risk.binnings) rb[k] = binning_json(b);
  j["risk_binnings"] = rb;
  const auto& t = m.policy.traffic;
  j["policy"] = {{"dev_loc", optional_binning(m.policy.dev_loc)},
                 {"doc_loc", optional_binning(m.policy.doc_loc)},
                 {"triple", optional_binning(m.policy.triple)},
                 {"doc_time", optional_binning(m.policy.doc_time)},
                 {"traffic",
                  {{"mean", t.mean}, {"stdev", t.stdev}, {"alpha", t.alpha},
                   {"direction", to_string(t.direction)}}}};
  auto levels = ojson::array();
  for (const auto& [c, l] : m.cluster_levels) levels.push_back({{"cluster", c}, {"level", to_string(l)}});
  j["dbscan"] = {{"eps", m.dbscan.config.eps},
                 {"min_pts", m.dbscan.config.min_pts},
                 {"core_points", m.dbscan.core_points},
                 {"core_labels", m.dbscan.core_labels},
                 {"clusters", levels}};
  return j.dump(1) + "\n";
}

TrainedModel trained_model_from_json(const std::string& text) {
  TrainedModel m;
  try {
    const json j = json::parse(text);
    m.config = config_from(j.at("config"));
    m.risk.couplings = coupling_from(j.at("couplings"));
    m.risk.binning_config = m.config.binning;
    m.risk.feature_config = m.config.features;
    for (const auto& [k, v] : j.at("risk_binnings").items()) m.risk.binnings[k] = binning_from(v);
    const auto& p = j.at("policy");
    m.policy.couplings = m.risk.couplings;
    m.policy.dev_loc = optional_binning_from(p.at("dev_loc"));
    m.policy.doc_loc = optional_binning_from(p.at("doc_loc"));
    m.policy.triple = optional_binning_from(p.at("triple"));
    m.policy.doc_time = optional_binning_from(p.at("doc_time"));
    const auto& t = p.at("traffic");
    m.policy.traffic.mean = t.at("mean").get<double>();
    m.policy.traffic.stdev = t.at("stdev").get<double>();
    m.policy.traffic.alpha = t.at("alpha").get<double>();
    m.policy.traffic.direction = traffic_direction_from_string(t.at("direction").get<std::string>());
    m.policy.weights = m.config.weights;
    const auto& d = j.at("dbscan");
    m.dbscan.config.eps = d.at("eps").get<double>();
    m.dbscan.config.min_pts = d.at("min_pts").get<std::size_t>();
    m.dbscan.core_points = d.at("core_points").get<std::vector<Point>>();
    m.dbscan.core_labels = d.at("core_labels").get<std::vector<int>>();
    for (const auto& c : d.at("clusters")) {
      m.cluster_levels[c.at("cluster").get<int>()] =
          cluster_level_from_string(c.at("level").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedLine, std::string("model artifact: ") + e.what());
  }
  m.config.validate();
  if (m.dbscan.core_points.size() != m.dbscan.core_labels.size()) {
    throw Error(ErrorCode::MalformedLine, "model artifact: core points and labels differ");
  }
  return m;
}

void save_trained_model(const std::filesystem::path& path, const TrainedModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << trained_model_to_json(model);
}

TrainedModel load_trained_model(const std::filesystem::path& path) {
  return trained_model_from_json(read_file(path));
}

// ---------------------------------------------------------------------------
// Decisions

RasaVerdict rasa_decide(const Event& event, const TrainedModel& model) {
  RasaVerdict v;
  v.features = extract_feature(event, model.risk, model.config.rasa_flavor, &v.warnings);
  v.cluster = model.dbscan.predict(v.features.values);
  if (v.cluster < 0) {
    v.decision = Decision::Escalate;
    return v;
  }
  auto it = model.cluster_levels.find(v.cluster);
  if (it == model.cluster_levels.end()) {
    v.decision = Decision::Escalate;
    return v;
  }
  v.level = it->second;
  v.decision = decide_cluster(*v.level, v.features, false);
  return v;
}

Decision combine_decisions(Decision rasa, Decision policy) {
  if (rasa == Decision::Deny || policy == Decision::Deny) return Decision::Deny;
  if (rasa == Decision::Escalate || policy == Decision::Escalate) return Decision::Escalate;
  return Decision::Permit;
}

namespace {

bool known(const TrainedModel& model, const FactorId& f) {
  auto it = model.risk.couplings.elements.find(f.kind);
  if (it == model.risk.couplings.elements.end()) return false;
  return std::binary_search(it->second.begin(), it->second.end(), f);
}

void add_member(Event& e, const FactorId& f) {
  auto it = std::lower_bound(e.members.begin(), e.members.end(), f);
  if (it == e.members.end() || *it != f) e.members.insert(it, f);
}

}  // namespace

ServiceDecision decide_read(const Event& event, const FactorId& device, const FactorId& document,
                            Timestamp time, const TrainedModel& model) {
  Event ev = event;
  add_member(ev, device);
  add_member(ev, document);
  ServiceDecision d;
  d.rasa = rasa_decide(ev, model);
  d.policy = evaluate_policy(ev, device, document, time, model.policy);
  d.decision = combine_decisions(d.rasa.decision, d.policy.decision);
  for (const FactorId* f : std::initializer_list<const FactorId*>{&device, &document, &ev.location}) {
    if (!known(model, *f)) {
      d.policy.warnings.push_back(Warning{WarningCode::MissingCoupling, "unseen " + f->token()});
      d.decision = Decision::Deny;
    }
  }
  return d;
}

namespace {

ojson warnings_json(const Warnings& ws) {
  auto a = ojson::array();
  for (const auto& w : ws) a.push_back({{"code", to_string(w.code)}, {"detail", w.detail}});
  return a;
}

ojson service_json(const ServiceDecision& d, double theta) {
  ojson j;
  j["decision"] = to_string(d.decision);
  std::vector<int> codes;
  for (std::size_t i = 0; i < d.rasa.features.codes.size(); ++i) {
    codes.push_back(d.rasa.features.present[i] ? code(d.rasa.features.codes[i]) : 0);
  }
  j["rasa"] = {{"decision", to_string(d.rasa.decision)},
               {"cluster", d.rasa.cluster},
               {"level", d.rasa.level ? ojson(to_string(*d.rasa.level)) : ojson(nullptr)},
               {"features", d.rasa.features.values},
               {"codes", codes}};
  const auto& p = d.policy;
  j["policy"] = {{"decision", to_string(p.decision)},
                 {"r_overall", p.r_overall},
                 {"theta", theta},
                 {"breakdown",
                  {{"r_devloc", p.r_devloc}, {"r_traffic", p.r_traffic}, {"r_coexist", p.r_coexist},
                   {"r_docloc", p.r_docloc}, {"r_doctime", p.r_doctime}, {"r_dev", p.r_dev},
                   {"r_env", p.r_env}, {"r_act", p.r_act}}}};
  Warnings all = d.rasa.warnings;
  all.insert(all.end(), p.warnings.begin(), p.warnings.end());
  j["warnings"] = warnings_json(all);
  return j;
}

std::string error_json(const std::string& what) {
  ojson j;
  j["error"] = what;
  return j.dump();
}

}  // namespace

std::string decision_to_json(const ServiceDecision& d, double theta) {
  return service_json(d, theta).dump();
}

DecisionService::DecisionService(TrainedModel model)
    : model_(std::move(model)), builder_(model_.config.dwell) {}

std::string DecisionService::respond(const ServiceDecision& d) const {
  return service_json(d, model_.policy.weights.permit_threshold).dump();
}

std::string DecisionService::fail_closed(const std::string& why) const {
  ojson j;
  j["decision"] = "Deny";
  j["rasa"] = nullptr;
  j["policy"] = nullptr;
  j["warnings"] = ojson::array({{{"code", "MissingCoupling"}, {"detail", why}}});
  return j.dump();
}

std::string DecisionService::handle(const std::string& line) {
  json req;
  try {
    req = json::parse(line);
  } catch (const json::exception& e) {
    return error_json(std::string("malformed request: ") + e.what());
  }
  if (!req.is_object()) return error_json("request must be a JSON object");
  try {
    if (req.contains("query")) {
      const auto& q = req["query"];
      const FactorId device = FactorId::parse(q.at("device").get<std::string>());
      const FactorId document = FactorId::parse(q.at("document").get<std::string>());
      if (device.kind != FactorKind::Device || document.kind != FactorKind::Document) {
        return error_json("query needs a device and a document");
      }
      Timestamp t = q.contains("time") ? parse_timestamp(q["time"].get<std::string>())
                                       : last_time_.value_or(Timestamp{});
      if (!last_time_ || t > *last_time_) {
        builder_.advance_to(t);
        last_time_ = t;
      }
      std::optional<FactorId> loc;
      if (q.contains("location")) {
        loc = FactorId::parse(q["location"].get<std::string>());
      } else {
        loc = builder_.location_of(device);
      }
      if (!loc) return fail_closed("device " + device.token() + " is not placed");
      Event ev;
      if (const Event* cur = builder_.current_event(*loc)) ev = *cur;
      ev.location = *loc;
      return respond(decide_read(ev, device, document, t, model_));
    }
    if (req.contains("event")) {
      const auto& e = req["event"];
      Event ev;
      ev.location = FactorId::parse(e.at("location").get<std::string>());
      std::optional<FactorId> device, document;
      for (const auto& m : e.at("members")) {
        FactorId f = FactorId::parse(m.get<std::string>());
        if (f.kind == FactorKind::Location) return error_json("event members cannot be locations");
        if (f.kind == FactorKind::Device && !device) device = f;
        if (f.kind == FactorKind::Document && !document) document = f;
        add_member(ev, f);
      }
      if (!device || !document) return error_json("event snapshot needs a device and a document");
      Timestamp t = e.contains("time") ? parse_timestamp(e["time"].get<std::string>())
                                       : last_time_.value_or(Timestamp{});
      return respond(decide_read(ev, *device, *document, t, model_));
    }
    if (req.contains("act")) {
      ActionRecord rec = parse_record(line, LogFormat::JsonLines, ParseMode::Strict);
      if (last_time_ && rec.time < *last_time_) return error_json("record is older than the service clock");
      const std::size_t index = records_;
      builder_.apply(rec, index);
      ++records_;
      last_time_ = rec.time;
      if (rec.act != ActionKind::Read) {
        ojson j;
        j["ok"] = true;
        j["record"] = index;
        return j.dump();
      }
      auto loc = builder_.location_of(*rec.device);
      if (!loc) return fail_closed("device " + rec.device->token() + " is not placed");
      const Event* cur = builder_.current_event(*loc);
      Event ev;
      if (cur) ev = *cur;
      ev.location = *loc;
      auto j = ojson::parse(respond(decide_read(ev, *rec.device, *rec.document, rec.time, model_)));
      j["record"] = index;
      return j.dump();
    }
    return error_json("unknown request: expected an action record, \"query\" or \"event\"");
  } catch (const Error& e) {
    return error_json(e.what());
  } catch (const json::exception& e) {
    return error_json(std::string("malformed request: ") + e.what());
  }
}

std::size_t DecisionService::serve(std::istream& in, std::ostream& out) {
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out << handle(line) << '\n';
    out.flush();
    ++n;
  }
  return n;
}

}  // namespace ctxrisk
