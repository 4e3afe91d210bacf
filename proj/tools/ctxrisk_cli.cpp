// Command-line front end: every pipeline stage as a subcommand working on a
// directory of file artifacts.

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxrisk/csv.hpp"
#include "ctxrisk/pipeline.hpp"
#include "ctxrisk/simulator.hpp"

namespace fs = std::filesystem;
using namespace ctxrisk;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string flavor_name(FeatureFlavor f) { return lower(to_string(f)); }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string() + " (run the previous stage first)");
  return in;
}

std::string slurp(const fs::path& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) { open_out(path) << text; }

void report_warnings(const Warnings& ws, std::size_t limit = 10) {
  std::map<WarningCode, std::size_t> counts;
  for (const auto& w : ws) {
    if (counts[w.code]++ < limit) std::cerr << "warning: " << to_string(w.code) << ": " << w.detail << '\n';
  }
  for (const auto& [code, n] : counts) {
    if (n > limit) std::cerr << "warning: " << to_string(code) << ": " << n - limit << " more\n";
  }
}

// ---------------------------------------------------------------------------
// Shared options

struct Context {
  std::string config_path;
  std::string work;
  std::string log;

  PipelineConfig config() const {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_pipeline_config(config_path);
    if (const char* v = std::getenv("CTXRISK_LOG")) cfg.log_path = v;
    if (const char* v = std::getenv("CTXRISK_FIXTURES")) cfg.fixtures_path = v;
    if (const char* v = std::getenv("CTXRISK_OUT")) cfg.output_path = v;
    if (!work.empty()) cfg.output_path = work;
    if (!log.empty()) cfg.log_path = log;
    return cfg;
  }
};

fs::path work_dir(const PipelineConfig& cfg) {
  fs::path dir = cfg.output_path.empty() ? fs::path("out") : fs::path(cfg.output_path);
  fs::create_directories(dir);
  return dir;
}

fs::path log_path(const PipelineConfig& cfg) {
  return cfg.log_path.empty() ? work_dir(cfg) / "log.jsonl" : fs::path(cfg.log_path);
}

ActionLog load_any_log(const fs::path& path) {
  return load_log(path, format_from_path(path)).log;
}

EventIndex load_index(const PipelineConfig& cfg) {
  auto index = build_event_index(load_any_log(log_path(cfg)), cfg.dwell);
  report_warnings(index.warnings());
  return index;
}

CouplingSet load_couplings(const PipelineConfig& cfg) {
  return coupling_set_from_json(slurp(work_dir(cfg) / "couplings.json"));
}

std::vector<FeatureVector> load_features(const fs::path& dir, FeatureFlavor f) {
  auto in = open_in(dir / ("features_" + flavor_name(f) + ".csv"));
  return read_features_csv(in);
}

std::vector<std::vector<std::string>> load_rows(const fs::path& path) {
  auto in = open_in(path);
  auto rows = csv::read_rows(in);
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, path.string() + " has no header");
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name, const fs::path& path) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorCode::MissingField, path.string() + ": no column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

int to_int(const std::string& s) { return static_cast<int>(csv::parse_double(s)); }

ClusterAssignment assignment_from(const std::vector<int>& labels, Algorithm algorithm) {
  ClusterAssignment a;
  a.labels = labels;
  a.algorithm = algorithm;
  std::set<int> ids;
  for (int l : labels) {
    if (l >= 0) ids.insert(l);
  }
  a.cluster_count = ids.size();
  return a;
}

struct SampleLabel {
  int cluster = -1;
  ClusterLevel level = ClusterLevel::L;
  Decision decision = Decision::Deny;
};

std::map<EventId, SampleLabel> load_labels(const fs::path& dir, FeatureFlavor f) {
  const fs::path path = dir / ("labels_" + flavor_name(f) + ".csv");
  auto rows = load_rows(path);
  const auto& h = rows.front();
  const auto cs = column(h, "sample_id", path), cc = column(h, "cluster", path),
             cl = column(h, "level", path), cd = column(h, "decision", path);
  std::map<EventId, SampleLabel> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out[static_cast<EventId>(to_int(r[cs]))] = {to_int(r[cc]), cluster_level_from_string(r[cl]),
                                                decision_from_string(r[cd])};
  }
  return out;
}

struct ReadDecisions {
  std::vector<std::size_t> records;
  std::vector<Decision> decisions;
  std::vector<ClusterLevel> levels;
};

ReadDecisions load_read_decisions(const fs::path& dir, FeatureFlavor f) {
  const fs::path path = dir / ("read_decisions_" + flavor_name(f) + ".csv");
  auto rows = load_rows(path);
  const auto& h = rows.front();
  const auto cr = column(h, "record", path), cl = column(h, "level", path), cd = column(h, "decision", path);
  ReadDecisions out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    out.records.push_back(static_cast<std::size_t>(to_int(rows[i][cr])));
    out.levels.push_back(cluster_level_from_string(rows[i][cl]));
    out.decisions.push_back(decision_from_string(rows[i][cd]));
  }
  return out;
}

std::set<std::size_t> load_injected(const fs::path& path) {
  std::set<std::size_t> out;
  std::ifstream in(path);
  if (!in) return out;
  for (const auto& a : read_annotations(in)) out.insert(a.record_index);
  return out;
}

// ---------------------------------------------------------------------------
// Stages

struct SimulateOptions {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<double> days;
  bool pair = false;
  double perturbation = 0.2;
};

void write_sim(const fs::path& dir, const std::string& stem, const SimulationResult& sim) {
  save_log(dir / (stem + ".jsonl"), sim.log, LogFormat::JsonLines);
  auto out = open_out(dir / (stem == "log" ? "annotations.jsonl" : "annotations2.jsonl"));
  write_annotations(out, sim);
  report_warnings(sim.warnings);
  std::cout << stem << ".jsonl: " << sim.log.size() << " records, " << sim.annotations.size()
            << " injected anomalies\n";
}

int stage_simulate(const Context& ctx, const SimulateOptions& o) {
  const auto cfg = ctx.config();
  ScenarioConfig sc = o.scenario.empty() ? ScenarioConfig::default_scenario() : load_scenario(o.scenario);
  if (o.seed) sc.seed = *o.seed;
  if (o.days) sc.duration_s = static_cast<std::int64_t>(*o.days * 86400.0);
  sc.validate();
  const fs::path dir = work_dir(cfg);
  write_text(dir / "scenario.json", scenario_to_json(sc));
  if (o.pair) {
    auto [a, b] = make_pair(sc, o.perturbation);
    write_sim(dir, "log", a);
    write_sim(dir, "log2", b);
  } else {
    write_sim(dir, "log", generate(sc));
  }
  return 0;
}

int stage_ingest(const Context& ctx, const std::string& input, bool lenient, const std::string& name) {
  const auto cfg = ctx.config();
  const fs::path src = input.empty() ? log_path(cfg) : fs::path(input);
  auto loaded = load_log(src, format_from_path(src), lenient ? ParseMode::Lenient : ParseMode::Strict);
  const fs::path dir = work_dir(cfg);
  save_log(dir / name, loaded.log, LogFormat::JsonLines);
  auto out = open_out(dir / (fs::path(name).stem().string() + "_ingest.csv"));
  out << "act,count\n";
  for (ActionKind a : kAllActionKinds) out << to_string(a) << ',' << loaded.report.count(a) << '\n';
  out << "total," << loaded.report.total << '\n';
  std::cout << "ingested " << loaded.report.total << " records from " << src.string() << " into "
            << (dir / name).string() << '\n';
  return 0;
}

int stage_events(const Context& ctx) {
  const auto cfg = ctx.config();
  const auto index = load_index(cfg);
  const fs::path dir = work_dir(cfg);
  {
    auto out = open_out(dir / "events.jsonl");
    write_event_trace(out, index);
  }
  auto out = open_out(dir / "reads.csv");
  out << "record,time,device,document,location,event\n";
  for (const auto& r : index.reads()) {
    out << r.record_index << ',' << format_timestamp(r.time) << ',' << r.device.token() << ','
        << r.document.token() << ',' << r.location.token() << ',' << r.event << '\n';
  }
  std::cout << index.events().size() << " events, " << index.reads().size() << " reads\n";
  return 0;
}

int couple_fixtures(const fs::path& fixtures, const fs::path& dir) {
  if (!fs::is_directory(fixtures)) throw Error(ErrorCode::Io, "not a directory: " + fixtures.string());
  std::vector<fs::path> raws;
  for (const auto& e : fs::directory_iterator(fixtures)) {
    const auto name = e.path().filename().string();
    if (e.path().extension() == ".csv" && name.find("_norm") == std::string::npos) raws.push_back(e.path());
  }
  std::sort(raws.begin(), raws.end());
  if (raws.empty()) throw Error(ErrorCode::EmptyInput, "no raw matrices in " + fixtures.string());
  const fs::path out_dir = dir / "fixtures";
  for (const auto& p : raws) {
    CouplingMatrix m = normalize(load_matrix_csv(p));
    const fs::path target = out_dir / matrix_file_name(m, MatrixContent::Normalized);
    fs::create_directories(out_dir);
    save_matrix_csv(target, m, MatrixContent::Normalized);
    std::cout << target.string();
    const fs::path expected = fixtures / matrix_file_name(m, MatrixContent::Normalized);
    if (fs::exists(expected)) {
      CouplingMatrix ref = load_matrix_csv(expected);
      std::size_t cells = 0, within = 0;
      double worst = 0.0;
      for (std::size_t r = 0; r < ref.a_ids.size(); ++r) {
        for (std::size_t c = 0; c < ref.b_ids.size(); ++c) {
          auto v = m.coupling(ref.a_ids[r], ref.b_ids[c]);
          if (!v) continue;
          const double d = std::abs(*v - ref.normalized(r, c));
          ++cells;
          within += d <= 0.005 + 1e-12;
          worst = std::max(worst, d);
        }
      }
      std::cout << ": " << within << "/" << cells << " cells within 0.005, max diff "
                << csv::format_fixed(worst, 5);
    }
    std::cout << '\n';
  }
  return 0;
}

int stage_couple_log(const Context& ctx) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg);
  const auto set = build_all_couplings(load_index(cfg), cfg.coupling);
  write_text(dir / "couplings.json", coupling_set_to_json(set));
  fs::create_directories(dir / "matrices");
  for (const auto& m : set.matrices) {
    save_matrix_csv(dir / "matrices" / matrix_file_name(m, MatrixContent::Raw), m, MatrixContent::Raw);
    save_matrix_csv(dir / "matrices" / matrix_file_name(m, MatrixContent::Normalized), m,
                    MatrixContent::Normalized);
  }
  for (const auto& s : set.skipped) std::cerr << "skipped " << s.type.name() << ": " << s.reason << '\n';
  std::cout << set.matrices.size() << " coupling matrices\n";
  return 0;
}

int stage_couple(const Context& ctx, const std::string& fixtures) {
  const auto cfg = ctx.config();
  if (!fixtures.empty() || (!cfg.fixtures_path.empty() && ctx.log.empty())) {
    return couple_fixtures(fixtures.empty() ? fs::path(cfg.fixtures_path) : fs::path(fixtures),
                           work_dir(cfg));
  }
  return stage_couple_log(ctx);
}

int stage_bin(const Context& ctx) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg);
  Warnings ws;
  const auto model = build_risk_model(load_couplings(cfg), cfg.binning, cfg.features, &ws);
  report_warnings(ws);
  auto out = open_out(dir / "binnings.csv");
  out << "matrix,alpha,mean,stdev,t_high,t_med,degenerate\n";
  for (const auto& [key, b] : model.binnings) {
    out << key << ',' << csv::format_double(cfg.binning.alpha_for(key)) << ','
        << csv::format_double(b.mean) << ',' << csv::format_double(b.stdev) << ','
        << csv::format_double(b.t_high) << ',' << csv::format_double(b.t_med) << ','
        << (b.degenerate ? "true" : "false") << '\n';
  }
  auto cells = open_out(dir / "cell_levels.csv");
  cells << "matrix,a,b,value,level\n";
  for (const auto& m : model.couplings.matrices) {
    const Binning* b = model.binning_for(m.type, m.flavor);
    if (!b) continue;
    const auto key = binning_key(m.type, m.flavor);
    for (std::size_t r = 0; r < m.a_ids.size(); ++r) {
      for (std::size_t c = 0; c < m.b_ids.size(); ++c) {
        if (!m.defined(r, c)) continue;
        const double v = m.normalized(r, c);
        cells << key << ',' << m.a_ids[r].token() << ',' << m.b_ids[c].token() << ','
              << csv::format_double(v) << ',' << to_string(b->classify(v)) << '\n';
      }
    }
  }
  std::cout << model.binnings.size() << " binnings\n";
  return 0;
}

int stage_featurize(const Context& ctx) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg);
  const auto index = load_index(cfg);
  Warnings ws;
  const auto model = build_risk_model(load_couplings(cfg), cfg.binning, cfg.features, &ws);
  const auto samples = event_samples(index, cfg.samples);
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "log produced no samples");
  for (FeatureFlavor f : kAllFeatureFlavors) {
    const auto vectors = featurize_dataset(index, samples, model, f, &ws);
    auto out = open_out(dir / ("features_" + flavor_name(f) + ".csv"));
    write_features_csv(out, vectors, model.feature_names(f));
  }
  report_warnings(ws);
  std::cout << samples.size() << " samples x " << kAllFeatureFlavors.size() << " flavors\n";
  return 0;
}

std::size_t k_or_default(std::size_t configured, const DbscanResult& d, std::size_t n) {
  std::size_t k = configured ? configured : std::max<std::size_t>(1, d.assignment.cluster_count);
  return std::min(k, n);
}

int stage_cluster(const Context& ctx, bool k_dist) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg);
  for (FeatureFlavor f : kAllFeatureFlavors) {
    const auto vectors = load_features(dir, f);
    const auto pts = feature_rows(vectors);
    const auto db = fit_dbscan(pts, cfg.clustering.dbscan);
    const auto ag = agglomerative(pts, k_or_default(cfg.clustering.agglomerative.k, db, pts.size()),
                                  cfg.clustering.agglomerative.linkage);
    const auto gm = gmm_em(pts, k_or_default(cfg.clustering.gmm.k, db, pts.size()), cfg.clustering.gmm);
    report_warnings(gm.warnings);
    const std::string name = flavor_name(f);
    auto out = open_out(dir / ("clusters_" + name + ".csv"));
    out << "sample_id,dbscan,agglomerative,gmm\n";
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      out << vectors[i].sample << ',' << db.assignment.labels[i] << ',' << ag.labels[i] << ','
          << gm.assignment.labels[i] << '\n';
    }
    auto ll = open_out(dir / ("gmm_loglik_" + name + ".csv"));
    ll << "iteration,log_likelihood\n";
    for (std::size_t i = 0; i < gm.log_likelihood.size(); ++i) {
      ll << i << ',' << csv::format_double(gm.log_likelihood[i]) << '\n';
    }
    if (k_dist) {
      auto kd = open_out(dir / ("k_distance_" + name + ".csv"));
      kd << "rank,distance\n";
      const auto d = k_distance(pts, cfg.clustering.dbscan.min_pts);
      for (std::size_t i = 0; i < d.size(); ++i) kd << i << ',' << csv::format_double(d[i]) << '\n';
    }
    std::cout << name << ": dbscan " << db.assignment.cluster_count << " clusters, agglomerative "
              << ag.cluster_count << ", gmm " << gm.assignment.cluster_count << '\n';
  }
  return 0;
}

int stage_label(const Context& ctx) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg);
  auto risk = open_out(dir / "dataset_risk.csv");
  risk << "flavor,risk_value,risk_level\n";
  for (FeatureFlavor f : kAllFeatureFlavors) {
    const std::string name = flavor_name(f);
    const auto vectors = load_features(dir, f);
    const fs::path cpath = dir / ("clusters_" + name + ".csv");
    auto rows = load_rows(cpath);
    if (rows.size() != vectors.size() + 1) {
      throw Error(ErrorCode::LengthMismatch, cpath.string() + " does not match the feature file");
    }
    std::map<Algorithm, std::vector<int>> labels;
    for (Algorithm a : {Algorithm::Dbscan, Algorithm::Agglomerative, Algorithm::Gmm}) {
      const auto col = column(rows.front(), lower(to_string(a)), cpath);
      for (std::size_t i = 1; i < rows.size(); ++i) labels[a].push_back(to_int(rows[i][col]));
      const auto assignment = assignment_from(labels[a], a);
      const auto summaries = summarize_clusters(assignment, vectors);
      auto out = open_out(dir / ("summary_" + name + "_" + lower(to_string(a)) + ".csv"));
      write_cluster_report(out, summaries);
      if (a != Algorithm::Dbscan) continue;
      const auto decisions = decide_samples(assignment, summaries, vectors);
      std::map<int, ClusterLevel> level;
      for (const auto& s : summaries) level[s.cluster] = s.level;
      auto lab = open_out(dir / ("labels_" + name + ".csv"));
      lab << "sample_id,cluster,level,decision\n";
      for (std::size_t i = 0; i < vectors.size(); ++i) {
        const int c = assignment.labels[i];
        lab << vectors[i].sample << ',' << c << ',' << to_string(level.at(c)) << ','
            << to_string(decisions[i]) << '\n';
      }
    }
    const auto dr = dataset_risk(vectors);
    risk << name << ',' << csv::format_fixed(dr.value, 2) << ',' << to_string(dr.level) << '\n';
    std::cout << name << ": dataset risk " << csv::format_fixed(dr.value, 2) << " ("
              << to_string(dr.level) << ")\n";
  }
  return 0;
}

int stage_decide(const Context& ctx) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg);
  const auto index = load_index(cfg);
  const auto injected = load_injected(dir / "annotations.jsonl");
  for (FeatureFlavor f : kAllFeatureFlavors) {
    const auto labels = load_labels(dir, f);
    auto out = open_out(dir / ("read_decisions_" + flavor_name(f) + ".csv"));
    out << "record,time,device,document,location,event,cluster,level,decision\n";
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& r : index.reads()) {
      auto it = labels.find(r.event);
      if (it == labels.end()) {
        throw Error(ErrorCode::UnknownFactor, "read at record " + std::to_string(r.record_index) +
                                                  " has no labelled sample (event " +
                                                  std::to_string(r.event) + ")");
      }
      const auto& l = it->second;
      ++counts[static_cast<int>(l.decision)];
      out << r.record_index << ',' << format_timestamp(r.time) << ',' << r.device.token() << ','
          << r.document.token() << ',' << r.location.token() << ',' << r.event << ',' << l.cluster
          << ',' << to_string(l.level) << ',' << to_string(l.decision) << '\n';
    }
    std::cout << flavor_name(f) << ": " << counts[0] << " Permit, " << counts[1] << " Deny, "
              << counts[2] << " Escalate";
    if (!injected.empty()) {
      std::size_t caught = 0;
      for (const auto& r : index.reads()) {
        caught += injected.count(r.record_index) && labels.at(r.event).decision != Decision::Permit;
      }
      std::cout << " (" << caught << " injected reads not permitted)";
    }
    std::cout << '\n';
  }
  return 0;
}

int stage_policy(const Context& ctx) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg);
  const auto index = load_index(cfg);
  Warnings ws;
  TrainedModel model;
  model.config = cfg;
  model.risk = build_risk_model(load_couplings(cfg), cfg.binning, cfg.features, &ws);
  model.policy = build_policy_model(model.risk.couplings, index, cfg.binning, cfg.weights,
                                    cfg.traffic_alpha, cfg.traffic_direction, &ws);
  report_warnings(ws);

  std::vector<PolicyRiskBreakdown> reads;
  std::vector<double> overall;
  for (const auto& r : index.reads()) {
    reads.push_back(evaluate_policy(index.event(r.event), r.device, r.document, r.time, model.policy));
    overall.push_back(reads.back().r_overall);
  }
  const auto rasa = load_read_decisions(dir, cfg.rasa_flavor);
  if (rasa.decisions.size() != reads.size()) {
    throw Error(ErrorCode::LengthMismatch, "read decisions do not match the log");
  }
  ThresholdChoice theta{cfg.weights.permit_threshold, 0.0};
  if (cfg.tune_theta && !overall.empty()) {
    theta = tune_threshold(overall, rasa.decisions, cfg.theta_grid.empty() ? default_theta_grid() : cfg.theta_grid);
    model.policy.weights.permit_threshold = theta.theta;
  }
  model.config.weights = model.policy.weights;

  auto out = open_out(dir / "policy_reads.csv");
  out << "record,r_devloc,r_traffic,r_coexist,r_docloc,r_doctime,r_dev,r_env,r_act,r_overall,decision\n";
  for (std::size_t i = 0; i < reads.size(); ++i) {
    auto& b = reads[i];
    apply_weights(b, model.policy.weights);
    out << index.reads()[i].record_index << ',' << b.r_devloc << ',' << b.r_traffic << ','
        << b.r_coexist << ',' << b.r_docloc << ',' << b.r_doctime << ',' << csv::format_double(b.r_dev)
        << ',' << csv::format_double(b.r_env) << ',' << csv::format_double(b.r_act) << ','
        << csv::format_double(b.r_overall) << ',' << to_string(b.decision) << '\n';
  }
  auto th = open_out(dir / "theta.csv");
  th << "theta,tuned,consistency\n"
     << csv::format_double(theta.theta) << ',' << (cfg.tune_theta ? "true" : "false") << ','
     << format_percent(theta.consistency) << '\n';

  // The decision model: DBSCAN refit on the RASA flavor's exported features.
  const auto vectors = load_features(dir, cfg.rasa_flavor);
  const auto db = fit_dbscan(feature_rows(vectors), cfg.clustering.dbscan);
  model.dbscan = db.model;
  for (const auto& s : summarize_clusters(db.assignment, vectors)) {
    if (s.cluster >= 0) model.cluster_levels[s.cluster] = s.level;
  }
  save_trained_model(dir / "model.json", model);
  std::cout << "theta " << csv::format_double(theta.theta) << " (consistency "
            << format_percent(theta.consistency) << "), model written to "
            << (dir / "model.json").string() << '\n';
  return 0;
}

int stage_compare(const Context& ctx) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg);
  const fs::path ppath = dir / "policy_reads.csv";
  auto rows = load_rows(ppath);
  const auto cd = column(rows.front(), "decision", ppath);
  std::vector<Decision> policy;
  for (std::size_t i = 1; i < rows.size(); ++i) policy.push_back(decision_from_string(rows[i][cd]));
  for (FeatureFlavor f : kAllFeatureFlavors) {
    const auto rasa = load_read_decisions(dir, f);
    const auto table = compare_consistency(rasa.decisions, policy, rasa.levels);
    const std::string name = flavor_name(f);
    {
      auto out = open_out(dir / ("consistency_" + name + ".csv"));
      write_consistency_csv(out, table);
    }
    auto detail = open_out(dir / ("consistency_detail_" + name + ".csv"));
    write_consistency_detail_csv(detail, table);
    std::cout << name << ": overall consistency "
              << (table.overall() ? format_percent(*table.overall()) : std::string("n/a"))
              << ", " << table.escalated << " escalated\n";
  }
  return 0;
}

struct TreeOutcome {
  double train = 0.0;
  double test = 0.0;
  std::size_t train_n = 0;
  std::size_t test_n = 0;
  std::size_t depth = 0;
  std::size_t leaves = 0;
};

TreeOutcome train_and_export(const PipelineConfig& cfg, const PipelineResult& train,
                             const PipelineResult& test, const fs::path& dir) {
  const auto data = cross_dataset(train, test, cfg);
  const auto tree = train_tree(data.train_x, data.train_y, cfg.tree);
  const auto names = train.model.feature_names(cfg.tree_flavor);
  write_text(dir / "tree.txt", export_tree_text(tree, names));
  write_text(dir / "tree.json", export_tree_json(tree, names));
  TreeOutcome o{accuracy(tree, data.train_x, data.train_y),
                cross_dataset_accuracy(tree, data.test_x, data.test_y),
                data.train_x.size(), data.test_x.size(), tree.depth(), tree.leaf_count()};
  auto out = open_out(dir / "tree_accuracy.csv");
  out << "flavor,labels,train_samples,train_accuracy,test_samples,test_accuracy,depth,leaves\n"
      << flavor_name(cfg.tree_flavor) << ',' << to_string(cfg.labels) << ',' << o.train_n << ','
      << csv::format_fixed(o.train, 6) << ',' << o.test_n << ',' << csv::format_fixed(o.test, 6)
      << ',' << o.depth << ',' << o.leaves << '\n';
  return o;
}

fs::path test_log_path(const PipelineConfig& cfg, const std::string& test_log) {
  return test_log.empty() ? work_dir(cfg) / "log2.jsonl" : fs::path(test_log);
}

int stage_train_tree(const Context& ctx, const std::string& test_log) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg);
  const auto train = run_pipeline(load_any_log(log_path(cfg)), cfg);
  const auto test = run_pipeline(load_any_log(test_log_path(cfg, test_log)), cfg);
  const auto o = train_and_export(cfg, train, test, dir);
  std::cout << "training accuracy " << format_percent(100.0 * o.train) << ", dataset 2 accuracy "
            << format_percent(100.0 * o.test) << " (depth " << o.depth << ", " << o.leaves
            << " leaves)\n";
  return 0;
}

int stage_report(const Context& ctx, const std::string& test_log) {
  const auto cfg = ctx.config();
  const fs::path dir = work_dir(cfg) / "report";
  fs::create_directories(dir);
  const auto result = run_pipeline(load_any_log(log_path(cfg)), cfg);
  report_warnings(result.warnings);
  const auto injected = load_injected(work_dir(cfg) / "annotations.jsonl");

  std::ostringstream text;
  text << "samples: " << result.samples.size() << "\nreads: " << result.index.reads().size()
       << "\ntheta: " << csv::format_double(result.theta.theta) << " (consistency "
       << format_percent(result.theta.consistency) << ")\n";
  auto risk = open_out(dir / "dataset_risk.csv");
  risk << "flavor,risk_value,risk_level\n";
  for (const auto& run : result.runs) {
    const std::string name = flavor_name(run.flavor);
    {
      auto out = open_out(dir / ("clusters_" + name + "_dbscan.csv"));
      write_cluster_report(out, run.summaries);
    }
    {
      auto out = open_out(dir / ("clusters_" + name + "_agglomerative.csv"));
      write_cluster_report(out, run.agglomerative_summaries);
    }
    {
      auto out = open_out(dir / ("clusters_" + name + "_gmm.csv"));
      write_cluster_report(out, run.gmm_summaries);
    }
    {
      auto out = open_out(dir / ("consistency_" + name + ".csv"));
      write_consistency_csv(out, run.consistency);
    }
    {
      auto out = open_out(dir / ("consistency_detail_" + name + ".csv"));
      write_consistency_detail_csv(out, run.consistency);
    }
    {
      auto out = open_out(dir / ("features_" + name + ".csv"));
      write_features_csv(out, run.vectors, result.model.feature_names(run.flavor));
    }
    {
      auto out = open_out(dir / ("labels_" + name + ".csv"));
      out << "sample_id,dbscan,agglomerative,gmm,decision\n";
      for (std::size_t i = 0; i < run.vectors.size(); ++i) {
        out << run.vectors[i].sample << ',' << run.dbscan.assignment.labels[i] << ','
            << run.agglomerative.labels[i] << ',' << run.gmm.assignment.labels[i] << ','
            << to_string(run.decisions[i]) << '\n';
      }
    }
    risk << name << ',' << csv::format_fixed(run.risk.value, 2) << ',' << to_string(run.risk.level) << '\n';

    std::size_t permit = 0, deny = 0, escalate = 0, caught = 0, benign = 0, benign_permit = 0;
    for (std::size_t i = 0; i < run.read_decisions.size(); ++i) {
      const Decision d = run.read_decisions[i];
      permit += d == Decision::Permit;
      deny += d == Decision::Deny;
      escalate += d == Decision::Escalate;
      if (injected.count(result.index.reads()[i].record_index)) {
        caught += d != Decision::Permit;
      } else {
        ++benign;
        benign_permit += d == Decision::Permit;
      }
    }
    text << "\n[" << name << "]\nDBSCAN clusters: " << run.dbscan.assignment.cluster_count
         << "\ndataset risk: " << csv::format_fixed(run.risk.value, 2) << " ("
         << to_string(run.risk.level) << ")\nread decisions: " << permit << " Permit, " << deny
         << " Deny, " << escalate << " Escalate\nconsistency: "
         << (run.consistency.overall() ? format_percent(*run.consistency.overall()) : std::string("n/a"))
         << '\n';
    if (!injected.empty()) {
      text << "injected reads not permitted: " << caught << '/' << injected.size()
           << "\nbenign reads permitted: " << benign_permit << '/' << benign << '\n';
    }
  }
  const fs::path log2 = test_log_path(cfg, test_log);
  if (fs::exists(log2)) {
    const auto test = run_pipeline(load_any_log(log2), cfg);
    const auto o = train_and_export(cfg, result, test, dir);
    text << "\n[decision tree]\ntraining accuracy: " << format_percent(100.0 * o.train)
         << "\ndataset 2 accuracy: " << format_percent(100.0 * o.test) << "\n";
  }
  write_text(dir / "summary.txt", text.str());
  std::cout << text.str() << "report written to " << dir.string() << '\n';
  return 0;
}

int stage_run(const Context& ctx, const std::string& test_log) {
  for (auto stage : {stage_events, stage_couple_log, stage_bin, stage_featurize}) {
    if (int rc = stage(ctx)) return rc;
  }
  if (int rc = stage_cluster(ctx, false)) return rc;
  for (auto stage : {stage_label, stage_decide, stage_policy, stage_compare}) {
    if (int rc = stage(ctx)) return rc;
  }
  return stage_report(ctx, test_log);
}

int stage_serve(const Context& ctx, const std::string& model_path) {
  const auto cfg = ctx.config();
  const fs::path path = model_path.empty() ? work_dir(cfg) / "model.json" : fs::path(model_path);
  DecisionService service(load_trained_model(path));
  std::cerr << "serving decisions from " << path.string() << " (one JSON request per line)\n";
  const auto n = service.serve(std::cin, std::cout);
  std::cerr << n << " requests handled\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctxrisk: risk-aware access-control inference over cyber-physical action logs"};
  app.require_subcommand(1);
  Context ctx;
  std::string stage_name;

  auto common = [&](CLI::App* sub, bool with_log) {
    sub->add_option("-c,--config", ctx.config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("-w,--work", ctx.work, "Artifact directory (env CTXRISK_OUT, default out)");
    if (with_log) sub->add_option("-l,--log", ctx.log, "Action log (env CTXRISK_LOG, default <work>/log.jsonl)");
    sub->callback([&, sub] { stage_name = sub->get_name(); });
  };

  SimulateOptions sim;
  auto* s_sim = app.add_subcommand("simulate", "Generate a clinical action log with injected anomalies");
  common(s_sim, false);
  s_sim->add_option("--scenario", sim.scenario, "Scenario config (JSON); default is the bundled scenario")
      ->check(CLI::ExistingFile);
  s_sim->add_option("--seed", sim.seed, "Override the scenario seed");
  s_sim->add_option("--days", sim.days, "Override the simulated duration in days");
  s_sim->add_flag("--pair", sim.pair, "Also write a perturbed second dataset (log2.jsonl)");
  s_sim->add_option("--perturbation", sim.perturbation, "Schedule perturbation for --pair")
      ->check(CLI::Range(0.0, 0.99));

  std::string ingest_input, ingest_name = "log.jsonl";
  bool lenient = false;
  auto* s_ingest = app.add_subcommand("ingest", "Parse, validate and sort a JSON Lines or CSV log");
  common(s_ingest, false);
  s_ingest->add_option("input", ingest_input, "Log to ingest (.jsonl or .csv)");
  s_ingest->add_flag("--lenient", lenient, "Ignore unknown fields");
  s_ingest->add_option("--as", ingest_name, "File name inside the work directory");

  auto* s_events = app.add_subcommand("events", "Reconstruct events and read observations");
  common(s_events, true);

  std::string fixtures;
  auto* s_couple = app.add_subcommand("couple", "Build coupling matrices, or normalize raw fixture matrices");
  common(s_couple, true);
  s_couple->add_option("--fixtures", fixtures, "Directory of raw matrix CSVs (env CTXRISK_FIXTURES)");

  auto* s_bin = app.add_subcommand("bin", "Risk thresholds and per-cell levels for every matrix");
  common(s_bin, false);
  auto* s_feat = app.add_subcommand("featurize", "Per-event coupling features in all flavors");
  common(s_feat, true);
  bool k_dist = false;
  auto* s_cluster = app.add_subcommand("cluster", "DBSCAN, agglomerative and GMM clustering");
  common(s_cluster, false);
  s_cluster->add_flag("--k-distance", k_dist, "Also export the sorted k-distance curve");
  auto* s_label = app.add_subcommand("label", "Cluster risk values, levels and sample decisions");
  common(s_label, false);
  auto* s_decide = app.add_subcommand("decide", "Per-read decisions from the cluster labels");
  common(s_decide, true);
  auto* s_policy = app.add_subcommand("policy", "Rule-based policy scores, threshold tuning and model");
  common(s_policy, true);
  auto* s_compare = app.add_subcommand("compare", "Consistency between cluster and policy decisions");
  common(s_compare, false);

  std::string test_log;
  auto* s_tree = app.add_subcommand("train-tree", "Decision tree on dataset 1, accuracy on dataset 2");
  common(s_tree, true);
  s_tree->add_option("--test-log", test_log, "Second dataset (default <work>/log2.jsonl)");
  auto* s_report = app.add_subcommand("report", "Cluster and consistency tables, dataset risk, summary");
  common(s_report, true);
  s_report->add_option("--test-log", test_log, "Second dataset for the tree section");
  auto* s_run = app.add_subcommand("run", "All stages from events to report");
  common(s_run, true);
  s_run->add_option("--test-log", test_log, "Second dataset for the tree section");

  std::string model_path;
  auto* s_serve = app.add_subcommand("serve", "Decision service: JSON requests on stdin, responses on stdout");
  common(s_serve, false);
  s_serve->add_option("--model", model_path, "Trained model (default <work>/model.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    if (stage_name == "simulate") return stage_simulate(ctx, sim);
    if (stage_name == "ingest") return stage_ingest(ctx, ingest_input, lenient, ingest_name);
    if (stage_name == "events") return stage_events(ctx);
    if (stage_name == "couple") return stage_couple(ctx, fixtures);
    if (stage_name == "bin") return stage_bin(ctx);
    if (stage_name == "featurize") return stage_featurize(ctx);
    if (stage_name == "cluster") return stage_cluster(ctx, k_dist);
    if (stage_name == "label") return stage_label(ctx);
    if (stage_name == "decide") return stage_decide(ctx);
    if (stage_name == "policy") return stage_policy(ctx);
    if (stage_name == "compare") return stage_compare(ctx);
    if (stage_name == "train-tree") return stage_train_tree(ctx, test_log);
    if (stage_name == "report") return stage_report(ctx, test_log);
    if (stage_name == "run") return stage_run(ctx, test_log);
    if (stage_name == "serve") return stage_serve(ctx, model_path);
  } catch (const Error& e) {
    std::cerr << "ctxrisk " << stage_name << ": " << to_string(e.code()) << ": " << e.what();
    if (e.line()) std::cerr << " (line " << e.line() << ")";
    std::cerr << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ctxrisk " << stage_name << ": " << e.what() << '\n';
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
