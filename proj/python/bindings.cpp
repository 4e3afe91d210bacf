#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ctxrisk/clustering.hpp"
#include "ctxrisk/coupling.hpp"
#include "ctxrisk/pipeline.hpp"
#include "ctxrisk/simulator.hpp"

namespace py = pybind11;
using namespace ctxrisk;

namespace {

PipelineConfig config_or_default(const std::optional<std::string>& text) {
  return text ? pipeline_config_from_json(*text) : PipelineConfig{};
}

ActionLog log_from_text(const std::string& text, const std::string& format) {
  std::istringstream in(text);
  return read_log(in, format == "csv" ? LogFormat::Csv : LogFormat::JsonLines).log;
}

std::string log_to_text(const ActionLog& log) {
  std::ostringstream out;
  write_log(out, log, LogFormat::JsonLines);
  return out.str();
}

py::dict simulate(const std::optional<std::string>& scenario, std::optional<std::uint64_t> seed,
                  bool pair) {
  ScenarioConfig cfg = scenario ? scenario_from_json(*scenario) : ScenarioConfig::default_scenario();
  if (seed) cfg.seed = *seed;
  auto pack = [](const SimulationResult& sim) {
    std::ostringstream ann;
    write_annotations(ann, sim);
    py::dict d;
    d["log"] = log_to_text(sim.log);
    d["annotations"] = ann.str();
    d["records"] = sim.log.size();
    return d;
  };
  if (!pair) return pack(generate(cfg));
  auto [a, b] = make_pair(cfg);
  py::dict d = pack(a);
  d["second"] = pack(b);
  return d;
}

py::dict summarize(const PipelineResult& r, const PipelineConfig& cfg) {
  py::dict out;
  out["samples"] = r.samples.size();
  out["reads"] = r.index.reads().size();
  out["theta"] = r.theta.theta;
  out["rasa_flavor"] = std::string(to_string(cfg.rasa_flavor));
  py::dict flavors;
  for (const auto& run : r.runs) {
    py::dict f;
    py::list clusters;
    for (const auto& s : run.summaries) {
      py::dict c;
      c["index"] = s.cluster;
      c["risk_value"] = s.crv;
      c["risk_level"] = std::string(to_string(s.level));
      c["samples"] = s.samples;
      clusters.append(c);
    }
    f["clusters"] = clusters;
    f["dataset_risk"] = run.risk.value;
    f["dataset_level"] = std::string(to_string(run.risk.level));
    std::vector<std::string> decisions;
    for (Decision d : run.read_decisions) decisions.emplace_back(to_string(d));
    f["read_decisions"] = decisions;
    f["consistency"] = run.consistency.overall() ? py::cast(*run.consistency.overall()) : py::none();
    std::ostringstream table;
    write_consistency_csv(table, run.consistency);
    f["consistency_table"] = table.str();
    flavors[py::str(std::string(to_string(run.flavor)))] = f;
  }
  out["flavors"] = flavors;
  std::vector<std::size_t> records;
  for (const auto& read : r.index.reads()) records.push_back(read.record_index);
  out["read_records"] = records;
  return out;
}

}  // namespace

PYBIND11_MODULE(_ctxrisk, m) {
  m.doc() = "Risk-aware access-control inference over cyber-physical action logs";

  static py::exception<Error> error(m, "Error", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.code())) + ": " + e.what()).c_str());
    }
  });

  m.def("default_config", [] { return pipeline_config_to_json(PipelineConfig{}); },
        "Default pipeline config as JSON text");
  m.def("default_scenario", [] { return scenario_to_json(ScenarioConfig::default_scenario()); },
        "Bundled scenario config as JSON text");

  m.def("simulate", &simulate, py::arg("scenario") = py::none(), py::arg("seed") = py::none(),
        py::arg("pair") = false,
        "Generate a JSON Lines log and annotation sidecar; with pair=True also a perturbed second dataset");

  m.def("parse_record",
        [](const std::string& line, const std::string& format) {
          auto rec = parse_record(line, format == "csv" ? LogFormat::Csv : LogFormat::JsonLines);
          return serialize_record(rec, LogFormat::JsonLines);
        },
        py::arg("line"), py::arg("format") = "jsonl", "Validate one record; returns its canonical JSON form");

  m.def("level_for_crv", [](double crv) { return std::string(to_string(level_for_crv(crv))); },
        py::arg("crv"));

  m.def("normalize",
        [](const std::vector<std::vector<double>>& raw) {
          CouplingMatrix cm;
          cm.type = {FactorKind::Person, FactorKind::Document};
          const std::size_t rows = raw.size(), cols = rows ? raw[0].size() : 0;
          cm.raw = DenseMatrix(rows, cols);
          for (std::size_t r = 0; r < rows; ++r) {
            if (raw[r].size() != cols) throw Error(ErrorCode::DimensionMismatch, "ragged matrix");
            for (std::size_t c = 0; c < cols; ++c) cm.raw(r, c) = raw[r][c];
            cm.a_ids.push_back({FactorKind::Person, "a" + std::to_string(r)});
          }
          for (std::size_t c = 0; c < cols; ++c) cm.b_ids.push_back({FactorKind::Document, "b" + std::to_string(c)});
          cm = normalize(cm);
          std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) out[r][c] = cm.normalized(r, c);
          }
          return out;
        },
        py::arg("raw"), "Row-wise coupling normalization of a raw matrix (rows are the A side)");

  m.def("run_pipeline",
        [](const std::string& log_text, const std::optional<std::string>& config, const std::string& format) {
          const auto cfg = config_or_default(config);
          const auto log = log_from_text(log_text, format);
          return summarize(run_pipeline(log, cfg), cfg);
        },
        py::arg("log"), py::arg("config") = py::none(), py::arg("format") = "jsonl",
        "Full pipeline on log text; returns cluster tables, decisions and consistency");

  m.def("train_model",
        [](const std::string& log_text, const std::optional<std::string>& config) {
          const auto cfg = config_or_default(config);
          const auto result = run_pipeline(log_from_text(log_text, "jsonl"), cfg);
          return trained_model_to_json(make_trained_model(result, cfg));
        },
        py::arg("log"), py::arg("config") = py::none(), "Trained model artifact as JSON text");

  m.def("tree_accuracy",
        [](const std::string& train_log, const std::string& test_log, const std::optional<std::string>& config) {
          const auto cfg = config_or_default(config);
          const auto a = run_pipeline(log_from_text(train_log, "jsonl"), cfg);
          const auto b = run_pipeline(log_from_text(test_log, "jsonl"), cfg);
          const auto data = cross_dataset(a, b, cfg);
          const auto tree = train_tree(data.train_x, data.train_y, cfg.tree);
          return std::make_pair(accuracy(tree, data.train_x, data.train_y),
                                cross_dataset_accuracy(tree, data.test_x, data.test_y));
        },
        py::arg("train_log"), py::arg("test_log"), py::arg("config") = py::none(),
        "(training accuracy, second-dataset accuracy) of the decision tree");

  py::class_<DecisionService>(m, "DecisionService")
      .def(py::init([](const std::string& model_json) {
             return DecisionService(trained_model_from_json(model_json));
           }),
           py::arg("model"))
      .def("handle", &DecisionService::handle, py::arg("line"),
           "Answer one request line with one JSON response line");
}
