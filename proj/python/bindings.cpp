#include "batchcausal/causal.hpp"
#include "batchcausal/datasets.hpp"
#include "batchcausal/instrumentation.hpp"
#include "batchcausal/records.hpp"
#include "batchcausal/report.hpp"
#include "batchcausal/runner.hpp"
#include "batchcausal/stats.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
namespace bc = batchcausal;

namespace {

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict dataset_dict(const bc::DatasetBundle& b) {
  py::dict d;
  d["features"] = b.features;
  d["labels"] = b.labels;
  d["clean_labels"] = b.clean_labels;
  d["num_classes"] = b.num_classes;
  d["train"] = b.splits.train;
  d["val"] = b.splits.val;
  d["test"] = b.splits.test;
  d["provenance"] = b.provenance;
  d["digest"] = b.digest;
  if (b.adjacency) d["adjacency"] = bc::Matrix(*b.adjacency);
  return d;
}

bc::CausalSettings settings(int bins, double alpha, const std::string& mode, double treat, double control) {
  bc::CausalSettings s;
  s.bins = bins;
  s.alpha = alpha;
  s.mode = bc::engine_mode_from_string(mode);
  s.treat = treat;
  s.control = control;
  return s;
}

py::dict analysis_dict(const bc::RecordAnalysis& a) {
  py::dict d;
  d["observations"] = a.observations;
  d["constant_outcome"] = a.constant_outcome;
  d["note"] = a.note;
  d["ate_hypergraph"] = a.ate_hypergraph;
  d["ate_algorithm1"] = a.ate_algorithm1;
  const auto results = [](const std::vector<bc::InterventionResult>& rs) {
    py::list out;
    for (const auto& r : rs) out.append(to_python(bc::to_json(r)));
    return out;
  };
  d["hypergraph"] = results(a.hypergraph_results);
  d["algorithm1"] = results(a.algorithm1_results);
  const auto& s = a.significance;
  py::dict sig;
  if (s.welch) sig["welch"] = py::dict(py::arg("t") = s.welch->t, py::arg("df") = s.welch->df, py::arg("p") = s.welch->p);
  if (s.wilcoxon) sig["wilcoxon"] = py::dict(py::arg("w_plus") = s.wilcoxon->w_plus, py::arg("p") = s.wilcoxon->p);
  sig["note"] = s.note;
  d["significance"] = sig;
  if (a.causal) d["bundle"] = to_python(bc::to_json(*a.causal));
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Batch-size sweeps, instrumentation and causal analysis";

  py::register_exception<bc::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<bc::RecordFormatError>(m, "RecordFormatError", PyExc_ValueError);
  py::register_exception<bc::DataFormatError>(m, "DataFormatError", PyExc_ValueError);

  m.def(
      "make_blobs",
      [](int n, int dim, int classes, double separation, double label_noise, std::uint64_t seed) {
        bc::BlobsParams p;
        p.n = n;
        p.dim = dim;
        p.classes = classes;
        p.separation = separation;
        p.label_noise = label_noise;
        p.seed = seed;
        return dataset_dict(bc::make_blobs(p));
      },
      py::arg("n") = 1000, py::arg("dim") = 2, py::arg("classes") = 2, py::arg("separation") = 4.0,
      py::arg("label_noise") = 0.0, py::arg("seed") = 0);

  m.def(
      "make_sbm_graph",
      [](int n, int classes, double p_in, double p_out, int dim, double feature_signal, std::uint64_t seed) {
        bc::SbmParams p;
        p.n = n;
        p.classes = classes;
        p.p_in = p_in;
        p.p_out = p_out;
        p.dim = dim;
        p.feature_signal = feature_signal;
        p.seed = seed;
        return dataset_dict(bc::make_sbm_graph(p));
      },
      py::arg("n") = 600, py::arg("classes") = 3, py::arg("p_in") = 0.05, py::arg("p_out") = 0.005,
      py::arg("dim") = 16, py::arg("feature_signal") = 1.0, py::arg("seed") = 0);

  m.def("gradient_noise", &bc::gradient_noise, py::arg("per_sample_grads"), py::arg("batch_size"),
        "Per-coordinate variance of per-sample gradients, averaged and divided by B.");

  m.def(
      "top_eigenvalue",
      [](const bc::Matrix& a, int max_iters, double tol, std::uint64_t seed) {
        if (a.rows() != a.cols()) throw std::invalid_argument("matrix must be square");
        bc::PowerIterationOptions o;
        o.max_iters = max_iters;
        o.tol = tol;
        o.seed = seed;
        const auto r = bc::sharpness_lambda_max([&](const bc::Vector& v) -> bc::Vector { return a * v; }, a.rows(), o);
        return py::dict(py::arg("lambda_max") = r.lambda_max, py::arg("iters") = r.iters_used,
                        py::arg("converged") = r.converged);
      },
      py::arg("matrix"), py::arg("max_iters") = 200, py::arg("tol") = 1e-6, py::arg("seed") = 0x5eed,
      "Power iteration on a symmetric matrix.");

  m.def("complexity", &bc::complexity, py::arg("sharpness"), py::arg("grad_noise"));

  m.def(
      "summarize",
      [](const std::vector<double>& v) {
        const auto s = bc::summarize(v);
        return py::dict(py::arg("mean") = s.mean, py::arg("std") = s.stddev, py::arg("n") = s.n);
      },
      py::arg("values"));

  m.def(
      "welch_t_test",
      [](const std::vector<double>& xs, const std::vector<double>& ys) {
        const auto r = bc::welch_t_test(xs, ys);
        return py::dict(py::arg("t") = r.t, py::arg("df") = r.df, py::arg("p") = r.p,
                        py::arg("degenerate") = r.degenerate);
      },
      py::arg("xs"), py::arg("ys"));

  m.def(
      "wilcoxon_signed_rank",
      [](const std::vector<double>& diffs) {
        const auto r = bc::wilcoxon_signed_rank(diffs);
        return py::dict(py::arg("w_plus") = r.w_plus, py::arg("p") = r.p, py::arg("n") = r.n,
                        py::arg("method") = std::string(bc::to_string(r.method)));
      },
      py::arg("differences"));

  m.def(
      "parse_config", [](const std::filesystem::path& path) { return to_python(bc::to_json(bc::parse_config(path))); },
      py::arg("path"), "Validated sweep config with defaults applied.");

  m.def(
      "run_sweep",
      [](const py::object& config, std::optional<std::filesystem::path> out, std::optional<int> jobs) {
        bc::SweepConfig c = py::isinstance<py::dict>(config)
                                ? bc::sweep_config_from_json(from_python(config))
                                : bc::parse_config(config.cast<std::filesystem::path>());
        if (out) c.output_dir = *out;
        bc::SweepOptions o;
        o.parallelism = jobs;
        bc::SweepResult r;
        {
          py::gil_scoped_release release;
          r = bc::run_sweep(c, o);
        }
        return py::dict(py::arg("records_path") = r.records_path.string(), py::arg("new_runs") = r.new_runs,
                        py::arg("skipped") = r.skipped, py::arg("total") = r.records.size());
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("jobs") = py::none(),
      "Run a sweep from a config path or dict; resumes an existing record file.");

  m.def(
      "read_records",
      [](const std::filesystem::path& path) {
        py::list out;
        for (const auto& r : bc::read_record_file(path).records) out.append(to_python(bc::to_json(r)));
        return out;
      },
      py::arg("path"));

  m.def(
      "analyze",
      [](const std::filesystem::path& records, int bins, double alpha, const std::string& mode, double treat,
         double control) {
        auto file = bc::read_record_file(records);
        return analysis_dict(bc::analyze_records(file.records, settings(bins, alpha, mode, treat, control)));
      },
      py::arg("records"), py::arg("bins") = 3, py::arg("alpha") = 1.0, py::arg("mode") = "hypergraph",
      py::arg("treat") = 16.0, py::arg("control") = 512.0);

  m.def(
      "report",
      [](const std::filesystem::path& records, const std::filesystem::path& out, int bins, double alpha, double treat,
         double control) {
        auto file = bc::read_record_file(records);
        bc::ReportOptions o;
        o.record_source = records.string();
        const auto files = bc::emit_report(file.records, settings(bins, alpha, "hypergraph", treat, control), out, o);
        return files.text.string();
      },
      py::arg("records"), py::arg("out"), py::arg("bins") = 3, py::arg("alpha") = 1.0, py::arg("treat") = 16.0,
      py::arg("control") = 512.0);

  m.def(
      "ate_table",
      [](const std::vector<std::tuple<std::string, double, double>>& rows, std::optional<double> stated_mean) {
        std::vector<bc::AteRow> in;
        for (const auto& [name, t, c] : rows) in.push_back({name, t, c});
        const auto t = bc::tabulate_ate(in, stated_mean);
        return py::dict(py::arg("differences") = t.differences, py::arg("mean") = t.mean_difference,
                        py::arg("discrepant") = t.discrepant, py::arg("text") = bc::format_ate_table(t));
      },
      py::arg("rows"), py::arg("stated_mean") = py::none());
}
