#include "batchcausal/causal.hpp"
#include "batchcausal/datasets.hpp"
#include "batchcausal/records.hpp"
#include "batchcausal/report.hpp"
#include "batchcausal/runner.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

namespace bc = batchcausal;

namespace {

constexpr int kOk = 0;
constexpr int kValidationError = 1;
constexpr int kRuntimeError = 2;

struct CausalFlags {
  int bins = 3;
  double alpha = 1.0;
  std::string mode = "hypergraph";
  std::optional<double> treat;
  std::optional<double> control;
};

void add_causal_flags(CLI::App* cmd, CausalFlags& f) {
  cmd->add_option("--bins", f.bins, "Bins per continuous variable")->check(CLI::PositiveNumber);
  cmd->add_option("--alpha", f.alpha, "Laplace smoothing")->check(CLI::NonNegativeNumber);
  cmd->add_option("--mode", f.mode, "Primary engine mode")->check(CLI::IsMember({"hypergraph", "algorithm1"}));
  cmd->add_option("--treat", f.treat, "Treatment batch size");
  cmd->add_option("--control", f.control, "Control batch size");
}

// Unset levels default to 16 and 512 when present, else the smallest and
// largest unablated batch sizes in the records.
bc::CausalSettings settings_from(const CausalFlags& f, const std::vector<bc::RunRecord>& records) {
  bc::CausalSettings s;
  s.bins = f.bins;
  s.alpha = f.alpha;
  s.mode = bc::engine_mode_from_string(f.mode);
  std::set<int> levels;
  for (const auto& r : records)
    if (r.ablation.kind == bc::AblationKind::none) levels.insert(r.batch_size);
  const bool defaults_present = levels.count(static_cast<int>(s.treat)) && levels.count(static_cast<int>(s.control));
  if (!defaults_present && levels.size() >= 2) {
    s.treat = *levels.begin();
    s.control = *levels.rbegin();
  }
  if (f.treat) s.treat = *f.treat;
  if (f.control) s.control = *f.control;
  return s;
}

std::vector<bc::RunRecord> load_records(const std::string& path) {
  bc::RecordFile file = bc::read_record_file(path);
  if (file.truncated_tail) std::cerr << "warning: ignoring truncated final line in " << path << '\n';
  bc::sort_records(file.records);
  return std::move(file.records);
}

bool looks_like_records(const std::string& path) {
  if (std::filesystem::path(path).extension() == ".jsonl") return true;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      return j.is_object() && j.contains("schema_version");
    } catch (const nlohmann::json::exception&) {
      return false;
    }
  }
  return false;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batch-size sweeps, causal analysis and reports"};
  app.require_subcommand(1);

  std::string sweep_config;
  std::string sweep_out;
  int sweep_jobs = 0;
  bool sweep_quiet = false;
  auto* sweep = app.add_subcommand("sweep", "Run a batch-size sweep from a config file");
  sweep->add_option("config", sweep_config, "Sweep config (JSON)")->required();
  sweep->add_option("--out", sweep_out, "Output directory (default: config, then $BATCHCAUSAL_OUT)");
  sweep->add_option("--jobs", sweep_jobs, "Worker limit (overrides the config)")->check(CLI::PositiveNumber);
  sweep->add_flag("--quiet", sweep_quiet, "No per-run progress");

  std::string analyze_records;
  std::string analyze_bundle;
  CausalFlags analyze_flags;
  auto* analyze = app.add_subcommand("analyze", "Causal analysis and significance tests of a record file");
  analyze->add_option("records", analyze_records, "Record file (JSON Lines)")->required();
  add_causal_flags(analyze, analyze_flags);
  analyze->add_option("--bundle", analyze_bundle, "Write the analysis document (JSON) here");

  std::string report_records;
  std::string report_out;
  std::string report_ate_values;
  std::optional<double> report_stated_mean;
  CausalFlags report_flags;
  auto* report = app.add_subcommand("report", "Write CSV and text reports for a record file");
  report->add_option("records", report_records, "Record file (JSON Lines)")->required();
  report->add_option("--out", report_out, "Report directory (default: $BATCHCAUSAL_OUT/report)");
  add_causal_flags(report, report_flags);
  report->add_option("--ate-values", report_ate_values, "CSV dataset,treat,control of E[G|do(B)] values to tabulate");
  report->add_option("--stated-mean", report_stated_mean, "Published mean ATE to compare with the tabulated rows");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Validate a config or record file");
  validate->add_option("path", validate_path, "Config (JSON) or record file (JSON Lines)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidationError;
  }

  try {
    if (*sweep) {
      bc::SweepConfig config = bc::parse_config(sweep_config);
      if (!sweep_out.empty()) config.output_dir = sweep_out;
      bc::SweepOptions options;
      if (sweep_jobs > 0) options.parallelism = sweep_jobs;
      if (!sweep_quiet) {
        options.on_record = [](const bc::RunRecord& r, std::size_t done, std::size_t total) {
          std::cerr << "[" << done << "/" << total << "] " << r.run_id << " " << bc::to_string(r.status);
          if (r.final_measurement) std::cerr << " acc=" << r.final_measurement->gen.test_accuracy;
          std::cerr << '\n';
        };
      }
      const bc::SweepResult result = bc::run_sweep(config, options);
      if (result.quarantined) std::cerr << "quarantined a truncated final line\n";
      std::cout << "records: " << result.records_path.string() << "\nnew runs: " << result.new_runs
                << "\nskipped: " << result.skipped << "\ntotal: " << result.records.size() << '\n';
    } else if (*analyze) {
      const auto records = load_records(analyze_records);
      const auto settings = settings_from(analyze_flags, records);
      const bc::RecordAnalysis a = bc::analyze_records(records, settings);
      std::cout << bc::render_text_report(records, a);
      if (!analyze_bundle.empty()) {
        std::ofstream out(analyze_bundle);
        if (!out) throw std::runtime_error("cannot write " + analyze_bundle);
        nlohmann::json doc = {{"settings", bc::to_json(settings)}, {"note", a.note}};
        if (a.causal) doc["causal"] = bc::to_json(*a.causal);
        out << doc.dump(2) << '\n';
      }
    } else if (*report) {
      const auto records = load_records(report_records);
      std::filesystem::path out = report_out;
      if (out.empty()) out = bc::resolve_output_dir(bc::SweepConfig{}) / "report";
      bc::ReportOptions options;
      options.record_source = report_records;
      if (!report_ate_values.empty()) options.ate_values = report_ate_values;
      options.stated_ate_mean = report_stated_mean;
      const auto files = bc::emit_report(records, settings_from(report_flags, records), out, options);
      std::cout << "report: " << files.text.string() << '\n';
    } else if (*validate) {
      if (looks_like_records(validate_path)) {
        const bc::RecordFile file = bc::read_record_file(validate_path);
        if (file.truncated_tail) throw bc::RecordFormatError(validate_path + ": truncated final line");
        std::cout << "ok: " << file.records.size() << " records\n";
      } else {
        const bc::SweepConfig config = bc::parse_config(validate_path);
        std::cout << "ok: " << bc::plan_runs(config).size() << " planned runs\n";
      }
    }
  } catch (const bc::ConfigError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidationError;
  } catch (const bc::RecordFormatError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidationError;
  } catch (const bc::DataFormatError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
