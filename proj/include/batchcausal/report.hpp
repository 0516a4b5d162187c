#pragma once

#include "batchcausal/causal.hpp"
#include "batchcausal/stats.hpp"
#include "batchcausal/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace batchcausal {

// "81.0 ± 1.4": percent with one decimal, unbiased std; "83.9" alone for n = 1.
std::string format_percent_cell(const Summary& s);

struct CellStats {
  int batch_size = 0;
  std::string ablation;
  std::size_t runs = 0;
  std::optional<Summary> accuracy;
  std::optional<Summary> sharpness;
  double median_sharpness = 0.0;
  std::optional<Summary> epoch_seconds;  // mean wall-clock seconds per epoch, per run
};

// Grouped by (B, ablation) over non-degenerate runs with a final measurement.
std::vector<CellStats> cell_statistics(const std::vector<RunRecord>& records);

struct Significance {
  double treat = 0.0;
  double control = 0.0;
  std::size_t n_treat = 0;
  std::size_t n_control = 0;
  std::optional<WelchResult> welch;
  std::optional<WilcoxonResult> wilcoxon;  // paired by seed
  std::size_t pairs = 0;
  std::string note;
};

// Welch and paired Wilcoxon on test accuracy of unablated treat vs control runs.
Significance significance(const std::vector<RunRecord>& records, double treat, double control);

struct RecordAnalysis {
  CausalSettings settings;
  std::size_t observations = 0;
  std::optional<CausalAnalysis> causal;
  bool constant_outcome = false;
  std::vector<InterventionResult> hypergraph_results;
  std::vector<InterventionResult> algorithm1_results;
  std::optional<double> ate_hypergraph;
  std::optional<double> ate_algorithm1;
  std::string note;  // reason the causal fit is missing or degenerate
  Significance significance;
  std::size_t degenerate_runs = 0;
};

// Causal analysis and significance tests over an immutable record snapshot.
// A constant outcome yields point-mass distributions and ATE 0; other fitting
// failures leave the causal fields empty with a note.
RecordAnalysis analyze_records(const std::vector<RunRecord>& records, const CausalSettings& settings);

struct AteRow {
  std::string dataset;
  double treat = 0.0;    // E[G | do(treat)]
  double control = 0.0;  // E[G | do(control)]
};

struct AteTable {
  std::vector<AteRow> rows;
  std::vector<double> differences;
  double mean_difference = 0.0;
  std::optional<double> stated_mean;
  bool discrepant = false;  // stated mean differs from the computed one by more than rounding
};

AteTable tabulate_ate(const std::vector<AteRow>& rows, std::optional<double> stated_mean = std::nullopt);
std::string format_ate_table(const AteTable& table);
// CSV with header `dataset,treat,control`.
std::vector<AteRow> read_ate_values(const std::filesystem::path& path);

struct ReportOptions {
  std::optional<std::filesystem::path> ate_values;
  std::optional<double> stated_ate_mean;
  std::string record_source;  // shown in metadata only
};

struct ReportFiles {
  std::filesystem::path text;
  std::vector<std::filesystem::path> csv;
  std::filesystem::path analysis;
  std::filesystem::path metadata;
};

std::string render_text_report(const std::vector<RunRecord>& records, const RecordAnalysis& analysis,
                               const std::optional<AteTable>& ate_table = std::nullopt);

// Writes report.txt, the CSV tables, analysis.json and metadata.json into
// out_dir. Throws std::invalid_argument for an empty record set.
ReportFiles emit_report(const std::vector<RunRecord>& records, const CausalSettings& settings,
                        const std::filesystem::path& out_dir, const ReportOptions& options = {});

}  // namespace batchcausal
