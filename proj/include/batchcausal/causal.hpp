#pragma once

#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace batchcausal {

class HypergraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Hyperedge {
  std::vector<std::string> tail;
  std::string head;

  bool operator==(const Hyperedge&) const = default;
};

// Directed hyperedges (tail set -> head) over named variables.
struct CausalHypergraph {
  std::vector<std::string> variables;
  std::vector<Hyperedge> edges;

  // B -> N, N -> S, {N, S} -> C, C -> G
  static CausalHypergraph batch_size_default();
  // The joint {N, S} -> C hyperedge replaced by N -> C.
  static CausalHypergraph pairwise();

  bool operator==(const CausalHypergraph&) const = default;
};

// Topological factorization order; every tail precedes its head. Ties are
// broken by declaration order. Throws HypergraphError on cycles, repeated
// heads, or edges naming undeclared variables.
std::vector<std::string> validate_hypergraph(const CausalHypergraph& graph);

enum class EngineMode { hypergraph, algorithm1 };

std::string_view to_string(EngineMode mode);
EngineMode engine_mode_from_string(std::string_view name);

// Factor set of the alternate estimator: the outcome is conditioned jointly
// on every mediator, and the factors for the outcome's own parents are
// dropped (those variables are summed without weight).
CausalHypergraph algorithm1_factorization(const CausalHypergraph& graph,
                                          const std::string& treatment = "B",
                                          const std::string& outcome = "G");

// Column-oriented observations, one column per variable.
struct ObservationTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const noexcept { return columns.empty() ? 0 : columns.front().size(); }
  const std::vector<double>& column(const std::string& name) const;
  void add_column(std::string name, std::vector<double> values);
};

struct VariableBins {
  std::string name;
  bool discrete = false;
  std::vector<double> levels;           // discrete variables: sorted distinct values
  std::vector<double> cut_points;       // continuous: bin i is (cut[i-1], cut[i]]
  std::vector<double> representatives;  // per-bin value used for expectations

  int bin_count() const noexcept { return static_cast<int>(representatives.size()); }
  // Throws std::out_of_range for a discrete value that is not a known level.
  int bin_of(double value) const;

  bool operator==(const VariableBins&) const = default;
};

struct DiscretizationScheme {
  std::vector<VariableBins> variables;

  const VariableBins& at(const std::string& name) const;
  bool operator==(const DiscretizationScheme&) const = default;
};

struct BinnedRecords {
  std::vector<std::string> names;
  std::vector<std::vector<int>> bins;  // one column per variable

  std::size_t rows() const noexcept { return bins.empty() ? 0 : bins.front().size(); }
  const std::vector<int>& column(const std::string& name) const;
};

struct Discretized {
  DiscretizationScheme scheme;
  BinnedRecords records;
};

// Equal-frequency bins (ties go to the lower bin) for continuous columns;
// each distinct value is its own bin for the columns named in `discrete`.
// Representatives are within-bin means of the fitting records.
Discretized discretize_records(const ObservationTable& table, int bins,
                               const std::set<std::string>& discrete = {"B"});

// Re-bins observations with an existing scheme.
BinnedRecords apply_scheme(const DiscretizationScheme& scheme, const ObservationTable& table);

struct ConditionalTable {
  std::string head;
  std::vector<std::string> tail;
  std::vector<int> tail_cardinality;
  int head_cardinality = 0;
  double alpha = 1.0;
  std::vector<double> counts;         // [row][head], row = mixed-radix tail config
  std::vector<double> probabilities;  // same layout

  std::size_t row_count() const noexcept;
  // First tail variable is the most significant digit.
  std::size_t row_index(const std::vector<int>& tail_bins) const;
  double probability(const std::vector<int>& tail_bins, int head_bin) const;
};

// One table per hyperedge: (count + alpha) / (row_total + alpha * k_head).
// A tail row with no records and alpha = 0 is uniform.
std::vector<ConditionalTable> fit_cpts(const CausalHypergraph& graph, const BinnedRecords& records,
                                       const DiscretizationScheme& scheme, double alpha = 1.0);

struct InterventionResult {
  double treatment_value = 0.0;
  std::vector<double> distribution;  // over outcome bins
  double expected = 0.0;             // sum p * representative
};

struct QueryTarget {
  std::string treatment = "B";
  std::string outcome = "G";
};

// P(outcome | do(treatment = value)) by exact summation over every bin
// combination of the non-intervened variables, then normalization.
InterventionResult interventional_distribution(const CausalHypergraph& graph,
                                               const std::vector<ConditionalTable>& tables,
                                               const DiscretizationScheme& scheme, double value,
                                               EngineMode mode = EngineMode::hypergraph,
                                               const QueryTarget& target = {});

// E[outcome | do(treat)] - E[outcome | do(control)]
double ate(const CausalHypergraph& graph, const std::vector<ConditionalTable>& tables,
           const DiscretizationScheme& scheme, double treat, double control,
           EngineMode mode = EngineMode::hypergraph, const QueryTarget& target = {});

struct StratumTest {
  int stratum_bin = 0;
  std::size_t records = 0;
  double chi_square = 0.0;
  int dof = 0;
  double p_value = 1.0;
  bool skipped = false;
};

// Pearson chi-square of outcome x treatment within each stratum bin.
// Strata with fewer than min_records records are reported as skipped.
std::vector<StratumTest> backdoor_diagnostic(const BinnedRecords& records, int stratum_bins,
                                             const std::string& treatment = "B",
                                             const std::string& outcome = "G",
                                             const std::string& stratum = "C",
                                             std::size_t min_records = 5);

// Pearson chi-square for a contingency table; empty rows and columns are
// dropped before the degrees of freedom are counted.
struct ChiSquare {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};
ChiSquare pearson_chi_square(const std::vector<std::vector<double>>& table);

// ---- full analysis -------------------------------------------------------------

struct CausalSettings {
  int bins = 3;
  double alpha = 1.0;
  EngineMode mode = EngineMode::hypergraph;
  double treat = 16;
  double control = 512;

  bool operator==(const CausalSettings&) const = default;
};

struct CausalAnalysis {
  CausalSettings settings;
  CausalHypergraph graph;
  std::size_t records = 0;
  DiscretizationScheme scheme;
  std::vector<ConditionalTable> tables;             // hypergraph factorization
  std::vector<ConditionalTable> algorithm1_tables;  // joint-tail outcome table
  std::vector<InterventionResult> hypergraph_results;
  std::vector<InterventionResult> algorithm1_results;
  double ate_hypergraph = 0.0;
  double ate_algorithm1 = 0.0;
  std::vector<StratumTest> backdoor;
};

// Discretize, fit both factorizations, query every treatment level and the
// configured treat/control contrast, and run the back-door diagnostic.
CausalAnalysis analyze(const ObservationTable& observations, const CausalSettings& settings,
                       const CausalHypergraph& graph = CausalHypergraph::batch_size_default());

}  // namespace batchcausal
