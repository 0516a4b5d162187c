#include "batchcausal/causal.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace batchcausal {

CausalHypergraph CausalHypergraph::batch_size_default() {
  return CausalHypergraph{
      {"B", "N", "S", "C", "G"},
      {{{"B"}, "N"}, {{"N"}, "S"}, {{"N", "S"}, "C"}, {{"C"}, "G"}},
  };
}

CausalHypergraph CausalHypergraph::pairwise() {
  return CausalHypergraph{
      {"B", "N", "S", "C", "G"},
      {{{"B"}, "N"}, {{"N"}, "S"}, {{"N"}, "C"}, {{"C"}, "G"}},
  };
}

std::vector<std::string> validate_hypergraph(const CausalHypergraph& graph) {
  std::map<std::string, std::size_t> index;
  for (const auto& v : graph.variables) {
    if (!index.emplace(v, index.size()).second) throw HypergraphError("duplicate variable '" + v + "'");
  }
  const std::size_t n = graph.variables.size();
  std::vector<int> incoming_edges(n, 0);
  std::vector<std::vector<std::size_t>> children(n);
  std::vector<int> indegree(n, 0);
  for (const auto& e : graph.edges) {
    const auto h = index.find(e.head);
    if (h == index.end()) throw HypergraphError("hyperedge head '" + e.head + "' is not a variable");
    if (e.tail.empty()) throw HypergraphError("hyperedge into '" + e.head + "' has an empty tail");
    if (++incoming_edges[h->second] > 1) {
      throw HypergraphError("variable '" + e.head + "' has more than one incoming hyperedge");
    }
    std::set<std::string> seen;
    for (const auto& t : e.tail) {
      const auto ti = index.find(t);
      if (ti == index.end()) throw HypergraphError("hyperedge tail '" + t + "' is not a variable");
      if (!seen.insert(t).second) throw HypergraphError("repeated tail variable '" + t + "'");
      if (t == e.head) throw HypergraphError("cycle detected: '" + t + "' causes itself");
      children[ti->second].push_back(h->second);
      ++indegree[h->second];
    }
  }
  std::vector<std::string> order;
  std::vector<bool> done(n, false);
  while (order.size() < n) {
    bool progressed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (done[i] || indegree[i] != 0) continue;
      done[i] = true;
      order.push_back(graph.variables[i]);
      for (std::size_t c : children[i]) --indegree[c];
      progressed = true;
      break;
    }
    if (!progressed) throw HypergraphError("cycle detected among causal variables");
  }
  return order;
}

std::string_view to_string(EngineMode mode) {
  return mode == EngineMode::hypergraph ? "hypergraph" : "algorithm1";
}

EngineMode engine_mode_from_string(std::string_view name) {
  if (name == "hypergraph") return EngineMode::hypergraph;
  if (name == "algorithm1") return EngineMode::algorithm1;
  throw std::invalid_argument("unknown engine mode '" + std::string(name) + "'");
}

CausalHypergraph algorithm1_factorization(const CausalHypergraph& graph,
                                          const std::string& treatment,
                                          const std::string& outcome) {
  validate_hypergraph(graph);
  std::set<std::string> outcome_parents;
  for (const auto& e : graph.edges) {
    if (e.head == outcome) outcome_parents.insert(e.tail.begin(), e.tail.end());
  }
  CausalHypergraph out;
  out.variables = graph.variables;
  for (const auto& e : graph.edges) {
    if (e.head == outcome || outcome_parents.count(e.head)) continue;
    out.edges.push_back(e);
  }
  Hyperedge joint;
  joint.head = outcome;
  for (const auto& v : graph.variables) {
    if (v != treatment && v != outcome) joint.tail.push_back(v);
  }
  out.edges.push_back(std::move(joint));
  return out;
}

const std::vector<double>& ObservationTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return columns[i];
  }
  throw std::out_of_range("no observation column '" + name + "'");
}

void ObservationTable::add_column(std::string name, std::vector<double> values) {
  if (!columns.empty() && values.size() != rows()) {
    throw std::invalid_argument("observation column '" + name + "' has the wrong length");
  }
  names.push_back(std::move(name));
  columns.push_back(std::move(values));
}

int VariableBins::bin_of(double value) const {
  if (discrete) {
    const auto it = std::find(levels.begin(), levels.end(), value);
    if (it == levels.end()) {
      throw std::out_of_range("value " + std::to_string(value) + " is not a level of '" + name + "'");
    }
    return static_cast<int>(it - levels.begin());
  }
  // Values equal to a cut point belong to the lower bin.
  return static_cast<int>(std::lower_bound(cut_points.begin(), cut_points.end(), value) -
                          cut_points.begin());
}

const VariableBins& DiscretizationScheme::at(const std::string& name) const {
  for (const auto& v : variables) {
    if (v.name == name) return v;
  }
  throw std::out_of_range("no discretization for variable '" + name + "'");
}

const std::vector<int>& BinnedRecords::column(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return bins[i];
  }
  throw std::out_of_range("no binned column '" + name + "'");
}

namespace {

std::vector<double> quantile_cuts(const std::string& name, std::vector<double> sorted, int k) {
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (static_cast<int>(distinct.size()) < k) {
    throw std::invalid_argument("variable '" + name + "' has " + std::to_string(distinct.size()) +
                                " distinct values, fewer than " + std::to_string(k) + " bins");
  }
  const std::size_t n = sorted.size();
  std::vector<double> cuts;
  for (int i = 1; i < k; ++i) {
    // Last element of the i-th equal-frequency slice.
    const std::size_t pos = (static_cast<std::size_t>(i) * n + static_cast<std::size_t>(k) - 1) /
                                static_cast<std::size_t>(k) - 1;
    double cut = sorted[pos];
    if (!cuts.empty() && cut <= cuts.back()) {
      cut = *std::upper_bound(distinct.begin(), distinct.end(), cuts.back());
    }
    if (cut >= distinct.back()) {
      throw std::invalid_argument("variable '" + name + "' is too concentrated for " +
                                  std::to_string(k) + " non-empty bins");
    }
    cuts.push_back(cut);
  }
  return cuts;
}

}  // namespace

BinnedRecords apply_scheme(const DiscretizationScheme& scheme, const ObservationTable& table) {
  BinnedRecords out;
  for (const auto& var : scheme.variables) {
    const auto& values = table.column(var.name);
    std::vector<int> bins(values.size());
    for (std::size_t r = 0; r < values.size(); ++r) bins[r] = var.bin_of(values[r]);
    out.names.push_back(var.name);
    out.bins.push_back(std::move(bins));
  }
  return out;
}

Discretized discretize_records(const ObservationTable& table, int bins,
                               const std::set<std::string>& discrete) {
  if (bins < 1) throw std::invalid_argument("bin count must be >= 1");
  if (table.rows() == 0) throw std::invalid_argument("cannot discretize an empty table");
  Discretized out;
  for (std::size_t c = 0; c < table.names.size(); ++c) {
    const std::string& name = table.names[c];
    const auto& values = table.columns[c];
    for (double v : values) {
      if (!std::isfinite(v)) throw std::invalid_argument("variable '" + name + "' has non-finite values");
    }
    VariableBins var;
    var.name = name;
    var.discrete = discrete.count(name) > 0;
    if (var.discrete) {
      var.levels = values;
      std::sort(var.levels.begin(), var.levels.end());
      var.levels.erase(std::unique(var.levels.begin(), var.levels.end()), var.levels.end());
      var.representatives = var.levels;
    } else {
      var.cut_points = quantile_cuts(name, values, bins);
      var.representatives.assign(static_cast<std::size_t>(bins), 0.0);
    }
    std::vector<int> column(values.size());
    for (std::size_t r = 0; r < values.size(); ++r) column[r] = var.bin_of(values[r]);
    if (!var.discrete) {
      std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
      for (std::size_t r = 0; r < values.size(); ++r) {
        var.representatives[static_cast<std::size_t>(column[r])] += values[r];
        ++counts[static_cast<std::size_t>(column[r])];
      }
      for (std::size_t b = 0; b < counts.size(); ++b) var.representatives[b] /= static_cast<double>(counts[b]);
    }
    out.scheme.variables.push_back(std::move(var));
    out.records.names.push_back(name);
    out.records.bins.push_back(std::move(column));
  }
  return out;
}

std::size_t ConditionalTable::row_count() const noexcept {
  std::size_t rows = 1;
  for (int c : tail_cardinality) rows *= static_cast<std::size_t>(c);
  return rows;
}

std::size_t ConditionalTable::row_index(const std::vector<int>& tail_bins) const {
  if (tail_bins.size() != tail.size()) throw std::invalid_argument("tail configuration has wrong arity");
  std::size_t row = 0;
  for (std::size_t i = 0; i < tail.size(); ++i) {
    if (tail_bins[i] < 0 || tail_bins[i] >= tail_cardinality[i]) {
      throw std::out_of_range("tail bin out of range for '" + tail[i] + "'");
    }
    row = row * static_cast<std::size_t>(tail_cardinality[i]) + static_cast<std::size_t>(tail_bins[i]);
  }
  return row;
}

double ConditionalTable::probability(const std::vector<int>& tail_bins, int head_bin) const {
  if (head_bin < 0 || head_bin >= head_cardinality) throw std::out_of_range("head bin out of range");
  return probabilities[row_index(tail_bins) * static_cast<std::size_t>(head_cardinality) +
                       static_cast<std::size_t>(head_bin)];
}

std::vector<ConditionalTable> fit_cpts(const CausalHypergraph& graph, const BinnedRecords& records,
                                       const DiscretizationScheme& scheme, double alpha) {
  validate_hypergraph(graph);
  if (records.rows() == 0) throw std::invalid_argument("cannot fit tables from zero records");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("smoothing alpha must be >= 0");
  std::vector<ConditionalTable> tables;
  for (const auto& edge : graph.edges) {
    ConditionalTable t;
    t.head = edge.head;
    t.tail = edge.tail;
    t.alpha = alpha;
    t.head_cardinality = scheme.at(edge.head).bin_count();
    std::vector<const std::vector<int>*> tail_columns;
    for (const auto& name : edge.tail) {
      t.tail_cardinality.push_back(scheme.at(name).bin_count());
      tail_columns.push_back(&records.column(name));
    }
    const auto& head_column = records.column(edge.head);
    const auto k = static_cast<std::size_t>(t.head_cardinality);
    t.counts.assign(t.row_count() * k, 0.0);
    std::vector<int> config(edge.tail.size());
    for (std::size_t r = 0; r < records.rows(); ++r) {
      for (std::size_t i = 0; i < config.size(); ++i) config[i] = (*tail_columns[i])[r];
      t.counts[t.row_index(config) * k + static_cast<std::size_t>(head_column[r])] += 1.0;
    }
    t.probabilities.resize(t.counts.size());
    for (std::size_t row = 0; row < t.row_count(); ++row) {
      double total = 0.0;
      for (std::size_t h = 0; h < k; ++h) total += t.counts[row * k + h];
      const double denom = total + alpha * static_cast<double>(k);
      for (std::size_t h = 0; h < k; ++h) {
        t.probabilities[row * k + h] =
            denom > 0.0 ? (t.counts[row * k + h] + alpha) / denom : 1.0 / static_cast<double>(k);
      }
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

namespace {

const ConditionalTable& find_table(const std::vector<ConditionalTable>& tables, const Hyperedge& edge) {
  for (const auto& t : tables) {
    if (t.head == edge.head && t.tail == edge.tail) return t;
  }
  std::string tail;
  for (const auto& v : edge.tail) tail += (tail.empty() ? "" : ",") + v;
  throw std::invalid_argument("missing conditional table for {" + tail + "} -> " + edge.head);
}

}  // namespace

InterventionResult interventional_distribution(const CausalHypergraph& graph,
                                               const std::vector<ConditionalTable>& tables,
                                               const DiscretizationScheme& scheme, double value,
                                               EngineMode mode, const QueryTarget& target) {
  validate_hypergraph(graph);
  const CausalHypergraph factors = mode == EngineMode::hypergraph
                                       ? graph
                                       : algorithm1_factorization(graph, target.treatment, target.outcome);
  const std::vector<std::string> order = validate_hypergraph(factors);

  const VariableBins& treatment_bins = scheme.at(target.treatment);
  int treatment_bin = 0;
  try {
    treatment_bin = treatment_bins.bin_of(value);
  } catch (const std::out_of_range&) {
    throw std::invalid_argument("unknown treatment level " + std::to_string(value));
  }

  // Enumerate variables in factorization order; treatment is clamped.
  std::map<std::string, std::size_t> slot;
  std::vector<int> cardinality;
  for (const auto& v : order) {
    slot[v] = cardinality.size();
    cardinality.push_back(v == target.treatment ? 1 : scheme.at(v).bin_count());
  }
  struct Factor {
    const ConditionalTable* table;
    std::vector<std::size_t> tail_slots;
    std::size_t head_slot;
  };
  std::vector<Factor> bound;
  for (const auto& edge : factors.edges) {
    if (edge.head == target.treatment) continue;  // severed by the intervention
    Factor f{&find_table(tables, edge), {}, slot.at(edge.head)};
    for (const auto& t : edge.tail) f.tail_slots.push_back(slot.at(t));
    bound.push_back(std::move(f));
  }

  const std::size_t outcome_slot = slot.at(target.outcome);
  const int outcome_bins = scheme.at(target.outcome).bin_count();
  std::vector<double> dist(static_cast<std::size_t>(outcome_bins), 0.0);
  std::vector<int> assignment(cardinality.size(), 0);
  std::vector<int> tail_bins;
  const std::size_t treatment_slot = slot.at(target.treatment);
  while (true) {
    double weight = 1.0;
    for (const auto& f : bound) {
      tail_bins.clear();
      for (std::size_t s : f.tail_slots) {
        tail_bins.push_back(s == treatment_slot ? treatment_bin : assignment[s]);
      }
      weight *= f.table->probability(tail_bins, assignment[f.head_slot]);
      if (weight == 0.0) break;
    }
    dist[static_cast<std::size_t>(assignment[outcome_slot])] += weight;
    bool wrapped = true;
    for (std::size_t i = assignment.size(); i-- > 0;) {
      if (++assignment[i] < cardinality[i]) {
        wrapped = false;
        break;
      }
      assignment[i] = 0;
    }
    if (wrapped) break;
  }

  const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
  if (!(total > 0.0)) throw std::runtime_error("interventional distribution has zero mass");
  InterventionResult out;
  out.treatment_value = value;
  out.distribution = dist;
  for (double& p : out.distribution) p /= total;
  const auto& reps = scheme.at(target.outcome).representatives;
  for (std::size_t b = 0; b < out.distribution.size(); ++b) out.expected += out.distribution[b] * reps[b];
  return out;
}

double ate(const CausalHypergraph& graph, const std::vector<ConditionalTable>& tables,
           const DiscretizationScheme& scheme, double treat, double control, EngineMode mode,
           const QueryTarget& target) {
  const double treated = interventional_distribution(graph, tables, scheme, treat, mode, target).expected;
  if (treat == control) return 0.0;
  const double controlled = interventional_distribution(graph, tables, scheme, control, mode, target).expected;
  return treated - controlled;
}

ChiSquare pearson_chi_square(const std::vector<std::vector<double>>& table) {
  std::vector<double> row_sums, col_sums;
  std::vector<std::size_t> rows, cols;
  const std::size_t ncols = table.empty() ? 0 : table.front().size();
  for (std::size_t r = 0; r < table.size(); ++r) {
    const double s = std::accumulate(table[r].begin(), table[r].end(), 0.0);
    if (s > 0.0) {
      rows.push_back(r);
      row_sums.push_back(s);
    }
  }
  for (std::size_t c = 0; c < ncols; ++c) {
    double s = 0.0;
    for (const auto& row : table) s += row[c];
    if (s > 0.0) {
      cols.push_back(c);
      col_sums.push_back(s);
    }
  }
  ChiSquare out;
  if (rows.size() < 2 || cols.size() < 2) return out;
  const double total = std::accumulate(row_sums.begin(), row_sums.end(), 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double expected = row_sums[i] * col_sums[j] / total;
      const double diff = table[rows[i]][cols[j]] - expected;
      out.statistic += diff * diff / expected;
    }
  }
  out.dof = static_cast<int>((rows.size() - 1) * (cols.size() - 1));
  out.p_value = boost::math::gamma_q(0.5 * out.dof, 0.5 * out.statistic);
  return out;
}

std::vector<StratumTest> backdoor_diagnostic(const BinnedRecords& records, int stratum_bins,
                                             const std::string& treatment,
                                             const std::string& outcome,
                                             const std::string& stratum, std::size_t min_records) {
  const auto& t = records.column(treatment);
  const auto& g = records.column(outcome);
  const auto& c = records.column(stratum);
  const int t_bins = t.empty() ? 0 : *std::max_element(t.begin(), t.end()) + 1;
  const int g_bins = g.empty() ? 0 : *std::max_element(g.begin(), g.end()) + 1;
  std::vector<StratumTest> out;
  for (int s = 0; s < stratum_bins; ++s) {
    StratumTest test;
    test.stratum_bin = s;
    std::vector<std::vector<double>> table(static_cast<std::size_t>(g_bins),
                                           std::vector<double>(static_cast<std::size_t>(t_bins), 0.0));
    for (std::size_t r = 0; r < records.rows(); ++r) {
      if (c[r] != s) continue;
      ++test.records;
      table[static_cast<std::size_t>(g[r])][static_cast<std::size_t>(t[r])] += 1.0;
    }
    if (test.records < min_records) {
      test.skipped = true;
    } else {
      const ChiSquare chi = pearson_chi_square(table);
      test.chi_square = chi.statistic;
      test.dof = chi.dof;
      test.p_value = chi.p_value;
    }
    out.push_back(test);
  }
  return out;
}

CausalAnalysis analyze(const ObservationTable& observations, const CausalSettings& settings,
                       const CausalHypergraph& graph) {
  validate_hypergraph(graph);
  CausalAnalysis a;
  a.settings = settings;
  a.graph = graph;
  a.records = observations.rows();
  Discretized d = discretize_records(observations, settings.bins, {"B"});
  a.scheme = d.scheme;
  a.tables = fit_cpts(graph, d.records, a.scheme, settings.alpha);
  a.algorithm1_tables = fit_cpts(algorithm1_factorization(graph), d.records, a.scheme, settings.alpha);
  for (double level : a.scheme.at("B").levels) {
    a.hypergraph_results.push_back(
        interventional_distribution(graph, a.tables, a.scheme, level, EngineMode::hypergraph));
    a.algorithm1_results.push_back(
        interventional_distribution(graph, a.algorithm1_tables, a.scheme, level, EngineMode::algorithm1));
  }
  a.ate_hypergraph = ate(graph, a.tables, a.scheme, settings.treat, settings.control, EngineMode::hypergraph);
  a.ate_algorithm1 =
      ate(graph, a.algorithm1_tables, a.scheme, settings.treat, settings.control, EngineMode::algorithm1);
  a.backdoor = backdoor_diagnostic(d.records, a.scheme.at("C").bin_count());
  return a;
}

}  // namespace batchcausal
