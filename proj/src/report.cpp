#include "batchcausal/report.hpp"

#include "batchcausal/records.hpp"
#include "batchcausal/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace batchcausal {

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string fmt_g(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return fmt("%.6g", v);
}

std::string level(double v) { return fmt("%g", v); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool usable(const RunRecord& r) { return r.status != RunStatus::degenerate && r.final_measurement.has_value(); }

std::string pad(const std::string& s, std::size_t width) {
  // Column widths count code points so "±" aligns.
  std::size_t len = 0;
  for (unsigned char c : s) len += (c & 0xC0) != 0x80;
  return len >= width ? s : s + std::string(width - len, ' ');
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::string format_percent_cell(const Summary& s) {
  std::string cell = fmt("%.1f", 100.0 * s.mean);
  if (s.stddev) cell += " ± " + fmt("%.1f", 100.0 * *s.stddev);
  return cell;
}

std::vector<CellStats> cell_statistics(const std::vector<RunRecord>& records) {
  struct Acc {
    std::vector<double> acc, lam, secs;
  };
  std::map<std::pair<int, std::string>, Acc> groups;
  for (const auto& r : records) {
    if (!usable(r)) continue;
    auto& g = groups[{r.batch_size, r.ablation.label()}];
    g.acc.push_back(r.final_measurement->gen.test_accuracy);
    g.lam.push_back(r.final_measurement->sharpness);
    const auto& w = r.series.epoch_wall_seconds;
    if (!w.empty()) g.secs.push_back(std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size()));
  }
  std::vector<CellStats> out;
  for (const auto& [key, g] : groups) {
    CellStats c;
    c.batch_size = key.first;
    c.ablation = key.second;
    c.runs = g.acc.size();
    c.accuracy = summarize(g.acc);
    c.sharpness = summarize(g.lam);
    c.median_sharpness = median(g.lam);
    if (!g.secs.empty()) c.epoch_seconds = summarize(g.secs);
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const CellStats& a, const CellStats& b) {
    const bool an = a.ablation == "none", bn = b.ablation == "none";
    if (an != bn) return an;
    return std::pair(a.ablation, a.batch_size) < std::pair(b.ablation, b.batch_size);
  });
  return out;
}

Significance significance(const std::vector<RunRecord>& records, double treat, double control) {
  Significance s;
  s.treat = treat;
  s.control = control;
  std::map<std::uint64_t, double> by_seed_t, by_seed_c;
  std::vector<double> xs, ys;
  for (const auto& r : records) {
    if (!usable(r) || r.ablation.kind != AblationKind::none) continue;
    const double g = r.final_measurement->gen.test_accuracy;
    if (r.batch_size == treat) {
      xs.push_back(g);
      by_seed_t[r.seed] = g;
    } else if (r.batch_size == control) {
      ys.push_back(g);
      by_seed_c[r.seed] = g;
    }
  }
  s.n_treat = xs.size();
  s.n_control = ys.size();
  std::vector<std::string> notes;
  if (xs.size() >= 2 && ys.size() >= 2) {
    s.welch = welch_t_test(xs, ys);
  } else {
    notes.push_back("welch test needs >= 2 runs per level");
  }
  std::vector<double> diffs;
  for (const auto& [seed, g] : by_seed_t) {
    if (auto it = by_seed_c.find(seed); it != by_seed_c.end()) diffs.push_back(g - it->second);
  }
  s.pairs = diffs.size();
  if (diffs.empty()) {
    notes.push_back("no seed has runs at both levels");
  } else if (std::all_of(diffs.begin(), diffs.end(), [](double d) { return d == 0.0; })) {
    notes.push_back("all paired differences are zero; wilcoxon p taken as 1");
    WilcoxonResult w;
    w.p = 1.0;
    s.wilcoxon = w;
  } else {
    s.wilcoxon = wilcoxon_signed_rank(diffs);
  }
  for (std::size_t i = 0; i < notes.size(); ++i) s.note += (i ? "; " : "") + notes[i];
  return s;
}

RecordAnalysis analyze_records(const std::vector<RunRecord>& records, const CausalSettings& settings) {
  RecordAnalysis a;
  a.settings = settings;
  for (const auto& r : records) a.degenerate_runs += r.status == RunStatus::degenerate;
  const ObservationTable obs = observations_from_records(records);
  a.observations = obs.rows();
  a.significance = significance(records, settings.treat, settings.control);
  if (obs.rows() == 0) {
    a.note = "no usable unablated runs";
    return a;
  }
  const auto& g = obs.column("G");
  if (std::all_of(g.begin(), g.end(), [&](double v) { return v == g.front(); })) {
    a.constant_outcome = true;
    a.note = "G is constant across runs; every interventional distribution is a point mass";
    std::set<double> levels(obs.column("B").begin(), obs.column("B").end());
    for (double b : levels) {
      a.hypergraph_results.push_back({b, {1.0}, g.front()});
      a.algorithm1_results.push_back({b, {1.0}, g.front()});
    }
    if (levels.count(settings.treat) && levels.count(settings.control)) {
      a.ate_hypergraph = 0.0;
      a.ate_algorithm1 = 0.0;
    }
    return a;
  }
  try {
    CausalAnalysis c = analyze(obs, settings);
    a.hypergraph_results = c.hypergraph_results;
    a.algorithm1_results = c.algorithm1_results;
    a.ate_hypergraph = c.ate_hypergraph;
    a.ate_algorithm1 = c.ate_algorithm1;
    a.causal = std::move(c);
  } catch (const std::exception& e) {
    a.note = std::string("causal fit unavailable: ") + e.what();
  }
  return a;
}

AteTable tabulate_ate(const std::vector<AteRow>& rows, std::optional<double> stated_mean) {
  if (rows.empty()) throw std::invalid_argument("ATE table needs at least one row");
  AteTable t;
  t.rows = rows;
  for (const auto& r : rows) t.differences.push_back(r.treat - r.control);
  t.mean_difference = std::accumulate(t.differences.begin(), t.differences.end(), 0.0) /
                      static_cast<double>(t.differences.size());
  t.stated_mean = stated_mean;
  if (stated_mean) t.discrepant = std::abs(*stated_mean - t.mean_difference) > 0.05 + 1e-9;
  return t;
}

std::string format_ate_table(const AteTable& t) {
  std::ostringstream out;
  out << pad("dataset", 16) << pad("do(treat)", 12) << pad("do(control)", 12) << "difference\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    out << pad(t.rows[i].dataset, 16) << pad(fmt("%.1f", t.rows[i].treat), 12)
        << pad(fmt("%.1f", t.rows[i].control), 12) << fmt("%+.1f", t.differences[i]) << '\n';
  }
  out << "mean difference: " << fmt("%+.3f", t.mean_difference) << '\n';
  if (t.stated_mean) {
    out << "stated mean: " << fmt("%+.1f", *t.stated_mean);
    if (t.discrepant) {
      out << " (does not match the mean of the rows above, " << fmt("%+.3f", t.mean_difference)
          << "; reported as given)";
    }
    out << '\n';
  }
  return out.str();
}

std::vector<AteRow> read_ate_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<AteRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "dataset,treat,control") {
        throw std::invalid_argument(path.string() + ":1: expected header 'dataset,treat,control'");
      }
      continue;
    }
    std::stringstream ss(line);
    std::string name, a, b, extra;
    if (!std::getline(ss, name, ',') || !std::getline(ss, a, ',') || !std::getline(ss, b, ',') ||
        std::getline(ss, extra, ',')) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    }
    try {
      std::size_t pa = 0, pb = 0;
      const double ta = std::stod(a, &pa), tb = std::stod(b, &pb);
      if (pa != a.size() || pb != b.size()) throw std::invalid_argument("trailing characters");
      rows.push_back({name, ta, tb});
    } catch (const std::exception&) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  if (rows.empty()) throw std::invalid_argument(path.string() + ": no rows");
  return rows;
}

std::string render_text_report(const std::vector<RunRecord>& records, const RecordAnalysis& a,
                               const std::optional<AteTable>& ate_table) {
  std::ostringstream out;
  const auto cells = cell_statistics(records);
  out << "Batch-size sweep report\n";
  out << "records: " << records.size() << " (degenerate: " << a.degenerate_runs << ")\n";
  if (!records.empty()) out << "dataset: " << records.front().dataset_id << '\n';
  out << '\n';

  out << "Average test accuracy (%)\n";
  out << pad("B", 8) << pad("ablation", 28) << pad("runs", 6) << "accuracy\n";
  for (const auto& c : cells) {
    out << pad(std::to_string(c.batch_size), 8) << pad(c.ablation, 28) << pad(std::to_string(c.runs), 6)
        << format_percent_cell(*c.accuracy) << '\n';
  }
  out << '\n';

  out << "Largest Hessian eigenvalue\n";
  out << pad("B", 8) << pad("ablation", 28) << pad("median", 12) << "mean ± std\n";
  for (const auto& c : cells) {
    std::string ms = fmt_g(c.sharpness->mean);
    if (c.sharpness->stddev) ms += " ± " + fmt_g(*c.sharpness->stddev);
    out << pad(std::to_string(c.batch_size), 8) << pad(c.ablation, 28) << pad(fmt_g(c.median_sharpness), 12)
        << ms << '\n';
  }
  out << '\n';

  out << "Time per epoch (s)\n";
  out << pad("B", 8) << pad("ablation", 28) << "mean ± std\n";
  for (const auto& c : cells) {
    std::string ts = "n/a";
    if (c.epoch_seconds) {
      ts = fmt("%.4f", c.epoch_seconds->mean);
      if (c.epoch_seconds->stddev) ts += " ± " + fmt("%.4f", *c.epoch_seconds->stddev);
    }
    out << pad(std::to_string(c.batch_size), 8) << pad(c.ablation, 28) << ts << '\n';
  }
  out << '\n';

  out << "Causal analysis (bins " << a.settings.bins << ", alpha " << fmt_g(a.settings.alpha) << ", "
      << a.observations << " observations)\n";
  if (!a.note.empty()) out << "note: " << a.note << '\n';
  const auto dist = [&](const char* mode, const std::vector<InterventionResult>& results) {
    for (const auto& r : results) {
      out << "  " << pad(mode, 12) << "P(G | do(B=" << level(r.treatment_value) << ")) = [";
      for (std::size_t i = 0; i < r.distribution.size(); ++i) out << (i ? ", " : "") << fmt("%.4f", r.distribution[i]);
      out << "]  E[G] = " << fmt("%.4f", r.expected) << '\n';
    }
  };
  dist("hypergraph", a.hypergraph_results);
  dist("algorithm1", a.algorithm1_results);
  const std::string contrast = "do(B=" + level(a.settings.treat) + ") - do(B=" + level(a.settings.control) + ")";
  const auto ate_line = [&](const char* mode, const std::optional<double>& v) {
    out << "ATE " << pad(mode, 11) << contrast << ": " << (v ? fmt("%+.4f", *v) : std::string("n/a")) << '\n';
  };
  ate_line("hypergraph", a.ate_hypergraph);
  ate_line("algorithm1", a.ate_algorithm1);
  out << '\n';

  const Significance& s = a.significance;
  out << "Significance: B=" << level(s.treat) << " vs B=" << level(s.control) << " (test accuracy)\n";
  if (s.welch) {
    out << "  welch t = " << fmt_g(s.welch->t) << ", df = " << fmt_g(s.welch->df) << ", p = " << fmt_g(s.welch->p)
        << (s.welch->degenerate ? " (zero variance in both samples)" : "") << '\n';
  } else {
    out << "  welch: n/a\n";
  }
  if (s.wilcoxon) {
    out << "  wilcoxon W+ = " << fmt_g(s.wilcoxon->w_plus) << ", pairs = " << s.pairs
        << ", p = " << fmt_g(s.wilcoxon->p) << " (" << to_string(s.wilcoxon->method) << ")\n";
  } else {
    out << "  wilcoxon: n/a\n";
  }
  if (!s.note.empty()) out << "  note: " << s.note << '\n';
  out << '\n';

  out << "Back-door check (G independent of B within C strata)\n";
  if (a.causal && !a.causal->backdoor.empty()) {
    for (const auto& t : a.causal->backdoor) {
      out << "  C bin " << t.stratum_bin << ": records " << t.records;
      if (t.skipped) out << ", skipped (too few records)\n";
      else out << ", chi2 = " << fmt_g(t.chi_square) << ", dof = " << t.dof << ", p = " << fmt_g(t.p_value) << '\n';
    }
  } else {
    out << "  n/a\n";
  }

  if (ate_table) {
    out << "\nEstimated ATE from supplied values\n" << format_ate_table(*ate_table);
  }
  return out.str();
}

ReportFiles emit_report(const std::vector<RunRecord>& records, const CausalSettings& settings,
                        const std::filesystem::path& out_dir, const ReportOptions& options) {
  if (records.empty()) throw std::invalid_argument("record set is empty");
  std::filesystem::create_directories(out_dir);
  const RecordAnalysis a = analyze_records(records, settings);
  std::optional<AteTable> ate_table;
  if (options.ate_values) ate_table = tabulate_ate(read_ate_values(*options.ate_values), options.stated_ate_mean);

  ReportFiles files;
  const auto csv = [&](const char* name, const std::string& text) {
    files.csv.push_back(out_dir / name);
    write_file(files.csv.back(), text);
  };
  const auto cells = cell_statistics(records);
  {
    std::ostringstream o;
    o << "batch_size,ablation,runs,mean_accuracy,std_accuracy,cell\n";
    for (const auto& c : cells) {
      o << c.batch_size << ",\"" << c.ablation << "\"," << c.runs << ',' << fmt("%.17g", c.accuracy->mean) << ','
        << (c.accuracy->stddev ? fmt("%.17g", *c.accuracy->stddev) : "") << ',' << format_percent_cell(*c.accuracy)
        << '\n';
    }
    csv("accuracy.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "batch_size,ablation,runs,median_lambda_max,mean_lambda_max,std_lambda_max\n";
    for (const auto& c : cells) {
      o << c.batch_size << ",\"" << c.ablation << "\"," << c.runs << ',' << fmt("%.17g", c.median_sharpness) << ','
        << fmt("%.17g", c.sharpness->mean) << ',' << (c.sharpness->stddev ? fmt("%.17g", *c.sharpness->stddev) : "")
        << '\n';
    }
    csv("sharpness.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "batch_size,ablation,runs,mean_epoch_seconds,std_epoch_seconds\n";
    for (const auto& c : cells) {
      o << c.batch_size << ",\"" << c.ablation << "\"," << c.runs << ','
        << (c.epoch_seconds ? fmt("%.6g", c.epoch_seconds->mean) : "") << ','
        << (c.epoch_seconds && c.epoch_seconds->stddev ? fmt("%.6g", *c.epoch_seconds->stddev) : "") << '\n';
    }
    csv("timing.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "mode,batch_size,g_bin,probability,expected_g\n";
    const auto rows = [&](const char* mode, const std::vector<InterventionResult>& results) {
      for (const auto& r : results) {
        for (std::size_t i = 0; i < r.distribution.size(); ++i) {
          o << mode << ',' << level(r.treatment_value) << ',' << i << ',' << fmt("%.17g", r.distribution[i]) << ','
            << fmt("%.17g", r.expected) << '\n';
        }
      }
    };
    rows("hypergraph", a.hypergraph_results);
    rows("algorithm1", a.algorithm1_results);
    csv("interventional.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "mode,treat,control,ate\n";
    o << "hypergraph," << level(settings.treat) << ',' << level(settings.control) << ','
      << (a.ate_hypergraph ? fmt("%.17g", *a.ate_hypergraph) : "") << '\n';
    o << "algorithm1," << level(settings.treat) << ',' << level(settings.control) << ','
      << (a.ate_algorithm1 ? fmt("%.17g", *a.ate_algorithm1) : "") << '\n';
    csv("ate.csv", o.str());
  }
  {
    const Significance& s = a.significance;
    std::ostringstream o;
    o << "test,treat,control,statistic,df,p_value,n,method\n";
    if (s.welch) {
      o << "welch," << level(s.treat) << ',' << level(s.control) << ',' << fmt_g(s.welch->t) << ','
        << fmt_g(s.welch->df) << ',' << fmt("%.17g", s.welch->p) << ',' << s.n_treat + s.n_control << ",t\n";
    }
    if (s.wilcoxon) {
      o << "wilcoxon," << level(s.treat) << ',' << level(s.control) << ',' << fmt_g(s.wilcoxon->w_plus) << ",,"
        << fmt("%.17g", s.wilcoxon->p) << ',' << s.pairs << ',' << to_string(s.wilcoxon->method) << '\n';
    }
    csv("significance.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "stratum_bin,records,chi_square,dof,p_value,skipped\n";
    if (a.causal) {
      for (const auto& t : a.causal->backdoor) {
        o << t.stratum_bin << ',' << t.records << ',' << fmt_g(t.chi_square) << ',' << t.dof << ','
          << fmt_g(t.p_value) << ',' << (t.skipped ? "true" : "false") << '\n';
      }
    }
    csv("backdoor.csv", o.str());
  }
  if (ate_table) {
    std::ostringstream o;
    o << "dataset,treat,control,difference\n";
    for (std::size_t i = 0; i < ate_table->rows.size(); ++i) {
      const auto& r = ate_table->rows[i];
      o << r.dataset << ',' << fmt("%.17g", r.treat) << ',' << fmt("%.17g", r.control) << ','
        << fmt("%.17g", ate_table->differences[i]) << '\n';
    }
    o << "mean,,," << fmt("%.17g", ate_table->mean_difference) << '\n';
    csv("ate_values.csv", o.str());
  }

  files.text = out_dir / "report.txt";
  write_file(files.text, render_text_report(records, a, ate_table));

  nlohmann::json bundle = {{"settings", to_json(settings)},
                           {"observations", a.observations},
                           {"constant_outcome", a.constant_outcome},
                           {"note", a.note}};
  if (a.causal) bundle["causal"] = to_json(*a.causal);
  files.analysis = out_dir / "analysis.json";
  write_file(files.analysis, bundle.dump(2) + '\n');

  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  nlohmann::json meta = {{"generated_at", stamp},
                         {"record_source", options.record_source},
                         {"record_count", records.size()},
                         {"schema_version", kRecordSchemaVersion}};
  files.metadata = out_dir / "metadata.json";
  write_file(files.metadata, meta.dump(2) + '\n');
  return files;
}

}  // namespace batchcausal
