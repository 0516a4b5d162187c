#include "batchcausal/records.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace batchcausal {

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json numbers(const std::vector<double>& values) {
  json out = json::array();
  for (double v : values) out.push_back(number(v));
  return out;
}

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw RecordFormatError(std::string("record is missing field '") + key + "'");
  return *it;
}

double as_double(const json& j, const char* what) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw RecordFormatError(std::string("field '") + what + "' must be a number");
  return j.get<double>();
}

template <typename Int>
Int as_int(const json& j, const char* what) {
  if (!j.is_number_integer()) throw RecordFormatError(std::string("field '") + what + "' must be an integer");
  return j.get<Int>();
}

std::string as_string(const json& j, const char* what) {
  if (!j.is_string()) throw RecordFormatError(std::string("field '") + what + "' must be a string");
  return j.get<std::string>();
}

std::vector<double> as_doubles(const json& j, const char* what) {
  if (!j.is_array()) throw RecordFormatError(std::string("field '") + what + "' must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(as_double(v, what));
  return out;
}

bool same_doubles(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) && std::isnan(b[i])) continue;
    if (a[i] != b[i]) return false;
  }
  return true;
}

bool same_value(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

json to_json(const RunRecord& r) {
  json series = {
      {"train_loss", numbers(r.series.train_loss)},
      {"val_loss", numbers(r.series.val_loss)},
      {"test_loss", numbers(r.series.test_loss)},
      {"test_acc", numbers(r.series.test_acc)},
      {"lr", numbers(r.series.lr)},
      {"batch_size", r.series.batch_size},
      {"grad_noise", numbers(r.series.grad_noise)},
      {"epoch_wall_seconds", numbers(r.series.epoch_wall_seconds)},
  };
  json final_m = nullptr;
  if (r.final_measurement) {
    const Measurement& m = *r.final_measurement;
    final_m = {{"grad_noise", number(m.grad_noise)},
               {"sharpness", number(m.sharpness)},
               {"complexity", number(m.complexity)},
               {"test_accuracy", number(m.gen.test_accuracy)},
               {"gen_gap", number(m.gen.gap)},
               {"batch_size", m.batch_size},
               {"epoch", m.epoch}};
  }
  return {
      {"schema_version", kRecordSchemaVersion},
      {"run_id", r.run_id},
      {"dataset_id", r.dataset_id},
      {"model_kind", std::string(to_string(r.model_kind))},
      {"batch_size", r.batch_size},
      {"seed", r.seed},
      {"ablation",
       {{"kind", std::string(to_string(r.ablation.kind))},
        {"rho", r.ablation.rho},
        {"l1", r.ablation.l1},
        {"l2", r.ablation.l2},
        {"label", r.ablation.label()}}},
      {"status", std::string(to_string(r.status))},
      {"note", r.note},
      {"effective_noise_batch", r.effective_noise_batch},
      {"series", std::move(series)},
      {"final", std::move(final_m)},
  };
}

RunRecord run_record_from_json(const json& j) {
  if (!j.is_object()) throw RecordFormatError("record must be a JSON object");
  const int version = as_int<int>(field(j, "schema_version"), "schema_version");
  if (version != kRecordSchemaVersion) {
    throw RecordFormatError("unsupported schema_version " + std::to_string(version));
  }
  RunRecord r;
  try {
    r.run_id = as_string(field(j, "run_id"), "run_id");
    r.dataset_id = as_string(field(j, "dataset_id"), "dataset_id");
    r.model_kind = model_kind_from_string(as_string(field(j, "model_kind"), "model_kind"));
    r.batch_size = as_int<int>(field(j, "batch_size"), "batch_size");
    r.seed = as_int<std::uint64_t>(field(j, "seed"), "seed");
    const json& ab = field(j, "ablation");
    r.ablation.kind = ablation_kind_from_string(as_string(field(ab, "kind"), "ablation.kind"));
    r.ablation.rho = as_double(field(ab, "rho"), "ablation.rho");
    r.ablation.l1 = as_double(field(ab, "l1"), "ablation.l1");
    r.ablation.l2 = as_double(field(ab, "l2"), "ablation.l2");
    r.status = run_status_from_string(as_string(field(j, "status"), "status"));
    r.note = as_string(field(j, "note"), "note");
    r.effective_noise_batch = as_int<int>(field(j, "effective_noise_batch"), "effective_noise_batch");

    const json& s = field(j, "series");
    r.series.train_loss = as_doubles(field(s, "train_loss"), "series.train_loss");
    r.series.val_loss = as_doubles(field(s, "val_loss"), "series.val_loss");
    r.series.test_loss = as_doubles(field(s, "test_loss"), "series.test_loss");
    r.series.test_acc = as_doubles(field(s, "test_acc"), "series.test_acc");
    r.series.lr = as_doubles(field(s, "lr"), "series.lr");
    for (const auto& b : field(s, "batch_size")) r.series.batch_size.push_back(as_int<int>(b, "series.batch_size"));
    r.series.grad_noise = as_doubles(field(s, "grad_noise"), "series.grad_noise");
    r.series.epoch_wall_seconds = as_doubles(field(s, "epoch_wall_seconds"), "series.epoch_wall_seconds");

    const json& f = field(j, "final");
    if (!f.is_null()) {
      Measurement m;
      m.grad_noise = as_double(field(f, "grad_noise"), "final.grad_noise");
      m.sharpness = as_double(field(f, "sharpness"), "final.sharpness");
      m.complexity = as_double(field(f, "complexity"), "final.complexity");
      m.gen.test_accuracy = as_double(field(f, "test_accuracy"), "final.test_accuracy");
      m.gen.gap = as_double(field(f, "gen_gap"), "final.gen_gap");
      m.batch_size = as_int<int>(field(f, "batch_size"), "final.batch_size");
      m.epoch = as_int<int>(field(f, "epoch"), "final.epoch");
      r.final_measurement = m;
    }
  } catch (const RecordFormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw RecordFormatError(e.what());
  }
  return r;
}

std::string serialize_record(const RunRecord& record) { return to_json(record).dump(); }

RunRecord parse_record_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw RecordFormatError(std::string("invalid JSON: ") + e.what());
  }
  return run_record_from_json(j);
}

bool same_record(const RunRecord& a, const RunRecord& b) {
  const auto same_measurement = [](const std::optional<Measurement>& x, const std::optional<Measurement>& y) {
    if (x.has_value() != y.has_value()) return false;
    if (!x) return true;
    return same_value(x->grad_noise, y->grad_noise) && same_value(x->sharpness, y->sharpness) &&
           same_value(x->complexity, y->complexity) && same_value(x->gen.test_accuracy, y->gen.test_accuracy) &&
           same_value(x->gen.gap, y->gen.gap) && x->batch_size == y->batch_size && x->epoch == y->epoch;
  };
  return a.run_id == b.run_id && a.dataset_id == b.dataset_id && a.model_kind == b.model_kind &&
         a.batch_size == b.batch_size && a.seed == b.seed && a.ablation == b.ablation && a.status == b.status &&
         a.note == b.note && a.effective_noise_batch == b.effective_noise_batch &&
         same_doubles(a.series.train_loss, b.series.train_loss) &&
         same_doubles(a.series.val_loss, b.series.val_loss) &&
         same_doubles(a.series.test_loss, b.series.test_loss) &&
         same_doubles(a.series.test_acc, b.series.test_acc) && same_doubles(a.series.lr, b.series.lr) &&
         a.series.batch_size == b.series.batch_size && same_doubles(a.series.grad_noise, b.series.grad_noise) &&
         a.series.epoch_wall_seconds.size() == b.series.epoch_wall_seconds.size() &&
         same_measurement(a.final_measurement, b.final_measurement);
}

RecordKey record_key(const RunRecord& record) {
  return {record.batch_size, record.seed, record.ablation.label()};
}

void sort_records(std::vector<RunRecord>& records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const RunRecord& a, const RunRecord& b) { return record_key(a) < record_key(b); });
}

RecordFile read_record_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open record file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  RecordFile out;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    const bool terminated = end != std::string::npos;
    std::string line = text.substr(start, terminated ? end - start : std::string::npos);
    start = terminated ? end + 1 : text.size();
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.records.push_back(parse_record_line(line));
    } catch (const RecordFormatError& e) {
      if (!terminated) {
        out.truncated_tail = true;
        out.truncated_line = line;
        break;
      }
      throw RecordFormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

bool quarantine_truncated_tail(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return false;
  const RecordFile file = read_record_file(path);
  if (!file.truncated_tail) return false;
  {
    std::ofstream q(path.string() + ".quarantine", std::ios::binary | std::ios::app);
    q << file.truncated_line << '\n';
  }
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - file.truncated_line.size());
  return true;
}

RecordWriter::RecordWriter(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void RecordWriter::append(const RunRecord& record) {
  const std::string line = serialize_record(record) + '\n';
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot append to record file " + path_.string());
  out << line;
  out.flush();
  if (!out) throw std::runtime_error("write failed for record file " + path_.string());
}

void write_record_file(const std::filesystem::path& path, const std::vector<RunRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write record file " + path.string());
  for (const auto& r : records) out << serialize_record(r) << '\n';
}

json to_json(const CausalSettings& s) {
  return {{"bins", s.bins},
          {"alpha", s.alpha},
          {"mode", std::string(to_string(s.mode))},
          {"treat", s.treat},
          {"control", s.control}};
}

CausalSettings causal_settings_from_json(const json& j) {
  CausalSettings s;
  if (!j.is_object()) throw std::invalid_argument("causal settings must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "bins") s.bins = value.get<int>();
    else if (key == "alpha") s.alpha = value.get<double>();
    else if (key == "mode") s.mode = engine_mode_from_string(value.get<std::string>());
    else if (key == "treat") s.treat = value.get<double>();
    else if (key == "control") s.control = value.get<double>();
    else throw std::invalid_argument("unknown key 'causal." + key + "'");
  }
  return s;
}

json to_json(const CausalHypergraph& graph) {
  json edges = json::array();
  for (const auto& e : graph.edges) edges.push_back({{"tail", e.tail}, {"head", e.head}});
  return {{"variables", graph.variables}, {"edges", std::move(edges)}};
}

json to_json(const DiscretizationScheme& scheme) {
  json vars = json::array();
  for (const auto& v : scheme.variables) {
    vars.push_back({{"name", v.name},
                    {"discrete", v.discrete},
                    {"levels", v.levels},
                    {"cut_points", v.cut_points},
                    {"representatives", v.representatives}});
  }
  return vars;
}

json to_json(const ConditionalTable& t) {
  return {{"head", t.head},
          {"tail", t.tail},
          {"tail_cardinality", t.tail_cardinality},
          {"head_cardinality", t.head_cardinality},
          {"alpha", t.alpha},
          {"counts", t.counts},
          {"probabilities", t.probabilities}};
}

json to_json(const InterventionResult& r) {
  return {{"treatment_value", r.treatment_value}, {"distribution", r.distribution}, {"expected", r.expected}};
}

json to_json(const StratumTest& t) {
  return {{"stratum_bin", t.stratum_bin}, {"records", t.records}, {"chi_square", number(t.chi_square)},
          {"dof", t.dof},          {"p_value", number(t.p_value)}, {"skipped", t.skipped}};
}

json to_json(const CausalAnalysis& a) {
  const auto list = [](const auto& items) {
    json out = json::array();
    for (const auto& item : items) out.push_back(to_json(item));
    return out;
  };
  return {{"settings", to_json(a.settings)},
          {"graph", to_json(a.graph)},
          {"records", a.records},
          {"scheme", to_json(a.scheme)},
          {"tables", list(a.tables)},
          {"algorithm1_tables", list(a.algorithm1_tables)},
          {"hypergraph_results", list(a.hypergraph_results)},
          {"algorithm1_results", list(a.algorithm1_results)},
          {"ate_hypergraph", a.ate_hypergraph},
          {"ate_algorithm1", a.ate_algorithm1},
          {"backdoor", list(a.backdoor)}};
}

}  // namespace batchcausal
