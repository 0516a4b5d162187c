#include "batchcausal/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <initializer_list>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string_view>
#include <thread>

namespace batchcausal {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::string_view section, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + (section.empty() ? key : std::string(section) + "." + key) + "'");
    }
  }
}

template <typename T>
T get(const json& j, const char* key, std::string_view section, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("wrong type for '" + std::string(section) + "." + key + "'");
  }
}

std::string_view to_string(DatasetGenerator g) {
  switch (g) {
    case DatasetGenerator::blobs: return "blobs";
    case DatasetGenerator::sbm: return "sbm";
    case DatasetGenerator::tabular: return "tabular";
  }
  return "blobs";
}

DatasetGenerator generator_from_string(const std::string& name) {
  if (name == "blobs") return DatasetGenerator::blobs;
  if (name == "sbm") return DatasetGenerator::sbm;
  if (name == "tabular") return DatasetGenerator::tabular;
  throw ConfigError("unknown dataset generator '" + name + "'");
}

template <typename Fn>
auto enum_field(const json& j, const char* key, std::string_view section, Fn parse, decltype(parse("")) fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) throw ConfigError("wrong type for '" + std::string(section) + "." + key + "'");
  try {
    return parse(it->get<std::string>());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}

DatasetSpec dataset_from_json(const json& j) {
  DatasetSpec d;
  if (!j.is_object()) throw ConfigError("dataset must be an object");
  if (!j.contains("generator")) throw ConfigError("missing required key 'dataset.generator'");
  d.generator = generator_from_string(get<std::string>(j, "generator", "dataset", ""));
  d.name = get<std::string>(j, "name", "dataset", "");
  if (j.contains("splits")) {
    const auto f = get<std::vector<double>>(j, "splits", "dataset", {});
    if (f.size() != 3) throw ConfigError("dataset.splits must hold three fractions");
    d.fractions = {f[0], f[1], f[2]};
  }
  switch (d.generator) {
    case DatasetGenerator::blobs:
      check_keys(j, "dataset", {"generator", "name", "splits", "n", "dim", "classes", "separation", "label_noise", "seed"});
      d.blobs.n = get(j, "n", "dataset", d.blobs.n);
      d.blobs.dim = get(j, "dim", "dataset", d.blobs.dim);
      d.blobs.classes = get(j, "classes", "dataset", d.blobs.classes);
      d.blobs.separation = get(j, "separation", "dataset", d.blobs.separation);
      d.blobs.label_noise = get(j, "label_noise", "dataset", d.blobs.label_noise);
      d.blobs.seed = get(j, "seed", "dataset", d.blobs.seed);
      d.blobs.fractions = d.fractions;
      break;
    case DatasetGenerator::sbm:
      check_keys(j, "dataset", {"generator", "name", "splits", "n", "classes", "p_in", "p_out", "dim", "feature_signal", "seed"});
      d.sbm.n = get(j, "n", "dataset", d.sbm.n);
      d.sbm.classes = get(j, "classes", "dataset", d.sbm.classes);
      d.sbm.p_in = get(j, "p_in", "dataset", d.sbm.p_in);
      d.sbm.p_out = get(j, "p_out", "dataset", d.sbm.p_out);
      d.sbm.dim = get(j, "dim", "dataset", d.sbm.dim);
      d.sbm.feature_signal = get(j, "feature_signal", "dataset", d.sbm.feature_signal);
      d.sbm.seed = get(j, "seed", "dataset", d.sbm.seed);
      d.sbm.fractions = d.fractions;
      break;
    case DatasetGenerator::tabular:
      check_keys(j, "dataset", {"generator", "name", "splits", "nodes", "edges", "split_seed"});
      if (!j.contains("nodes") || !j.contains("edges")) {
        throw ConfigError("missing required key 'dataset.nodes' or 'dataset.edges'");
      }
      d.nodes_path = get<std::string>(j, "nodes", "dataset", "");
      d.edges_path = get<std::string>(j, "edges", "dataset", "");
      d.split_seed = get(j, "split_seed", "dataset", d.split_seed);
      break;
  }
  return d;
}

json to_json(const DatasetSpec& d) {
  json j = {{"generator", std::string(to_string(d.generator))},
            {"splits", {d.fractions[0], d.fractions[1], d.fractions[2]}}};
  if (!d.name.empty()) j["name"] = d.name;
  switch (d.generator) {
    case DatasetGenerator::blobs:
      j.update({{"n", d.blobs.n}, {"dim", d.blobs.dim}, {"classes", d.blobs.classes},
                {"separation", d.blobs.separation}, {"label_noise", d.blobs.label_noise}, {"seed", d.blobs.seed}});
      break;
    case DatasetGenerator::sbm:
      j.update({{"n", d.sbm.n}, {"classes", d.sbm.classes}, {"p_in", d.sbm.p_in}, {"p_out", d.sbm.p_out},
                {"dim", d.sbm.dim}, {"feature_signal", d.sbm.feature_signal}, {"seed", d.sbm.seed}});
      break;
    case DatasetGenerator::tabular:
      j.update({{"nodes", d.nodes_path.string()}, {"edges", d.edges_path.string()}, {"split_seed", d.split_seed}});
      break;
  }
  return j;
}

ModelSpec model_from_json(const json& j) {
  check_keys(j, "model", {"kind", "hidden", "diffusion_alpha", "diffusion_beta", "diffusion_steps"});
  if (!j.contains("kind")) throw ConfigError("missing required key 'model.kind'");
  ModelSpec m;
  m.kind = enum_field(j, "kind", "model", [](const std::string& s) { return model_kind_from_string(s); }, m.kind);
  if (m.kind != ModelKind::logistic) m.hidden = 64;
  m.hidden = get(j, "hidden", "model", m.hidden);
  m.diffusion_alpha = get(j, "diffusion_alpha", "model", m.diffusion_alpha);
  m.diffusion_beta = get(j, "diffusion_beta", "model", m.diffusion_beta);
  m.diffusion_steps = get(j, "diffusion_steps", "model", m.diffusion_steps);
  return m;
}

json to_json(const ModelSpec& m) {
  return {{"kind", std::string(to_string(m.kind))}, {"hidden", m.hidden}, {"diffusion_alpha", m.diffusion_alpha},
          {"diffusion_beta", m.diffusion_beta}, {"diffusion_steps", m.diffusion_steps}};
}

Ablation ablation_from_json(const json& j) {
  Ablation a;
  if (j.is_string()) {
    a.kind = enum_field(json{{"kind", j}}, "kind", "ablations", [](const std::string& s) { return ablation_kind_from_string(s); }, a.kind);
    return a;
  }
  check_keys(j, "ablations[]", {"kind", "rho", "l1", "l2"});
  if (!j.contains("kind")) throw ConfigError("missing required key 'ablations[].kind'");
  a.kind = enum_field(j, "kind", "ablations[]", [](const std::string& s) { return ablation_kind_from_string(s); }, a.kind);
  a.rho = get(j, "rho", "ablations[]", a.rho);
  a.l1 = get(j, "l1", "ablations[]", a.l1);
  a.l2 = get(j, "l2", "ablations[]", a.l2);
  return a;
}

TrainConfig train_from_json(const json& j) {
  check_keys(j, "train", {"epochs", "lr", "lr_schedule", "optimizer", "lambda_causal", "early_stop_patience",
                          "probe_size", "log_epoch_noise", "power", "batch_schedule"});
  TrainConfig t;
  t.epochs = get(j, "epochs", "train", t.epochs);
  t.lr = get(j, "lr", "train", t.lr);
  t.lr_schedule = enum_field(j, "lr_schedule", "train", [](const std::string& s) { return lr_schedule_from_string(s); }, t.lr_schedule);
  t.optimizer = enum_field(j, "optimizer", "train", [](const std::string& s) { return optimizer_from_string(s); }, t.optimizer);
  t.lambda_causal = get(j, "lambda_causal", "train", t.lambda_causal);
  if (auto it = j.find("early_stop_patience"); it != j.end()) {
    if (it->is_null()) t.early_stop_patience.reset();
    else t.early_stop_patience = get<int>(j, "early_stop_patience", "train", 0);
  }
  t.probe_size = get(j, "probe_size", "train", t.probe_size);
  t.log_epoch_noise = get(j, "log_epoch_noise", "train", t.log_epoch_noise);
  if (auto it = j.find("power"); it != j.end()) {
    check_keys(*it, "train.power", {"max_iters", "tol", "seed"});
    t.power.max_iters = get(*it, "max_iters", "train.power", t.power.max_iters);
    t.power.tol = get(*it, "tol", "train.power", t.power.tol);
    t.power.seed = get(*it, "seed", "train.power", t.power.seed);
  }
  if (auto it = j.find("batch_schedule"); it != j.end()) {
    check_keys(*it, "train.batch_schedule", {"progressive", "start", "factor", "every_epochs"});
    t.batch_schedule.progressive = get(*it, "progressive", "train.batch_schedule", t.batch_schedule.progressive);
    t.batch_schedule.start = get(*it, "start", "train.batch_schedule", t.batch_schedule.start);
    t.batch_schedule.factor = get(*it, "factor", "train.batch_schedule", t.batch_schedule.factor);
    t.batch_schedule.every_epochs = get(*it, "every_epochs", "train.batch_schedule", t.batch_schedule.every_epochs);
  }
  return t;
}

json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"lr", t.lr},
          {"lr_schedule", std::string(to_string(t.lr_schedule))},
          {"optimizer", std::string(to_string(t.optimizer))},
          {"lambda_causal", t.lambda_causal},
          {"early_stop_patience", t.early_stop_patience ? json(*t.early_stop_patience) : json(nullptr)},
          {"probe_size", t.probe_size},
          {"log_epoch_noise", t.log_epoch_noise},
          {"power", {{"max_iters", t.power.max_iters}, {"tol", t.power.tol}, {"seed", t.power.seed}}},
          {"batch_schedule",
           {{"progressive", t.batch_schedule.progressive},
            {"start", t.batch_schedule.start},
            {"factor", t.batch_schedule.factor},
            {"every_epochs", t.batch_schedule.every_epochs}}}};
}

}  // namespace

std::string dataset_id(const DatasetSpec& spec) {
  if (!spec.name.empty()) return spec.name;
  switch (spec.generator) {
    case DatasetGenerator::blobs: return "blobs-seed" + std::to_string(spec.blobs.seed);
    case DatasetGenerator::sbm: return "sbm-seed" + std::to_string(spec.sbm.seed);
    case DatasetGenerator::tabular: return spec.nodes_path.stem().string();
  }
  return "dataset";
}

DatasetBundle make_dataset(const DatasetSpec& spec) {
  switch (spec.generator) {
    case DatasetGenerator::blobs: return make_blobs(spec.blobs);
    case DatasetGenerator::sbm: return make_sbm_graph(spec.sbm);
    case DatasetGenerator::tabular:
      return load_tabular_graph(spec.nodes_path, spec.edges_path, spec.fractions, spec.split_seed);
  }
  throw std::logic_error("unknown dataset generator");
}

SweepConfig sweep_config_from_json(const json& j) {
  check_keys(j, "", {"dataset", "model", "batch_sizes", "seeds", "train", "ablations", "causal", "output_dir",
                     "parallelism"});
  if (!j.contains("dataset")) throw ConfigError("missing required key 'dataset'");
  if (!j.contains("model")) throw ConfigError("missing required key 'model'");
  SweepConfig c;
  c.dataset = dataset_from_json(j.at("dataset"));
  c.model = model_from_json(j.at("model"));
  if (j.contains("batch_sizes")) c.batch_sizes = get<std::vector<int>>(j, "batch_sizes", "", {});
  if (auto it = j.find("seeds"); it != j.end()) {
    if (it->is_number_integer()) {
      const auto count = it->get<long long>();
      if (count < 1) throw ConfigError("seeds must be >= 1");
      c.seeds.clear();
      for (long long s = 0; s < count; ++s) c.seeds.push_back(static_cast<std::uint64_t>(s));
    } else {
      c.seeds = get<std::vector<std::uint64_t>>(j, "seeds", "", {});
    }
  }
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (auto it = j.find("ablations"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("ablations must be an array");
    for (const auto& a : *it) c.ablations.push_back(ablation_from_json(a));
  }
  if (j.contains("causal")) {
    try {
      c.causal = causal_settings_from_json(j.at("causal"));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("output_dir")) c.output_dir = get<std::string>(j, "output_dir", "", "");
  c.parallelism = get(j, "parallelism", "", c.parallelism);
  validate(c);
  return c;
}

json to_json(const SweepConfig& c) {
  json ablations = json::array();
  for (const auto& a : c.ablations) {
    ablations.push_back({{"kind", std::string(to_string(a.kind))}, {"rho", a.rho}, {"l1", a.l1}, {"l2", a.l2}});
  }
  json j = {{"dataset", to_json(c.dataset)},
            {"model", to_json(c.model)},
            {"batch_sizes", c.batch_sizes},
            {"seeds", c.seeds},
            {"train", to_json(c.train)},
            {"ablations", std::move(ablations)},
            {"causal", to_json(c.causal)},
            {"parallelism", c.parallelism}};
  if (c.output_dir) j["output_dir"] = c.output_dir->string();
  return j;
}

SweepConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return sweep_config_from_json(j);
}

void validate(const SweepConfig& c) {
  if (c.batch_sizes.empty()) throw ConfigError("batch_sizes must not be empty");
  std::set<int> seen_b;
  for (int b : c.batch_sizes) {
    if (b < 1) throw ConfigError("batch size " + std::to_string(b) + " is not positive");
    if (!seen_b.insert(b).second) throw ConfigError("batch size " + std::to_string(b) + " is repeated");
  }
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  std::set<std::string> labels;
  for (const auto& a : c.ablations) {
    if (a.kind == AblationKind::none) throw ConfigError("ablation 'none' is implicit and must not be listed");
    if (!labels.insert(a.label()).second) throw ConfigError("ablation " + a.label() + " is repeated");
  }
  if (c.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (c.causal.bins < 1) throw ConfigError("causal.bins must be >= 1");
  if (!(c.causal.alpha >= 0.0)) throw ConfigError("causal.alpha must be >= 0");
  const auto has_level = [&](double v) {
    return std::any_of(c.batch_sizes.begin(), c.batch_sizes.end(), [&](int b) { return b == v; });
  };
  if (!has_level(c.causal.treat) || !has_level(c.causal.control)) {
    throw ConfigError("causal treat/control levels must be among batch_sizes");
  }
  const auto& d = c.dataset;
  if (d.generator == DatasetGenerator::blobs) {
    if (d.blobs.classes < 2 || d.blobs.n < d.blobs.classes) throw ConfigError("blobs needs n >= classes >= 2");
    if (!(d.blobs.separation > 0.0)) throw ConfigError("blobs separation must be > 0");
    if (!(d.blobs.label_noise >= 0.0 && d.blobs.label_noise < 0.5)) {
      throw ConfigError("blobs label_noise must lie in [0, 0.5)");
    }
    if (d.blobs.dim < 1) throw ConfigError("blobs dim must be >= 1");
  } else if (d.generator == DatasetGenerator::sbm) {
    if (!(d.sbm.p_out >= 0.0 && d.sbm.p_out < d.sbm.p_in && d.sbm.p_in <= 1.0)) {
      throw ConfigError("sbm needs 0 <= p_out < p_in <= 1");
    }
  }
  double fsum = 0.0;
  for (double f : d.fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    fsum += f;
  }
  if (fsum > 1.0 + 1e-12) throw ConfigError("split fractions exceed 1");
  TrainConfig probe = c.train;
  probe.model = c.model;
  if (probe.model.input_dim < 1) probe.model.input_dim = 1;
  probe.batch_size = c.batch_sizes.front();
  try {
    validate(probe);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::filesystem::path resolve_output_dir(const SweepConfig& config) {
  if (config.output_dir) return *config.output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return env;
  return "batchcausal-out";
}

std::vector<PlannedRun> plan_runs(const SweepConfig& config) {
  std::vector<Ablation> variants{Ablation{}};
  variants.insert(variants.end(), config.ablations.begin(), config.ablations.end());
  std::vector<PlannedRun> runs;
  for (int b : config.batch_sizes) {
    for (auto seed : config.seeds) {
      for (const auto& a : variants) runs.push_back({b, seed, a});
    }
  }
  std::sort(runs.begin(), runs.end(), [](const PlannedRun& x, const PlannedRun& y) {
    return std::tuple(x.batch_size, x.seed, x.ablation.label()) < std::tuple(y.batch_size, y.seed, y.ablation.label());
  });
  return runs;
}

TrainConfig train_config_for(const SweepConfig& config, const DatasetBundle& data, const PlannedRun& run) {
  TrainConfig t = config.train;
  t.model = config.model;
  t.model.input_dim = static_cast<int>(data.feature_dim());
  t.model.classes = data.num_classes;
  t.batch_size = run.batch_size;
  t.seed = run.seed;
  t.ablation = run.ablation;
  return t;
}

SweepResult run_sweep(const SweepConfig& config, const SweepOptions& options) {
  validate(config);
  SweepResult result;
  result.records_path = options.records_path.value_or(resolve_output_dir(config) / kRecordFileName);
  const std::string id = dataset_id(config.dataset);

  std::vector<RunRecord> existing;
  if (std::filesystem::exists(result.records_path)) {
    result.quarantined = quarantine_truncated_tail(result.records_path);
    existing = read_record_file(result.records_path).records;
  }
  std::set<RecordKey> done;
  for (const auto& r : existing) {
    if (r.dataset_id != id) {
      throw ConfigError("record file " + result.records_path.string() + " holds runs for dataset '" + r.dataset_id +
                        "', not '" + id + "'");
    }
    done.insert(record_key(r));
  }

  std::vector<PlannedRun> pending;
  for (const auto& run : plan_runs(config)) {
    if (done.count({run.batch_size, run.seed, run.ablation.label()})) ++result.skipped;
    else pending.push_back(run);
  }

  std::vector<RunRecord> fresh(pending.size());
  if (!pending.empty()) {
    const DatasetBundle data = make_dataset(config.dataset);
    RecordWriter writer(result.records_path);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> finished{0};
    std::mutex callback_mutex;
    std::exception_ptr failure;
    std::mutex failure_mutex;

    const auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= pending.size()) return;
        {
          std::lock_guard lock(failure_mutex);
          if (failure) return;
        }
        try {
          fresh[i] = train_run(data, train_config_for(config, data, pending[i]), id);
          writer.append(fresh[i]);
          const std::size_t n_done = finished.fetch_add(1) + 1;
          if (options.on_record) {
            std::lock_guard lock(callback_mutex);
            options.on_record(fresh[i], n_done, pending.size());
          }
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };

    const int workers = std::max(1, std::min<int>(options.parallelism.value_or(config.parallelism),
                                                  static_cast<int>(pending.size())));
    if (workers == 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    result.new_runs = pending.size();
  }

  result.records = std::move(existing);
  result.records.insert(result.records.end(), std::make_move_iterator(fresh.begin()),
                        std::make_move_iterator(fresh.end()));
  sort_records(result.records);
  return result;
}

ObservationTable observations_from_records(const std::vector<RunRecord>& records) {
  std::vector<double> b, n, s, c, g;
  for (const auto& r : records) {
    if (r.ablation.kind != AblationKind::none || r.status == RunStatus::degenerate || !r.final_measurement) continue;
    const Measurement& m = *r.final_measurement;
    b.push_back(r.batch_size);
    n.push_back(m.grad_noise);
    s.push_back(m.sharpness);
    c.push_back(m.complexity);
    g.push_back(m.gen.test_accuracy);
  }
  ObservationTable t;
  t.add_column("B", std::move(b));
  t.add_column("N", std::move(n));
  t.add_column("S", std::move(s));
  t.add_column("C", std::move(c));
  t.add_column("G", std::move(g));
  return t;
}

}  // namespace batchcausal
