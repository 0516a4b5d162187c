#pragma once

#include "batchcausal/causal.hpp"
#include "batchcausal/datasets.hpp"
#include "batchcausal/records.hpp"
#include "batchcausal/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace batchcausal {

// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "BATCHCAUSAL_OUT";
inline constexpr const char* kRecordFileName = "records.jsonl";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DatasetGenerator { blobs, sbm, tabular };

struct DatasetSpec {
  DatasetGenerator generator = DatasetGenerator::blobs;
  std::string name;  // empty: derived from generator and seed
  BlobsParams blobs;
  SbmParams sbm;
  std::filesystem::path nodes_path;
  std::filesystem::path edges_path;
  std::uint64_t split_seed = 0;
  SplitFractions fractions = kDefaultSplit;

  bool operator==(const DatasetSpec&) const = default;
};

std::string dataset_id(const DatasetSpec& spec);
DatasetBundle make_dataset(const DatasetSpec& spec);

struct SweepConfig {
  DatasetSpec dataset;
  ModelSpec model;  // input_dim and classes are taken from the dataset
  std::vector<int> batch_sizes{16, 32, 64, 128, 256, 512};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  TrainConfig train;  // template; batch_size, seed and ablation are set per run
  std::vector<Ablation> ablations;
  CausalSettings causal;
  std::optional<std::filesystem::path> output_dir;
  int parallelism = 1;

  bool operator==(const SweepConfig&) const = default;
};

SweepConfig sweep_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SweepConfig& config);
// Throws ConfigError (unknown keys are named) or std::runtime_error for I/O.
SweepConfig parse_config(const std::filesystem::path& path);
void validate(const SweepConfig& config);

// Explicit output_dir, else $BATCHCAUSAL_OUT, else ./batchcausal-out.
std::filesystem::path resolve_output_dir(const SweepConfig& config);

// One TrainConfig per (B, seed, ablation), in sorted key order.
struct PlannedRun {
  int batch_size = 0;
  std::uint64_t seed = 0;
  Ablation ablation;
};
std::vector<PlannedRun> plan_runs(const SweepConfig& config);
TrainConfig train_config_for(const SweepConfig& config, const DatasetBundle& data, const PlannedRun& run);

struct SweepOptions {
  std::optional<std::filesystem::path> records_path;  // default: <output dir>/records.jsonl
  std::optional<int> parallelism;                     // overrides the config
  std::function<void(const RunRecord&, std::size_t done, std::size_t total)> on_record;
};

struct SweepResult {
  std::filesystem::path records_path;
  std::vector<RunRecord> records;  // existing + new, sorted by (B, seed, ablation)
  std::size_t new_runs = 0;
  std::size_t skipped = 0;
  bool quarantined = false;
};

// Runs every planned (B, seed, ablation) triple not already in the record
// file, appending each record as it completes.
SweepResult run_sweep(const SweepConfig& config, const SweepOptions& options = {});

// Analysis rows: unablated, non-degenerate runs with a final measurement.
// Columns B, N, S, C, G (G = test accuracy).
ObservationTable observations_from_records(const std::vector<RunRecord>& records);

}  // namespace batchcausal
