#include "batchcausal/records.hpp"
#include "batchcausal/runner.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

using namespace batchcausal;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("batchcausal-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunRecord sample_record(int b, std::uint64_t seed) {
  RunRecord r;
  r.batch_size = b;
  r.seed = seed;
  r.run_id = make_run_id(b, seed, r.ablation);
  r.dataset_id = "blobs-seed0";
  r.series.train_loss = {0.7, 0.5};
  r.series.val_loss = {0.72, std::nan("")};
  r.series.test_loss = {0.71, 0.55};
  r.series.test_acc = {0.6, 0.75};
  r.series.lr = {1e-3, 1e-3};
  r.series.batch_size = {b, b};
  r.series.epoch_wall_seconds = {0.01, 0.02};
  r.final_measurement = Measurement{0.25, 1.5, 1.0 / 1.5 + std::log(0.25), {0.75, 0.04}, b, 2};
  r.effective_noise_batch = b;
  return r;
}

SweepConfig tiny_config() {
  auto j = nlohmann::json::parse(R"({
    "dataset": {"generator": "blobs", "n": 120, "dim": 4, "classes": 2, "separation": 3.0, "seed": 0},
    "model": {"kind": "mlp1", "hidden": 8},
    "batch_sizes": [16, 512],
    "seeds": [0, 1],
    "train": {"epochs": 3, "probe_size": 32},
    "causal": {"treat": 16, "control": 512}
  })");
  return sweep_config_from_json(j);
}

}  // namespace

TEST_CASE("record round trip through a JSON line") {
  const auto r = sample_record(16, 3);
  const std::string line = serialize_record(r);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(nlohmann::json::parse(line).at("schema_version") == kRecordSchemaVersion);
  const auto back = parse_record_line(line);
  CHECK(same_record(r, back));
  CHECK(std::isnan(back.series.val_loss[1]));
  CHECK(back.final_measurement->gen.test_accuracy == 0.75);

  auto j = nlohmann::json::parse(line);
  j["schema_version"] = 99;
  CHECK_THROWS_AS(run_record_from_json(j), RecordFormatError);
  CHECK_THROWS_AS(parse_record_line("{\"run_id\": 1"), RecordFormatError);
}

TEST_CASE("record files: ordering, malformed lines and truncated tails") {
  const auto dir = scratch_dir("records");
  const auto path = dir / "records.jsonl";
  std::vector<RunRecord> recs{sample_record(512, 0), sample_record(16, 1), sample_record(16, 0)};
  write_record_file(path, recs);
  auto file = read_record_file(path);
  CHECK(file.records.size() == 3);
  CHECK_FALSE(file.truncated_tail);
  sort_records(file.records);
  CHECK(record_key(file.records.front()) == RecordKey{16, 0, "none"});
  CHECK(record_key(file.records.back()) == RecordKey{512, 0, "none"});

  { std::ofstream(path, std::ios::app) << serialize_record(sample_record(64, 0)).substr(0, 40); }
  file = read_record_file(path);
  CHECK(file.truncated_tail);
  CHECK(file.records.size() == 3);
  CHECK(quarantine_truncated_tail(path));
  CHECK(fs::exists(fs::path(path.string() + ".quarantine")));
  file = read_record_file(path);
  CHECK_FALSE(file.truncated_tail);
  CHECK(file.records.size() == 3);
  CHECK_FALSE(quarantine_truncated_tail(path));

  const auto bad = dir / "bad.jsonl";
  { std::ofstream(bad) << serialize_record(recs[0]) << "\nnot json\n" << serialize_record(recs[1]) << "\n"; }
  try {
    read_record_file(bad);
    FAIL("expected a format error");
  } catch (const RecordFormatError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("config defaults, validation and round trip") {
  const auto minimal = sweep_config_from_json(nlohmann::json::parse(
      R"({"dataset": {"generator": "blobs"}, "model": {"kind": "mlp1"}})"));
  CHECK(minimal.batch_sizes == std::vector<int>{16, 32, 64, 128, 256, 512});
  CHECK(minimal.seeds.size() == 10);
  CHECK(minimal.parallelism == 1);

  auto j = to_json(tiny_config());
  j["batch_sizes"] = {0, 16};
  CHECK_THROWS_AS(sweep_config_from_json(j), ConfigError);

  auto unknown = to_json(tiny_config());
  unknown["batch_szies"] = {16};
  try {
    sweep_config_from_json(unknown);
    FAIL("expected unknown key error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("batch_szies") != std::string::npos);
  }

  auto bad_contrast = to_json(tiny_config());
  bad_contrast["causal"]["treat"] = 32;
  CHECK_THROWS_AS(sweep_config_from_json(bad_contrast), ConfigError);

  const auto cfg = tiny_config();
  CHECK(sweep_config_from_json(to_json(cfg)) == cfg);

  auto with_ablations = to_json(cfg);
  with_ablations["ablations"] = nlohmann::json::array({"no_noise_averaging", {{"kind", "sam"}, {"rho", 0.1}}});
  const auto abl = sweep_config_from_json(with_ablations);
  REQUIRE(abl.ablations.size() == 2);
  CHECK(abl.ablations[1].rho == 0.1);
  CHECK(plan_runs(abl).size() == 2 * 2 * 3);
  CHECK(sweep_config_from_json(to_json(abl)) == abl);

  const auto dir = scratch_dir("config");
  { std::ofstream(dir / "c.json") << "// comment\n" << to_json(cfg).dump(2); }
  CHECK(parse_config(dir / "c.json") == cfg);
  CHECK_THROWS(parse_config(dir / "missing.json"));
}

TEST_CASE("output directory resolution") {
  auto cfg = tiny_config();
  cfg.output_dir = "/explicit";
  CHECK(resolve_output_dir(cfg) == fs::path("/explicit"));
  cfg.output_dir.reset();
  ::setenv(kOutputDirEnv, "/from-env", 1);
  CHECK(resolve_output_dir(cfg) == fs::path("/from-env"));
  ::unsetenv(kOutputDirEnv);
  CHECK(resolve_output_dir(cfg) == fs::path("batchcausal-out"));
}

TEST_CASE("sweep counts, resumes and matches serial output in parallel") {
  const auto dir = scratch_dir("sweep");
  auto cfg = tiny_config();
  SweepOptions serial;
  serial.records_path = dir / "serial.jsonl";
  const auto first = run_sweep(cfg, serial);
  CHECK(first.new_runs == 4);
  CHECK(first.records.size() == 4);
  CHECK(read_record_file(dir / "serial.jsonl").records.size() == 4);

  const auto again = run_sweep(cfg, serial);
  CHECK(again.new_runs == 0);
  CHECK(again.skipped == 4);
  REQUIRE(again.records.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(same_record(first.records[i], again.records[i]));

  SweepOptions parallel;
  parallel.records_path = dir / "parallel.jsonl";
  parallel.parallelism = 4;
  const auto par = run_sweep(cfg, parallel);
  REQUIRE(par.records.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(same_record(first.records[i], par.records[i]));

  const auto obs = observations_from_records(par.records);
  CHECK(obs.rows() == 4);
  CHECK(obs.names == std::vector<std::string>{"B", "N", "S", "C", "G"});

  auto other = cfg;
  other.dataset.blobs.seed = 7;
  CHECK_THROWS(run_sweep(other, serial));
}
