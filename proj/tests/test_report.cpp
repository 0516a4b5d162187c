#include "batchcausal/records.hpp"
#include "batchcausal/report.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace batchcausal;
namespace fs = std::filesystem;

namespace {

RunRecord record(int b, std::uint64_t seed, double acc, double noise, double sharp) {
  RunRecord r;
  r.batch_size = b;
  r.seed = seed;
  r.run_id = make_run_id(b, seed, r.ablation);
  r.dataset_id = "blobs-seed0";
  r.series.train_loss = {0.5};
  r.series.val_loss = {0.5};
  r.series.test_loss = {0.5};
  r.series.test_acc = {acc};
  r.series.lr = {1e-3};
  r.series.batch_size = {b};
  r.series.epoch_wall_seconds = {0.1};
  r.final_measurement = Measurement{noise, sharp, 1.0 / sharp + std::log(noise), {acc, 0.01}, b, 1};
  r.effective_noise_batch = b;
  return r;
}

}  // namespace

TEST_CASE("percent cells") {
  const std::vector<double> accs{0.80, 0.82};
  CHECK(format_percent_cell(summarize(accs)) == "81.0 ± 1.4");
  const std::vector<double> one{0.839};
  CHECK(format_percent_cell(summarize(one)) == "83.9");
}

TEST_CASE("cell statistics group by batch size and ablation") {
  std::vector<RunRecord> recs{record(16, 0, 0.80, 0.1, 1.0), record(16, 1, 0.82, 0.1, 2.0), record(512, 0, 0.7, 0.01, 3.0)};
  auto abl = record(16, 0, 0.5, 0.01, 1.0);
  abl.ablation.kind = AblationKind::no_noise_averaging;
  abl.run_id = make_run_id(16, 0, abl.ablation);
  recs.push_back(abl);
  const auto cells = cell_statistics(recs);
  REQUIRE(cells.size() == 3);
  CHECK(cells[0].batch_size == 16);
  CHECK(cells[0].ablation == "none");
  CHECK(cells[0].runs == 2);
  CHECK(cells[0].median_sharpness == doctest::Approx(1.5));
  CHECK(cells[1].batch_size == 512);
  CHECK(cells[2].ablation == "no_noise_averaging");
}

TEST_CASE("equal accuracies give zero effect and p = 1") {
  std::vector<RunRecord> recs;
  for (std::uint64_t s = 0; s < 4; ++s) {
    recs.push_back(record(16, s, 0.8, 0.2 + 0.01 * s, 1.0 + 0.1 * s));
    recs.push_back(record(512, s, 0.8, 0.02 + 0.001 * s, 1.5 + 0.1 * s));
  }
  const auto a = analyze_records(recs, CausalSettings{});
  CHECK(a.constant_outcome);
  REQUIRE(a.ate_hypergraph.has_value());
  CHECK(*a.ate_hypergraph == 0.0);
  CHECK(*a.ate_algorithm1 == 0.0);
  REQUIRE(a.significance.welch.has_value());
  CHECK(a.significance.welch->p == 1.0);
  REQUIRE(a.significance.wilcoxon.has_value());
  CHECK(a.significance.wilcoxon->p == 1.0);

  const auto dir = fs::temp_directory_path() / "batchcausal-test-report";
  fs::remove_all(dir);
  const auto files = emit_report(recs, CausalSettings{}, dir);
  CHECK(fs::exists(files.text));
  CHECK(fs::exists(dir / "accuracy.csv"));
  CHECK(fs::exists(dir / "ate.csv"));
  std::ifstream in(files.text);
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  CHECK(text.find("81.0") == std::string::npos);
  CHECK(text.find("80.0") != std::string::npos);
  CHECK_THROWS_AS(emit_report({}, CausalSettings{}, dir), std::invalid_argument);
}

TEST_CASE("causal analysis of varied records") {
  std::vector<RunRecord> recs;
  for (std::uint64_t s = 0; s < 6; ++s) {
    recs.push_back(record(16, s, 0.80 + 0.01 * s, 0.2 + 0.01 * s, 1.0 + 0.1 * s));
    recs.push_back(record(512, s, 0.70 + 0.01 * s, 0.02 + 0.001 * s, 1.5 + 0.1 * s));
  }
  const auto a = analyze_records(recs, CausalSettings{});
  REQUIRE(a.causal.has_value());
  CHECK(a.observations == 12);
  CHECK(*a.ate_hypergraph > 0);
  CHECK(a.significance.welch->t > 0);
  CHECK(a.significance.pairs == 6);
  for (const auto& r : a.hypergraph_results) {
    double sum = 0;
    for (double p : r.distribution) sum += p;
    CHECK(std::abs(sum - 1) <= 1e-12);
  }
}

TEST_CASE("published point values reproduce the per-dataset differences") {
  const std::vector<AteRow> rows{{"Cora", 83.9, 80.5}, {"CiteSeer", 79.1, 76.0}, {"PubMed", 88.2, 84.8}, {"Amazon", 92.4, 89.0}};
  const auto t = tabulate_ate(rows, 2.4);
  const std::vector<double> expected{3.4, 3.1, 3.4, 3.4};
  for (std::size_t i = 0; i < 4; ++i) CHECK(t.differences[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  CHECK(t.mean_difference == doctest::Approx(3.325));
  CHECK(t.discrepant);
  CHECK(format_ate_table(t).find("3.4") != std::string::npos);
  CHECK_FALSE(tabulate_ate(rows, 3.3).discrepant);

  const auto path = fs::temp_directory_path() / "batchcausal-test-ate.csv";
  std::ofstream(path) << "dataset,treat,control\nCora,83.9,80.5\n";
  const auto read = read_ate_values(path);
  REQUIRE(read.size() == 1);
  CHECK(tabulate_ate(read).differences[0] == doctest::Approx(3.4));
}
