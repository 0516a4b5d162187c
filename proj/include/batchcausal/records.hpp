#pragma once

#include "batchcausal/causal.hpp"
#include "batchcausal/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace batchcausal {

inline constexpr int kRecordSchemaVersion = 1;

class RecordFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const RunRecord& record);
// Throws RecordFormatError on missing fields, wrong types or an unsupported schema version.
RunRecord run_record_from_json(const nlohmann::json& j);

// Single-line JSON, no trailing newline.
std::string serialize_record(const RunRecord& record);
RunRecord parse_record_line(const std::string& line);

// Equality on everything except wall-clock series.
bool same_record(const RunRecord& a, const RunRecord& b);

using RecordKey = std::tuple<int, std::uint64_t, std::string>;  // (B, seed, ablation label)
RecordKey record_key(const RunRecord& record);

// Sort by (B, seed, ablation label).
void sort_records(std::vector<RunRecord>& records);

struct RecordFile {
  std::vector<RunRecord> records;
  bool truncated_tail = false;   // final line lacked a newline and did not parse
  std::string truncated_line;
};

// Reads a JSON Lines record file. A malformed line that is not the
// unterminated final line raises RecordFormatError naming the line number.
RecordFile read_record_file(const std::filesystem::path& path);

// Moves a truncated final line into `<path>.quarantine` and cuts it from the
// record file. Returns true when something was quarantined.
bool quarantine_truncated_tail(const std::filesystem::path& path);

// Append-only writer; each record is flushed as one complete line.
class RecordWriter {
 public:
  explicit RecordWriter(std::filesystem::path path);
  void append(const RunRecord& record);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

void write_record_file(const std::filesystem::path& path, const std::vector<RunRecord>& records);

nlohmann::json to_json(const CausalSettings& settings);
CausalSettings causal_settings_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CausalHypergraph& graph);
nlohmann::json to_json(const DiscretizationScheme& scheme);
nlohmann::json to_json(const ConditionalTable& table);
nlohmann::json to_json(const InterventionResult& result);
nlohmann::json to_json(const StratumTest& test);
// Scheme, tables, queries and results as one document.
nlohmann::json to_json(const CausalAnalysis& analysis);

}  // namespace batchcausal
