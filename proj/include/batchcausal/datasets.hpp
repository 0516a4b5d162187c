#pragma once

#include "batchcausal/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace batchcausal {

struct Splits {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;

  bool operator==(const Splits&) const = default;
};

struct DatasetBundle {
  Matrix features;                        // [n x d]
  std::vector<int> labels;                // observed labels (possibly noisy)
  std::vector<int> clean_labels;          // generator ground truth; empty for ingested data
  int num_classes = 0;
  std::optional<SparseMatrix> adjacency;  // symmetric, zero diagonal
  Splits splits;
  std::string provenance;                 // generator + parameters + seed, or file paths
  std::string digest;                     // SHA-256 of ingested file contents

  Eigen::Index size() const noexcept { return features.rows(); }
  Eigen::Index feature_dim() const noexcept { return features.cols(); }
};

// Malformed input files; the message names the file and line.
class DataFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using SplitFractions = std::array<double, 3>;
inline constexpr SplitFractions kDefaultSplit{0.6, 0.2, 0.2};

// Seeded permutation cut into contiguous train/val/test slices of size floor(f * n).
Splits split(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

struct BlobsParams {
  int n = 1000;
  int dim = 2;
  int classes = 2;
  double separation = 4.0;
  double label_noise = 0.0;  // applied to train and validation labels only
  std::uint64_t seed = 0;
  SplitFractions fractions = kDefaultSplit;

  bool operator==(const BlobsParams&) const = default;
};

// K unit-covariance Gaussian clusters. With K <= d the centers sit on
// scaled coordinate axes so every pair is exactly `separation` apart;
// otherwise centers are random directions at the same radius.
DatasetBundle make_blobs(const BlobsParams& params);

struct SbmParams {
  int n = 600;
  int classes = 3;
  double p_in = 0.05;
  double p_out = 0.005;
  int dim = 16;
  double feature_signal = 1.0;
  std::uint64_t seed = 0;
  SplitFractions fractions = kDefaultSplit;

  bool operator==(const SbmParams&) const = default;
};

// Stochastic block model with K equal contiguous blocks; node features are
// the class mean (norm feature_signal) plus unit Gaussian noise.
DatasetBundle make_sbm_graph(const SbmParams& params);

// Node file: header `id,<feature columns...>,label`; one row per node.
// Edge file: header `src,dst`; ids refer to node ids. Edges are symmetrized,
// duplicates collapse and self-loops are dropped.
DatasetBundle load_tabular_graph(const std::filesystem::path& nodes_path,
                                 const std::filesystem::path& edges_path,
                                 const SplitFractions& fractions = kDefaultSplit,
                                 std::uint64_t split_seed = 0);

void write_tabular_graph(const DatasetBundle& bundle, const std::filesystem::path& nodes_path,
                         const std::filesystem::path& edges_path);

// Rows `indices` of the bundle as a model batch (no adjacency).
DatasetBatch gather_batch(const DatasetBundle& bundle, const std::vector<int>& indices);
DatasetBatch gather_batch(const Matrix& features, const std::vector<int>& labels,
                          const std::vector<int>& indices);

std::string sha256_hex(const std::string& bytes);

}  // namespace batchcausal
