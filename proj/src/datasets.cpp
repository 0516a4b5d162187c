#include "batchcausal/datasets.hpp"

#include "batchcausal/rng.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace batchcausal {

namespace {

std::vector<int> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::string format_params(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    if (!out.empty()) out += ",";
    out += k + "=" + v;
  }
  return out;
}

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& field, T& value) {
  if (field.empty()) return false;
  const char* first = field.data();
  const char* last = first + field.size();
  if (*first == '+') ++first;
  auto res = std::from_chars(first, last, value);
  return res.ec == std::errc() && res.ptr == last;
}

[[noreturn]] void format_error(const std::filesystem::path& path, std::size_t line,
                               const std::string& what) {
  throw DataFormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

struct CsvLines {
  std::vector<std::pair<std::size_t, std::string>> rows;  // (1-based line number, text)
};

CsvLines read_lines(const std::string& content) {
  CsvLines out;
  std::istringstream in(content);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    out.rows.emplace_back(number, line);
  }
  return out;
}

}  // namespace

Splits split(std::size_t n, const SplitFractions& fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0) || !std::isfinite(f)) throw std::invalid_argument("split fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-12) throw std::invalid_argument("split fractions sum to more than 1");
  std::array<std::size_t, 3> sizes{};
  for (std::size_t i = 0; i < 3; ++i) {
    sizes[i] = static_cast<std::size_t>(std::floor(fractions[i] * static_cast<double>(n) + 1e-9));
  }
  const std::vector<int> perm = seeded_permutation(n, seed);
  Splits s;
  auto first = perm.begin();
  s.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes[0]));
  first += static_cast<std::ptrdiff_t>(sizes[0]);
  s.val.assign(first, first + static_cast<std::ptrdiff_t>(sizes[1]));
  first += static_cast<std::ptrdiff_t>(sizes[1]);
  s.test.assign(first, first + static_cast<std::ptrdiff_t>(sizes[2]));
  return s;
}

DatasetBundle make_blobs(const BlobsParams& p) {
  if (p.classes < 2 || p.n < p.classes) throw std::invalid_argument("make_blobs requires n >= K >= 2");
  if (p.dim < 1) throw std::invalid_argument("make_blobs requires dim >= 1");
  if (!(p.separation > 0.0)) throw std::invalid_argument("make_blobs requires separation > 0");
  if (!(p.label_noise >= 0.0 && p.label_noise < 0.5)) {
    throw std::invalid_argument("make_blobs requires label_noise in [0, 0.5)");
  }
  Rng rng(derive_seed(p.seed, "blobs"));
  const double radius = p.separation / std::sqrt(2.0);
  Matrix centers = Matrix::Zero(p.classes, p.dim);
  for (int k = 0; k < p.classes; ++k) {
    if (p.classes <= p.dim) {
      centers(k, k) = radius;
    } else {
      Vector dir(p.dim);
      for (int j = 0; j < p.dim; ++j) dir[j] = rng.normal();
      centers.row(k) = radius * dir.normalized().transpose();
    }
  }

  DatasetBundle b;
  b.num_classes = p.classes;
  b.features.resize(p.n, p.dim);
  b.clean_labels.resize(static_cast<std::size_t>(p.n));
  for (int i = 0; i < p.n; ++i) {
    const int k = i % p.classes;
    b.clean_labels[static_cast<std::size_t>(i)] = k;
    for (int j = 0; j < p.dim; ++j) b.features(i, j) = centers(k, j) + rng.normal();
  }
  b.splits = split(static_cast<std::size_t>(p.n), p.fractions, derive_seed(p.seed, "split"));
  b.labels = b.clean_labels;
  if (p.label_noise > 0.0) {
    Rng noise(derive_seed(p.seed, "label_noise"));
    auto corrupt = [&](const std::vector<int>& idx) {
      for (int i : idx) {
        if (!noise.bernoulli(p.label_noise)) continue;
        auto& y = b.labels[static_cast<std::size_t>(i)];
        const int shift = 1 + static_cast<int>(noise.below(static_cast<std::uint64_t>(p.classes - 1)));
        y = (y + shift) % p.classes;
      }
    };
    corrupt(b.splits.train);
    corrupt(b.splits.val);
  }
  b.provenance = "blobs(" +
                 format_params({{"n", std::to_string(p.n)},
                                {"d", std::to_string(p.dim)},
                                {"K", std::to_string(p.classes)},
                                {"separation", num(p.separation)},
                                {"label_noise", num(p.label_noise)},
                                {"seed", std::to_string(p.seed)}}) +
                 ")";
  return b;
}

DatasetBundle make_sbm_graph(const SbmParams& p) {
  if (p.classes < 2 || p.n < p.classes) throw std::invalid_argument("make_sbm_graph requires n >= K >= 2");
  if (!(p.p_out >= 0.0 && p.p_out < p.p_in && p.p_in <= 1.0)) {
    throw std::invalid_argument("make_sbm_graph requires 0 <= p_out < p_in <= 1");
  }
  if (p.dim < 1) throw std::invalid_argument("make_sbm_graph requires dim >= 1");
  Rng rng(derive_seed(p.seed, "sbm"));
  DatasetBundle b;
  b.num_classes = p.classes;
  b.labels.resize(static_cast<std::size_t>(p.n));
  for (int i = 0; i < p.n; ++i) {
    b.labels[static_cast<std::size_t>(i)] =
        static_cast<int>((static_cast<long long>(i) * p.classes) / p.n);
  }
  b.clean_labels = b.labels;

  std::vector<Eigen::Triplet<double>> triplets;
  for (int i = 0; i < p.n; ++i) {
    for (int j = i + 1; j < p.n; ++j) {
      const bool same = b.labels[static_cast<std::size_t>(i)] == b.labels[static_cast<std::size_t>(j)];
      if (rng.bernoulli(same ? p.p_in : p.p_out)) {
        triplets.emplace_back(i, j, 1.0);
        triplets.emplace_back(j, i, 1.0);
      }
    }
  }
  SparseMatrix adj(p.n, p.n);
  adj.setFromTriplets(triplets.begin(), triplets.end());
  adj.makeCompressed();
  b.adjacency = std::move(adj);

  Matrix means(p.classes, p.dim);
  for (int k = 0; k < p.classes; ++k) {
    Vector dir(p.dim);
    for (int j = 0; j < p.dim; ++j) dir[j] = rng.normal();
    means.row(k) = p.feature_signal * dir.normalized().transpose();
  }
  b.features.resize(p.n, p.dim);
  for (int i = 0; i < p.n; ++i) {
    for (int j = 0; j < p.dim; ++j) {
      b.features(i, j) = means(b.labels[static_cast<std::size_t>(i)], j) + rng.normal();
    }
  }
  b.splits = split(static_cast<std::size_t>(p.n), p.fractions, derive_seed(p.seed, "split"));
  b.provenance = "sbm(" +
                 format_params({{"n", std::to_string(p.n)},
                                {"K", std::to_string(p.classes)},
                                {"p_in", num(p.p_in)},
                                {"p_out", num(p.p_out)},
                                {"d", std::to_string(p.dim)},
                                {"feature_signal", num(p.feature_signal)},
                                {"seed", std::to_string(p.seed)}}) +
                 ")";
  return b;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

DatasetBundle load_tabular_graph(const std::filesystem::path& nodes_path,
                                 const std::filesystem::path& edges_path,
                                 const SplitFractions& fractions, std::uint64_t split_seed) {
  const std::string node_text = read_file(nodes_path);
  const std::string edge_text = read_file(edges_path);

  const CsvLines nodes = read_lines(node_text);
  if (nodes.rows.empty()) format_error(nodes_path, 1, "missing header row");
  const auto header = split_csv(nodes.rows.front().second);
  if (header.size() < 3 || header.front() != "id" || header.back() != "label") {
    format_error(nodes_path, nodes.rows.front().first,
                 "header must be `id,<features...>,label`");
  }
  const std::size_t dim = header.size() - 2;
  if (nodes.rows.size() < 2) format_error(nodes_path, nodes.rows.front().first, "no node rows");

  std::map<long long, int> index_of;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (std::size_t r = 1; r < nodes.rows.size(); ++r) {
    const auto& [line_no, text] = nodes.rows[r];
    const auto fields = split_csv(text);
    if (fields.size() != header.size()) {
      format_error(nodes_path, line_no,
                   "expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    long long id = 0;
    if (!parse_number(fields.front(), id) || id < 0) format_error(nodes_path, line_no, "bad node id");
    if (index_of.count(id)) {
      format_error(nodes_path, line_no, "duplicate node id " + std::to_string(id));
    }
    std::vector<double> feats(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!parse_number(fields[j + 1], feats[j]) || !std::isfinite(feats[j])) {
        format_error(nodes_path, line_no, "bad feature value in column " + std::to_string(j + 2));
      }
    }
    int label = 0;
    if (!parse_number(fields.back(), label) || label < 0) {
      format_error(nodes_path, line_no, "bad label");
    }
    index_of.emplace(id, static_cast<int>(rows.size()));
    rows.push_back(std::move(feats));
    labels.push_back(label);
  }

  const CsvLines edges = read_lines(edge_text);
  if (edges.rows.empty()) format_error(edges_path, 1, "missing header row");
  const auto edge_header = split_csv(edges.rows.front().second);
  if (edge_header.size() != 2 || edge_header[0] != "src" || edge_header[1] != "dst") {
    format_error(edges_path, edges.rows.front().first, "header must be `src,dst`");
  }
  const int n = static_cast<int>(rows.size());
  std::set<std::pair<int, int>> pairs;
  for (std::size_t r = 1; r < edges.rows.size(); ++r) {
    const auto& [line_no, text] = edges.rows[r];
    const auto fields = split_csv(text);
    if (fields.size() != 2) format_error(edges_path, line_no, "expected 2 fields");
    long long src = 0, dst = 0;
    if (!parse_number(fields[0], src) || !parse_number(fields[1], dst)) {
      format_error(edges_path, line_no, "bad endpoint");
    }
    const auto s = index_of.find(src);
    const auto d = index_of.find(dst);
    if (s == index_of.end() || d == index_of.end()) {
      const long long missing = s == index_of.end() ? src : dst;
      format_error(edges_path, line_no,
                   "dangling edge endpoint " + std::to_string(missing) + " (graph has " +
                       std::to_string(n) + " nodes)");
    }
    if (s->second == d->second) continue;
    pairs.emplace(std::min(s->second, d->second), std::max(s->second, d->second));
  }

  DatasetBundle b;
  b.features.resize(n, static_cast<Eigen::Index>(dim));
  for (int i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      b.features(i, static_cast<Eigen::Index>(j)) = rows[static_cast<std::size_t>(i)][j];
    }
  }
  b.labels = labels;
  b.num_classes = std::max(2, *std::max_element(labels.begin(), labels.end()) + 1);
  std::vector<Eigen::Triplet<double>> triplets;
  for (const auto& [i, j] : pairs) {
    triplets.emplace_back(i, j, 1.0);
    triplets.emplace_back(j, i, 1.0);
  }
  SparseMatrix adj(n, n);
  adj.setFromTriplets(triplets.begin(), triplets.end());
  adj.makeCompressed();
  b.adjacency = std::move(adj);
  b.splits = split(static_cast<std::size_t>(n), fractions, split_seed);
  b.provenance = "files(nodes=" + nodes_path.string() + ",edges=" + edges_path.string() + ")";
  b.digest = sha256_hex(node_text + std::string(1, '\0') + edge_text);
  return b;
}

void write_tabular_graph(const DatasetBundle& bundle, const std::filesystem::path& nodes_path,
                         const std::filesystem::path& edges_path) {
  std::ofstream nodes(nodes_path, std::ios::binary);
  if (!nodes) throw std::runtime_error("cannot write " + nodes_path.string());
  nodes << "id";
  for (Eigen::Index j = 0; j < bundle.feature_dim(); ++j) nodes << ",f" << (j + 1);
  nodes << ",label\n";
  for (Eigen::Index i = 0; i < bundle.size(); ++i) {
    nodes << i;
    for (Eigen::Index j = 0; j < bundle.feature_dim(); ++j) nodes << ',' << num(bundle.features(i, j));
    nodes << ',' << bundle.labels[static_cast<std::size_t>(i)] << '\n';
  }
  std::ofstream edges(edges_path, std::ios::binary);
  if (!edges) throw std::runtime_error("cannot write " + edges_path.string());
  edges << "src,dst\n";
  if (bundle.adjacency) {
    const SparseMatrix& a = *bundle.adjacency;
    for (int c = 0; c < a.outerSize(); ++c) {
      for (SparseMatrix::InnerIterator it(a, c); it; ++it) {
        if (it.row() < it.col() && it.value() != 0.0) edges << it.row() << ',' << it.col() << '\n';
      }
    }
  }
}

DatasetBatch gather_batch(const Matrix& features, const std::vector<int>& labels,
                          const std::vector<int>& indices) {
  DatasetBatch batch;
  batch.inputs.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  batch.labels.resize(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    batch.inputs.row(static_cast<Eigen::Index>(r)) = features.row(indices[r]);
    batch.labels[r] = labels[static_cast<std::size_t>(indices[r])];
  }
  return batch;
}

DatasetBatch gather_batch(const DatasetBundle& bundle, const std::vector<int>& indices) {
  return gather_batch(bundle.features, bundle.labels, indices);
}

}  // namespace batchcausal
