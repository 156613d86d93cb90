#pragma once
// Datasets, client partitions and loaders.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpb/bnn.hpp"
#include "fedpb/rng.hpp"

namespace fedpb {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// N samples of d features, row-major, with integer class labels.
struct LabeledDataset {
  std::vector<double> features;
  std::vector<std::size_t> labels;
  std::size_t num_features = 0;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }

  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * num_features, num_features};
  }

  Sample sample(std::size_t i) const { return {row(i), labels[i]}; }

  void validate() const {
    if (labels.empty()) throw std::invalid_argument("LabeledDataset: no samples");
    if (num_features == 0) throw std::invalid_argument("LabeledDataset: zero features");
    if (num_classes == 0) throw std::invalid_argument("LabeledDataset: zero classes");
    if (features.size() != labels.size() * num_features) {
      throw std::invalid_argument("LabeledDataset: feature matrix is not N x d");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= num_classes) {
        throw std::invalid_argument("LabeledDataset: label " + std::to_string(labels[i]) +
                                    " at row " + std::to_string(i) + " out of range");
      }
    }
    for (double f : features) {
      if (!std::isfinite(f)) throw std::invalid_argument("LabeledDataset: non-finite feature value");
    }
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t y : labels) ++counts[y];
    return counts;
  }
};

enum class PartitionScheme { balanced, unbalanced, dirichlet };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::balanced;
  std::size_t num_clients = 1;
  std::uint64_t seed = 0;
  std::vector<double> ratios;  // unbalanced only
  double alpha = 0.5;          // dirichlet only
  // Dirichlet draws are repeated until every client has at least this many samples.
  std::size_t min_client_samples = 10;
  std::size_t max_dirichlet_attempts = 1000;
  double test_fraction = 0.2;

  void validate() const {
    if (num_clients == 0) throw std::invalid_argument("PartitionSpec: num_clients must be >= 1");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
      throw std::invalid_argument("PartitionSpec: test_fraction must be in [0,1)");
    }
    if (scheme == PartitionScheme::unbalanced) {
      if (ratios.size() != num_clients) {
        throw std::invalid_argument("PartitionSpec: " + std::to_string(ratios.size()) +
                                    " ratios for " + std::to_string(num_clients) + " clients");
      }
      double sum = 0.0;
      for (double r : ratios) {
        if (!(r > 0.0)) throw std::invalid_argument("PartitionSpec: ratios must be positive");
        sum += r;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("PartitionSpec: ratios must sum to 1");
    }
    if (scheme == PartitionScheme::dirichlet && !(alpha > 0.0)) {
      throw std::invalid_argument("PartitionSpec: alpha must be > 0");
    }
  }
};

struct ClientShard {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  std::size_t size() const { return train.size() + test.size(); }
};

struct Partition {
  std::vector<ClientShard> clients;

  std::size_t num_clients() const { return clients.size(); }

  std::vector<std::size_t> train_counts() const {
    std::vector<std::size_t> counts;
    for (const auto& c : clients) counts.push_back(c.train.size());
    return counts;
  }
  std::vector<std::size_t> total_counts() const {
    std::vector<std::size_t> counts;
    for (const auto& c : clients) counts.push_back(c.size());
    return counts;
  }
};

/// Holds out floor(test_fraction * n) samples (at least one when n >= 2).
inline ClientShard split_train_test(std::vector<std::size_t> indices, double test_fraction, RngStream& rng) {
  rng.shuffle(indices);
  std::size_t n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(indices.size())));
  if (test_fraction > 0.0 && n_test == 0 && indices.size() >= 2) n_test = 1;
  ClientShard shard;
  shard.test.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n_test));
  shard.train.assign(indices.begin() + static_cast<std::ptrdiff_t>(n_test), indices.end());
  std::sort(shard.train.begin(), shard.train.end());
  std::sort(shard.test.begin(), shard.test.end());
  return shard;
}

namespace detail {

inline void require_nonempty(const std::vector<std::vector<std::size_t>>& assignment) {
  for (std::size_t k = 0; k < assignment.size(); ++k) {
    if (assignment[k].empty()) {
      throw std::invalid_argument("partition: client " + std::to_string(k) + " would receive 0 samples");
    }
  }
}

inline std::vector<std::vector<std::size_t>> dirichlet_assignment(const LabeledDataset& ds,
                                                                  const PartitionSpec& spec, RngStream& rng) {
  const std::size_t K = spec.num_clients;
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  std::vector<std::vector<std::size_t>> assignment;
  std::size_t smallest_client = 0;
  for (std::size_t attempt = 0; attempt < spec.max_dirichlet_attempts; ++attempt) {
    assignment.assign(K, {});
    for (auto indices : by_class) {
      if (indices.empty()) continue;
      rng.shuffle(indices);
      const std::vector<double> shares = rng.dirichlet(K, spec.alpha);
      // Cut points at floor(cumulative share * n_c); the last client takes the tail.
      double cumulative = 0.0;
      std::size_t start = 0;
      for (std::size_t k = 0; k < K; ++k) {
        cumulative += shares[k];
        std::size_t stop = (k + 1 == K)
                               ? indices.size()
                               : std::min(indices.size(), static_cast<std::size_t>(std::floor(
                                                              cumulative * static_cast<double>(indices.size()))));
        stop = std::max(stop, start);
        assignment[k].insert(assignment[k].end(), indices.begin() + static_cast<std::ptrdiff_t>(start),
                             indices.begin() + static_cast<std::ptrdiff_t>(stop));
        start = stop;
      }
    }
    std::size_t min_size = ds.size();
    for (std::size_t k = 0; k < K; ++k) {
      if (assignment[k].size() < min_size) {
        min_size = assignment[k].size();
        smallest_client = k;
      }
    }
    if (min_size >= std::max<std::size_t>(spec.min_client_samples, 1)) return assignment;
  }
  throw std::invalid_argument("partition: client " + std::to_string(smallest_client) + " received " +
                              std::to_string(assignment[smallest_client].size()) +
                              " samples after " + std::to_string(spec.max_dirichlet_attempts) +
                              " Dirichlet draws (minimum " + std::to_string(spec.min_client_samples) + ")");
}

}  // namespace detail

/// Splits a dataset across clients, then splits each shard into train/test.
inline Partition partition(const LabeledDataset& ds, const PartitionSpec& spec) {
  spec.validate();
  ds.validate();
  const std::size_t N = ds.size();
  const std::size_t K = spec.num_clients;
  if (N < K) {
    throw std::invalid_argument("partition: " + std::to_string(N) + " samples for " + std::to_string(K) +
                                " clients");
  }
  RngStream rng(spec.seed, streams::kPartition);
  std::vector<std::vector<std::size_t>> assignment(K);

  if (spec.scheme == PartitionScheme::dirichlet) {
    assignment = detail::dirichlet_assignment(ds, spec, rng);
  } else {
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<std::size_t> counts(K);
    if (spec.scheme == PartitionScheme::balanced) {
      counts.assign(K, N / K);
    } else {
      std::size_t assigned = 0;
      for (std::size_t k = 0; k + 1 < K; ++k) {
        // The small epsilon keeps exact products like 0.05 * 1000 from flooring to 49.
        counts[k] = static_cast<std::size_t>(std::floor(spec.ratios[k] * static_cast<double>(N) + 1e-9));
        assigned += counts[k];
      }
      if (assigned > N) throw std::invalid_argument("partition: ratios exceed the dataset size");
      counts[K - 1] = N - assigned;
    }
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < K; ++k) {
      assignment[k].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                           order.begin() + static_cast<std::ptrdiff_t>(cursor + counts[k]));
      cursor += counts[k];
    }
  }
  detail::require_nonempty(assignment);

  Partition out;
  for (auto& indices : assignment) out.clients.push_back(split_train_test(std::move(indices), spec.test_fraction, rng));
  return out;
}

struct SynthSpec {
  std::size_t num_clients = 10;
  std::size_t per_client = 200;
  std::size_t dim = 10;
  std::size_t num_classes = 3;
  // 0 = IID clients; 1 = class means shifted by a full client-specific offset.
  double skew = 0.0;
  double center_scale = 1.5;
  double offset_scale = 2.0;
  double noise_stddev = 1.0;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct SynthData {
  LabeledDataset dataset;
  Partition partition;
};

/// Gaussian class blobs with per-client shifted class means.
///
/// Client k's class-c samples are N(center_c + skew * offset_{k,c}, noise^2 I),
/// with labels uniform over classes. Client k owns rows [k*n, (k+1)*n).
inline SynthData synth_blobs(const SynthSpec& spec) {
  if (spec.num_clients == 0 || spec.per_client == 0 || spec.dim == 0 || spec.num_classes == 0) {
    throw std::invalid_argument("synth_blobs: all sizes must be positive");
  }
  if (!(spec.skew >= 0.0 && spec.skew <= 1.0)) throw std::invalid_argument("synth_blobs: skew must be in [0,1]");
  RngStream rng(spec.seed, streams::kSynthetic);
  const std::size_t K = spec.num_clients, C = spec.num_classes, d = spec.dim;

  std::vector<double> centers(C * d);
  for (auto& v : centers) v = rng.normal(0.0, spec.center_scale);
  // Offsets are drawn even when skew = 0 so every skew level sees the same centers and noise.
  std::vector<double> offsets(K * C * d);
  for (auto& v : offsets) v = rng.normal(0.0, spec.offset_scale);

  SynthData out;
  auto& ds = out.dataset;
  ds.num_features = d;
  ds.num_classes = C;
  ds.features.reserve(K * spec.per_client * d);
  ds.labels.reserve(K * spec.per_client);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < spec.per_client; ++i) {
      const std::size_t c = rng.uniform_index(C);
      ds.labels.push_back(c);
      for (std::size_t j = 0; j < d; ++j) {
        const double mean = centers[c * d + j] + spec.skew * offsets[(k * C + c) * d + j];
        ds.features.push_back(mean + rng.normal(0.0, spec.noise_stddev));
      }
    }
  }
  RngStream split_rng(spec.seed, streams::kPartition);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<std::size_t> indices(spec.per_client);
    std::iota(indices.begin(), indices.end(), k * spec.per_client);
    out.partition.clients.push_back(split_train_test(std::move(indices), spec.test_fraction, split_rng));
  }
  return out;
}

struct CsvSchema {
  bool has_header = false;
  // Inferred as max label + 1 when absent.
  std::optional<std::size_t> num_classes;
};

/// One sample per row; the last column is an integer class label.
inline LabeledDataset parse_csv(std::istream& in, const CsvSchema& schema = {}) {
  LabeledDataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::size_t max_label = 0;
  bool width_known = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && schema.has_header) continue;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() < 2) {
      throw ParseError("csv line " + std::to_string(line_no) + ": expected at least one feature and a label");
    }
    if (!width_known) {
      ds.num_features = cells.size() - 1;
      width_known = true;
    } else if (cells.size() - 1 != ds.num_features) {
      throw ParseError("csv line " + std::to_string(line_no) + ": ragged row with " +
                       std::to_string(cells.size()) + " columns, expected " +
                       std::to_string(ds.num_features + 1));
    }
    for (std::size_t j = 0; j + 1 < cells.size(); ++j) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[j], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || cells[j].find_first_not_of(" \t", used) != std::string::npos || !std::isfinite(v)) {
        throw ParseError("csv line " + std::to_string(line_no) + ", column " + std::to_string(j + 1) +
                         ": invalid feature value '" + cells[j] + "'");
      }
      ds.features.push_back(v);
    }
    const std::string& label_cell = cells.back();
    std::size_t used = 0;
    long long label = -1;
    try {
      label = std::stoll(label_cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || label_cell.find_first_not_of(" \t", used) != std::string::npos || label < 0) {
      throw ParseError("csv line " + std::to_string(line_no) + ": invalid label '" + label_cell + "'");
    }
    const auto y = static_cast<std::size_t>(label);
    if (schema.num_classes && y >= *schema.num_classes) {
      throw ParseError("csv line " + std::to_string(line_no) + ": label " + std::to_string(y) +
                       " out of range for " + std::to_string(*schema.num_classes) + " classes");
    }
    max_label = std::max(max_label, y);
    ds.labels.push_back(y);
  }
  if (ds.labels.empty()) throw ParseError("csv: no data rows");
  ds.num_classes = schema.num_classes.value_or(max_label + 1);
  ds.validate();
  return ds;
}

inline LabeledDataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("csv: cannot open " + path);
  try {
    return parse_csv(in, schema);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

namespace idx {
inline constexpr std::uint32_t kImagesMagic = 0x00000803;
inline constexpr std::uint32_t kLabelsMagic = 0x00000801;

inline std::uint32_t read_be32(std::istream& in, std::size_t offset, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw ParseError(std::string("idx ") + what + ": truncated header at byte " + std::to_string(offset));
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

inline void expect_magic(std::uint32_t got, std::uint32_t want, const char* what) {
  if (got != want) {
    std::ostringstream msg;
    msg << "idx " << what << ": bad magic number 0x" << std::hex << got << " at byte 0, expected 0x" << want;
    throw ParseError(msg.str());
  }
}
}  // namespace idx

/// Big-endian IDX image/label pair; pixels scaled to [0, 1].
inline LabeledDataset parse_idx(std::istream& images, std::istream& labels,
                                std::optional<std::size_t> num_classes = std::nullopt) {
  idx::expect_magic(idx::read_be32(images, 0, "images"), idx::kImagesMagic, "images");
  const std::uint32_t n_images = idx::read_be32(images, 4, "images");
  const std::uint32_t rows = idx::read_be32(images, 8, "images");
  const std::uint32_t cols = idx::read_be32(images, 12, "images");
  idx::expect_magic(idx::read_be32(labels, 0, "labels"), idx::kLabelsMagic, "labels");
  const std::uint32_t n_labels = idx::read_be32(labels, 4, "labels");
  if (n_images != n_labels) {
    throw ParseError("idx: images file holds " + std::to_string(n_images) + " items but labels file holds " +
                     std::to_string(n_labels));
  }
  if (n_images == 0 || rows == 0 || cols == 0) throw ParseError("idx: empty image set");

  LabeledDataset ds;
  ds.num_features = std::size_t{rows} * cols;
  ds.features.resize(std::size_t{n_images} * ds.num_features);
  std::vector<unsigned char> buf(ds.num_features);
  for (std::size_t i = 0; i < n_images; ++i) {
    if (!images.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
      throw ParseError("idx images: truncated pixel data at byte " +
                       std::to_string(16 + i * ds.num_features + static_cast<std::size_t>(images.gcount())));
    }
    for (std::size_t j = 0; j < buf.size(); ++j) ds.features[i * ds.num_features + j] = buf[j] / 255.0;
  }
  ds.labels.resize(n_labels);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n_labels; ++i) {
    const int byte = labels.get();
    if (byte == std::char_traits<char>::eof()) {
      throw ParseError("idx labels: truncated label data at byte " + std::to_string(8 + i));
    }
    const auto y = static_cast<std::size_t>(byte);
    if (num_classes && y >= *num_classes) {
      throw ParseError("idx labels: label " + std::to_string(y) + " at byte " + std::to_string(8 + i) +
                       " out of range for " + std::to_string(*num_classes) + " classes");
    }
    max_label = std::max(max_label, y);
    ds.labels[i] = y;
  }
  ds.num_classes = num_classes.value_or(max_label + 1);
  ds.validate();
  return ds;
}

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                               std::optional<std::size_t> num_classes = std::nullopt) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw ParseError("idx: cannot open " + images_path);
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw ParseError("idx: cannot open " + labels_path);
  return parse_idx(images, labels, num_classes);
}

}  // namespace fedpb
