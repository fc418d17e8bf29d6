#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "shiftlab/errors.hpp"
#include "shiftlab/linalg.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

enum class Split { Train, Eval };

struct Dataset {
  Matrix features;             // N x d
  std::vector<int> labels;     // N, in [0, num_classes)
  std::size_t num_classes = 0;
  Split split = Split::Train;

  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }

  void validate() const {
    if (features.rows == 0) throw InputError("Dataset: empty");
    if (labels.size() != features.rows)
      throw ShapeError("Dataset: label count does not match feature rows");
    if (num_classes == 0) throw InputError("Dataset: num_classes must be >= 1");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw InputError("Dataset: label out of range");
    for (double x : features.data)
      if (!std::isfinite(x)) throw InputError("Dataset: non-finite feature");
  }
};

// Class means sit on a sphere of this radius. Chosen so the default blobs
// overlap enough that fine-tuned accuracy stays visibly below 1.0.
inline constexpr double kClassMeanRadius = 1.7;

struct TransferTaskParams {
  std::size_t dim = 8;
  std::size_t source_classes = 6;
  std::size_t target_classes = 3;
  std::size_t samples_per_class = 200;
  double rotation = 0.3;   // radians, applied to class means in the (0,1) plane
  double noise = 0.5;      // per-coordinate Gaussian sigma
};

// Source task for pretraining plus a structurally related target task.
// Target classes merge source classes k-to-1 (k = C_src/C_tgt, consecutive
// blocks), with every class mean rotated by the relatedness angle.
struct TaskPair {
  Dataset source_train;
  Dataset source_eval;
  Dataset target_train;
  Dataset target_eval;
  std::uint64_t seed = 0;
  TransferTaskParams params;

  // target class of a source class
  std::size_t class_map(std::size_t source_class) const {
    return source_class / (params.source_classes / params.target_classes);
  }
};

namespace detail {

inline std::vector<std::vector<double>> class_means(std::uint64_t seed,
                                                    const TransferTaskParams& p) {
  rng::SplitMix64 stream(rng::derive(seed, rng::Purpose::ClassMeans));
  std::vector<std::vector<double>> means;
  means.reserve(p.source_classes);
  for (std::size_t s = 0; s < p.source_classes; ++s) {
    std::vector<double> dir(p.dim);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : dir) {
        x = stream.next_normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-9);
    for (double& x : dir) x = x / norm * kClassMeanRadius;
    means.push_back(std::move(dir));
  }
  return means;
}

inline std::vector<double> rotate_plane01(const std::vector<double>& m, double theta) {
  std::vector<double> out = m;
  const double c = std::cos(theta), s = std::sin(theta);
  out[0] = c * m[0] - s * m[1];
  out[1] = s * m[0] + c * m[1];
  return out;
}

// Blob sampling order is class-major, so the layout is a pure function of the
// arguments; training shuffles via make_batches anyway.
inline Dataset sample_blobs(const std::vector<std::vector<double>>& means,
                            const std::vector<int>& labels_per_blob,
                            const std::vector<std::size_t>& count_per_blob,
                            std::size_t num_classes, double sigma,
                            std::uint64_t stream_seed, Split split) {
  std::size_t total = 0;
  for (std::size_t c : count_per_blob) total += c;
  const std::size_t dim = means.front().size();

  Dataset ds;
  ds.features = Matrix(total, dim);
  ds.labels.reserve(total);
  ds.num_classes = num_classes;
  ds.split = split;

  rng::SplitMix64 stream(stream_seed);
  std::size_t row = 0;
  for (std::size_t b = 0; b < means.size(); ++b) {
    for (std::size_t k = 0; k < count_per_blob[b]; ++k, ++row) {
      for (std::size_t j = 0; j < dim; ++j)
        ds.features(row, j) = means[b][j] + sigma * stream.next_normal();
      ds.labels.push_back(labels_per_blob[b]);
    }
  }
  return ds;
}

}  // namespace detail

inline TaskPair gen_transfer_pair(std::uint64_t seed, const TransferTaskParams& p) {
  if (p.dim < 2) throw InputError("gen_transfer_pair: dim must be >= 2");
  if (p.target_classes == 0 || p.source_classes % p.target_classes != 0)
    throw InputError("gen_transfer_pair: source classes must be divisible by target classes");
  if (p.source_classes < p.target_classes)
    throw InputError("gen_transfer_pair: need at least as many source classes as target classes");
  if (!(p.noise > 0.0)) throw InputError("gen_transfer_pair: noise must be positive");
  if (p.samples_per_class == 0)
    throw InputError("gen_transfer_pair: samples_per_class must be >= 1");

  const auto means = detail::class_means(seed, p);
  std::vector<std::vector<double>> rotated;
  rotated.reserve(means.size());
  for (const auto& m : means) rotated.push_back(detail::rotate_plane01(m, p.rotation));

  // Source: one blob per class, samples_per_class each.
  std::vector<int> src_labels(p.source_classes);
  std::vector<std::size_t> src_counts(p.source_classes, p.samples_per_class);
  for (std::size_t s = 0; s < p.source_classes; ++s) src_labels[s] = static_cast<int>(s);

  // Target: each target class owns k consecutive source blobs and splits its
  // samples_per_class across them, remainder to the earliest blobs.
  const std::size_t k = p.source_classes / p.target_classes;
  std::vector<int> tgt_labels(p.source_classes);
  std::vector<std::size_t> tgt_counts(p.source_classes);
  for (std::size_t s = 0; s < p.source_classes; ++s) {
    tgt_labels[s] = static_cast<int>(s / k);
    const std::size_t j = s % k;
    tgt_counts[s] = p.samples_per_class / k + (j < p.samples_per_class % k ? 1 : 0);
  }

  TaskPair pair;
  pair.seed = seed;
  pair.params = p;
  pair.source_train = detail::sample_blobs(
      means, src_labels, src_counts, p.source_classes, p.noise,
      rng::derive(seed, rng::Purpose::SourceTrainNoise), Split::Train);
  pair.source_eval = detail::sample_blobs(
      means, src_labels, src_counts, p.source_classes, p.noise,
      rng::derive(seed, rng::Purpose::SourceEvalNoise), Split::Eval);
  pair.target_train = detail::sample_blobs(
      rotated, tgt_labels, tgt_counts, p.target_classes, p.noise,
      rng::derive(seed, rng::Purpose::TargetTrainNoise), Split::Train);
  pair.target_eval = detail::sample_blobs(
      rotated, tgt_labels, tgt_counts, p.target_classes, p.noise,
      rng::derive(seed, rng::Purpose::TargetEvalNoise), Split::Eval);
  return pair;
}

namespace detail {

inline bool parse_double_cell(const std::string& cell, double& out) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\t') ++end;
  return *end == '\0' && std::isfinite(out);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    std::size_t a = cell.find_first_not_of(" \t\r");
    std::size_t b = cell.find_last_not_of(" \t\r");
    cells.push_back(a == std::string::npos ? std::string() : cell.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

}  // namespace detail

// Comma-separated, decimal-point floats, optional header (detected by a
// non-numeric first cell). label_column is a column name (requires a header)
// or a 0-based index given as digits.
inline Dataset load_csv(const std::string& path, const std::string& label_column,
                        Split split = Split::Train) {
  std::ifstream file(path);
  if (!file) throw IoError("load_csv: cannot open " + path);

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(file, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw InputError("load_csv: empty file " + path);

  auto first_cells = detail::split_csv_line(lines.front());
  if (first_cells.empty()) throw ParseError("load_csv: row 1: empty row");
  double probe = 0.0;
  const bool has_header = !detail::parse_double_cell(first_cells.front(), probe);

  std::size_t label_idx = 0;
  bool label_idx_known = false;
  if (!label_column.empty() &&
      label_column.find_first_not_of("0123456789") == std::string::npos) {
    label_idx = std::stoul(label_column);
    label_idx_known = true;
  } else if (has_header) {
    for (std::size_t c = 0; c < first_cells.size(); ++c) {
      if (first_cells[c] == label_column) {
        label_idx = c;
        label_idx_known = true;
        break;
      }
    }
    if (!label_idx_known)
      throw ParseError("load_csv: header has no column named '" + label_column + "'");
  } else {
    throw ParseError("load_csv: label column '" + label_column +
                     "' is a name but the file has no header");
  }

  const std::size_t first_data = has_header ? 1 : 0;
  if (first_data >= lines.size()) throw InputError("load_csv: no data rows in " + path);

  const std::size_t width = detail::split_csv_line(lines[first_data]).size();
  if (label_idx >= width)
    throw ParseError("load_csv: label column index " + std::to_string(label_idx) +
                     " out of range for " + std::to_string(width) + " columns");
  if (width < 2) throw ParseError("load_csv: need at least one feature column");

  const std::size_t n_rows = lines.size() - first_data;
  Dataset ds;
  ds.split = split;
  ds.features = Matrix(n_rows, width - 1);
  ds.labels.reserve(n_rows);

  int max_label = -1;
  for (std::size_t r = 0; r < n_rows; ++r) {
    const std::size_t row_no = first_data + r + 1;  // 1-based, as in the file
    auto cells = detail::split_csv_line(lines[first_data + r]);
    if (cells.size() != width)
      throw ParseError("load_csv: row " + std::to_string(row_no) + ": expected " +
                       std::to_string(width) + " cells, got " +
                       std::to_string(cells.size()));
    std::size_t feat = 0;
    for (std::size_t c = 0; c < width; ++c) {
      double value = 0.0;
      if (!detail::parse_double_cell(cells[c], value))
        throw ParseError("load_csv: row " + std::to_string(row_no) +
                         ": non-numeric cell '" + cells[c] + "'");
      if (c == label_idx) {
        if (value < 0.0)
          throw ParseError("load_csv: row " + std::to_string(row_no) +
                           ": negative label");
        if (value != std::floor(value))
          throw ParseError("load_csv: row " + std::to_string(row_no) +
                           ": label is not an integer");
        ds.labels.push_back(static_cast<int>(value));
        max_label = std::max(max_label, ds.labels.back());
      } else {
        ds.features(r, feat++) = value;
      }
    }
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  ds.validate();
  return ds;
}

// Seeded permutation determined by (seed, epoch); every index appears exactly
// once, final partial batch kept.
inline std::vector<std::vector<std::size_t>> make_batches(const Dataset& ds,
                                                          std::size_t batch_size,
                                                          std::uint64_t seed,
                                                          std::size_t epoch) {
  if (batch_size == 0) throw InputError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng::SplitMix64 stream(rng::derive(seed, rng::Purpose::BatchShuffle, epoch));
  stream.shuffle(order);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace shiftlab
