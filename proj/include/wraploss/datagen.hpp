#pragma once

// Synthetic datasets and CSV ingestion.
//
// Regression targets follow Y_i = f(X)_i + e_i with e_i ~ N(0, sigma_i^2),
// independent across outputs and samples. Classification data are isotropic
// Gaussian blobs with per-class retention to create imbalance; the test split
// is always balanced.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "wraploss/core_nn.hpp"
#include "wraploss/errors.hpp"
#include "wraploss/io.hpp"
#include "wraploss/random.hpp"

namespace wraploss {

struct Dataset {
  Matrix X;                 // n x p
  Matrix Y;                 // n x c (regression); empty for classification
  std::vector<int> labels;  // n (classification); empty for regression
  int num_outputs = 0;      // c
  std::string provenance;

  bool is_classification() const { return !labels.empty(); }
  Eigen::Index size() const { return X.rows(); }
  Eigen::Index input_dim() const { return X.cols(); }
};

inline void validate(const Dataset& d) {
  using detail::require;
  require(d.X.rows() >= 1, ErrorKind::kShape, "dataset is empty");
  require(d.X.allFinite(), ErrorKind::kNumeric, "non-finite feature entry");
  require(d.num_outputs >= 1, ErrorKind::kShape, "dataset has no outputs");
  if (d.is_classification()) {
    require(static_cast<Eigen::Index>(d.labels.size()) == d.X.rows(),
            ErrorKind::kShape, "label count does not match rows");
    for (int y : d.labels) {
      require(y >= 0 && y < d.num_outputs, ErrorKind::kLabel,
              "label " + std::to_string(y) + " out of range");
    }
  } else {
    require(d.Y.rows() == d.X.rows() && d.Y.cols() == d.num_outputs,
            ErrorKind::kShape, "target matrix shape mismatch");
    require(d.Y.allFinite(), ErrorKind::kNumeric, "non-finite target entry");
  }
}

inline std::vector<long> class_counts(const Dataset& d) {
  std::vector<long> counts(d.num_outputs, 0);
  for (int y : d.labels) counts[y] += 1;
  return counts;
}

inline Dataset select_rows(const Dataset& d, std::span<const Eigen::Index> rows) {
  Dataset out;
  out.num_outputs = d.num_outputs;
  out.provenance = d.provenance;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.X.resize(n, d.X.cols());
  if (d.is_classification()) {
    out.labels.resize(rows.size());
  } else {
    out.Y.resize(n, d.Y.cols());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    out.X.row(i) = d.X.row(rows[i]);
    if (d.is_classification()) {
      out.labels[i] = d.labels[rows[i]];
    } else {
      out.Y.row(i) = d.Y.row(rows[i]);
    }
  }
  return out;
}

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// ---------------------------------------------------------------------------
// Heteroscedastic multi-output regression

enum class TrueMap { kLinear, kTanhMixture };

struct HeteroSpec {
  int input_dim = 10;
  int output_dim = 4;
  TrueMap map = TrueMap::kTanhMixture;
  std::vector<double> sigma{0.1, 0.5, 1.0, 2.0};
  int n_train = 5000;
  int n_test = 2000;
  int mixture_units = 16;
  std::uint64_t seed = 1;
};

// f(x) = A x + b (+ V tanh(U x + d) for the mixture map).
struct HeteroTruth {
  TrueMap map = TrueMap::kLinear;
  Matrix A;  // c x p
  Vector b;  // c
  Matrix U;  // m x p
  Vector d;  // m
  Matrix V;  // c x m

  Matrix evaluate(const Matrix& X) const {
    Matrix out = X * A.transpose();
    out.rowwise() += b.transpose();
    if (map == TrueMap::kTanhMixture) {
      Matrix h = X * U.transpose();
      h.rowwise() += d.transpose();
      out += h.array().tanh().matrix() * V.transpose();
    }
    return out;
  }
};

namespace detail {

inline Matrix normal_matrix(Engine& rng, Eigen::Index rows, Eigen::Index cols,
                            double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

inline void validate_spec(const HeteroSpec& s) {
  require(s.input_dim > 0 && s.output_dim > 0, ErrorKind::kConfig,
          "dimensions must be positive");
  require(s.n_train >= 1 && s.n_test >= 1, ErrorKind::kConfig,
          "sample counts must be positive");
  require(static_cast<int>(s.sigma.size()) == s.output_dim, ErrorKind::kConfig,
          "sigma needs one entry per output");
  for (double v : s.sigma) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::kConfig,
            "sigma entries must be finite and nonnegative");
  }
  require(s.map == TrueMap::kLinear || s.mixture_units > 0, ErrorKind::kConfig,
          "mixture_units must be positive");
}

}  // namespace detail

inline HeteroTruth make_truth(const HeteroSpec& spec) {
  detail::validate_spec(spec);
  Engine rng = make_engine(spec.seed, {0x7e0, 1});
  const int p = spec.input_dim;
  const int c = spec.output_dim;
  const int m = spec.mixture_units;
  HeteroTruth t;
  t.map = spec.map;
  t.A = detail::normal_matrix(rng, c, p, 1.0 / std::sqrt(p));
  t.b = detail::normal_matrix(rng, c, 1, 1.0);
  if (spec.map == TrueMap::kTanhMixture) {
    t.U = detail::normal_matrix(rng, m, p, 2.0 / std::sqrt(p));
    t.d = detail::normal_matrix(rng, m, 1, 0.5);
    t.V = detail::normal_matrix(rng, c, m, 2.0 / std::sqrt(m));
  }
  return t;
}

inline DatasetSplit gen_heteroscedastic_regression(const HeteroSpec& spec) {
  const HeteroTruth truth = make_truth(spec);
  auto draw = [&](int n, std::uint64_t tag) {
    Engine x_rng = make_engine(spec.seed, {0x7e0, tag, 0});
    Engine e_rng = make_engine(spec.seed, {0x7e0, tag, 1});
    Dataset d;
    d.num_outputs = spec.output_dim;
    d.provenance = "synthetic:heteroscedastic";
    d.X = detail::normal_matrix(x_rng, n, spec.input_dim, 1.0);
    d.Y = truth.evaluate(d.X);
    for (int i = 0; i < spec.output_dim; ++i) {
      if (spec.sigma[i] == 0.0) continue;
      std::normal_distribution<double> noise(0.0, spec.sigma[i]);
      for (int r = 0; r < n; ++r) d.Y(r, i) += noise(e_rng);
    }
    return d;
  };
  return {draw(spec.n_train, 2), draw(spec.n_test, 3)};
}

// ---------------------------------------------------------------------------
// Imbalanced Gaussian-blob classification

struct ImbalanceSpec {
  int num_classes = 10;
  int input_dim = 8;
  Matrix means;            // c x p; drawn from N(0, separation^2) when empty
  double separation = 1.5;
  double spread = 1.0;     // isotropic per-class stddev
  int base_per_class = 500;
  int test_per_class = 100;
  std::vector<double> retention;  // per class in (0, 1]; empty = all 1
  std::uint64_t seed = 1;
};

inline Matrix blob_means(const ImbalanceSpec& spec) {
  if (spec.means.size() != 0) return spec.means;
  Engine rng = make_engine(spec.seed, {0xb10b, 0});
  return detail::normal_matrix(rng, spec.num_classes, spec.input_dim,
                               spec.separation);
}

inline std::vector<long> retained_counts(const ImbalanceSpec& spec) {
  std::vector<long> counts(spec.num_classes);
  for (int i = 0; i < spec.num_classes; ++i) {
    const double r = spec.retention.empty() ? 1.0 : spec.retention[i];
    detail::require(r > 0.0 && r <= 1.0, ErrorKind::kConfig,
                    "retention must lie in (0, 1]");
    counts[i] = std::lround(spec.base_per_class * r);
    detail::require(counts[i] >= 1, ErrorKind::kDegenerateClass,
                    "class " + std::to_string(i) + " retains no samples");
  }
  return counts;
}

inline DatasetSplit gen_imbalanced_classification(const ImbalanceSpec& spec) {
  using detail::require;
  require(spec.num_classes >= 2 && spec.input_dim >= 1, ErrorKind::kConfig,
          "need at least two classes and one feature");
  require(spec.base_per_class >= 1 && spec.test_per_class >= 1,
          ErrorKind::kConfig, "per-class sample counts must be positive");
  require(spec.retention.empty() ||
              static_cast<int>(spec.retention.size()) == spec.num_classes,
          ErrorKind::kConfig, "retention needs one entry per class");
  require(spec.spread > 0.0, ErrorKind::kConfig, "spread must be positive");
  const Matrix means = blob_means(spec);
  require(means.rows() == spec.num_classes && means.cols() == spec.input_dim,
          ErrorKind::kConfig, "means must be num_classes x input_dim");
  const std::vector<long> train_counts = retained_counts(spec);

  auto draw = [&](const std::vector<long>& counts, std::uint64_t tag) {
    const long n = std::accumulate(counts.begin(), counts.end(), 0L);
    Dataset d;
    d.num_outputs = spec.num_classes;
    d.provenance = "synthetic:imbalanced-blobs";
    d.X.resize(n, spec.input_dim);
    d.labels.resize(n);
    std::normal_distribution<double> noise(0.0, spec.spread);
    Eigen::Index row = 0;
    for (int k = 0; k < spec.num_classes; ++k) {
      Engine rng = make_engine(spec.seed, {0xb10b, tag, static_cast<std::uint64_t>(k)});
      for (long s = 0; s < counts[k]; ++s, ++row) {
        for (int j = 0; j < spec.input_dim; ++j) {
          d.X(row, j) = means(k, j) + noise(rng);
        }
        d.labels[row] = k;
      }
    }
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    Engine shuffle_rng = make_engine(spec.seed, {0xb10b, tag, 0x5f});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Dataset shuffled = select_rows(d, order);
    return shuffled;
  };
  std::vector<long> test_counts(spec.num_classes, spec.test_per_class);
  return {draw(train_counts, 1), draw(test_counts, 2)};
}

// ---------------------------------------------------------------------------
// Standardization

struct StandardizeStats {
  Vector mean;
  Vector stddev;  // population stddev; 0 marks a constant column
};

struct StandardizedSplit {
  Dataset train;
  Dataset test;
  StandardizeStats stats;
};

inline Dataset apply_standardize(Dataset d, const StandardizeStats& s) {
  detail::require(d.X.cols() == s.mean.size(), ErrorKind::kShape,
                  "feature count does not match standardization stats");
  for (Eigen::Index j = 0; j < d.X.cols(); ++j) {
    if (s.stddev[j] == 0.0) {
      d.X.col(j).setZero();
    } else {
      d.X.col(j) = ((d.X.col(j).array() - s.mean[j]) / s.stddev[j]).matrix();
    }
  }
  return d;
}

inline StandardizedSplit standardize(const Dataset& train, const Dataset& test) {
  detail::require(train.X.cols() == test.X.cols(), ErrorKind::kShape,
                  "train and test feature counts differ");
  StandardizeStats s;
  s.mean = train.X.colwise().mean().transpose();
  s.stddev = Vector(train.X.cols());
  for (Eigen::Index j = 0; j < train.X.cols(); ++j) {
    const double var =
        (train.X.col(j).array() - s.mean[j]).square().mean();
    const double sd = std::sqrt(var);
    s.stddev[j] = sd <= 1e-12 * std::max(1.0, std::abs(s.mean[j])) ? 0.0 : sd;
  }
  return {apply_standardize(train, s), apply_standardize(test, s), s};
}

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
  std::vector<std::string> target_columns;  // regression targets
  std::optional<std::string> label_column;  // classification label
  std::optional<int> num_classes;           // default: max label + 1
  char delimiter = ',';
  bool header = true;
};

namespace detail {

inline std::vector<std::string_view> split_line(std::string_view line,
                                                char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename T>
T parse_cell(std::string_view cell, std::size_t line_no, std::size_t col,
             const std::string& col_name) {
  const std::string_view t = trim(cell);
  const std::string where = "line " + std::to_string(line_no) + ", column " +
                            std::to_string(col + 1) + " (" + col_name + ")";
  require(!t.empty(), ErrorKind::kParse, "missing value at " + where);
  T value{};
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), value);
  require(ec == std::errc() && ptr == t.data() + t.size(), ErrorKind::kParse,
          "cannot parse '" + std::string(t) + "' at " + where);
  if constexpr (std::is_floating_point_v<T>) {
    require(std::isfinite(value), ErrorKind::kParse,
            "non-finite value at " + where);
  }
  return value;
}

inline std::size_t resolve_column(const std::string& key,
                                  const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == key) return i;
  }
  std::size_t idx = 0;
  const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), idx);
  require(ec == std::errc() && ptr == key.data() + key.size() &&
              idx < names.size(),
          ErrorKind::kConfig, "schema column '" + key + "' not found");
  return idx;
}

}  // namespace detail

inline Dataset load_csv_dataset(const std::filesystem::path& path,
                                const CsvSchema& schema) {
  using detail::require;
  require(schema.label_column.has_value() != !schema.target_columns.empty(),
          ErrorKind::kConfig,
          "schema needs either target columns or a label column");
  if (!std::filesystem::exists(path)) {
    detail::fail(ErrorKind::kIo, "no such file: " + path.string());
  }
  const std::string text = read_file(path);

  std::vector<std::string_view> lines;
  for (std::string_view rest = text; !rest.empty();) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  require(!lines.empty(), ErrorKind::kParse, "empty CSV file " + path.string());

  std::vector<std::string> names;
  std::size_t first_data = 0;
  const auto head = detail::split_line(lines.front(), schema.delimiter);
  if (schema.header) {
    for (auto h : head) names.emplace_back(detail::trim(h));
    first_data = 1;
  } else {
    for (std::size_t i = 0; i < head.size(); ++i) names.push_back(std::to_string(i));
  }
  const std::size_t width = names.size();

  std::vector<bool> is_target(width, false);
  std::vector<std::size_t> target_idx;
  for (const auto& key : schema.target_columns) {
    target_idx.push_back(detail::resolve_column(key, names));
    is_target[target_idx.back()] = true;
  }
  std::optional<std::size_t> label_idx;
  if (schema.label_column) {
    label_idx = detail::resolve_column(*schema.label_column, names);
    is_target[*label_idx] = true;
  }
  std::vector<std::size_t> feature_idx;
  for (std::size_t i = 0; i < width; ++i) {
    if (!is_target[i]) feature_idx.push_back(i);
  }
  require(!feature_idx.empty(), ErrorKind::kConfig, "no feature columns");

  const std::size_t n = lines.size() - first_data;
  require(n >= 1, ErrorKind::kParse, "CSV has no data rows");
  Dataset d;
  d.provenance = path.string();
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(feature_idx.size()));
  if (label_idx) {
    d.labels.resize(n);
  } else {
    d.Y.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(target_idx.size()));
  }
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t line_no = first_data + r + 1;
    const auto cells = detail::split_line(lines[first_data + r], schema.delimiter);
    require(cells.size() == width, ErrorKind::kParse,
            "line " + std::to_string(line_no) + " has " +
                std::to_string(cells.size()) + " cells, expected " +
                std::to_string(width));
    const auto row = static_cast<Eigen::Index>(r);
    for (std::size_t j = 0; j < feature_idx.size(); ++j) {
      const std::size_t col = feature_idx[j];
      d.X(row, static_cast<Eigen::Index>(j)) =
          detail::parse_cell<double>(cells[col], line_no, col, names[col]);
    }
    if (label_idx) {
      const int y =
          detail::parse_cell<int>(cells[*label_idx], line_no, *label_idx, names[*label_idx]);
      require(y >= 0, ErrorKind::kLabel,
              "negative label on line " + std::to_string(line_no));
      d.labels[r] = y;
    } else {
      for (std::size_t j = 0; j < target_idx.size(); ++j) {
        const std::size_t col = target_idx[j];
        d.Y(row, static_cast<Eigen::Index>(j)) =
            detail::parse_cell<double>(cells[col], line_no, col, names[col]);
      }
    }
  }
  if (label_idx) {
    const int max_label = *std::max_element(d.labels.begin(), d.labels.end());
    d.num_outputs = schema.num_classes.value_or(max_label + 1);
  } else {
    d.num_outputs = static_cast<int>(target_idx.size());
  }
  validate(d);
  return d;
}

// Columns x0..x{p-1} then y0..y{c-1} (or a single `label` column).
inline std::string dataset_to_csv(const Dataset& d) {
  std::string out;
  for (Eigen::Index j = 0; j < d.X.cols(); ++j) {
    out += "x" + std::to_string(j) + ",";
  }
  if (d.is_classification()) {
    out += "label\n";
  } else {
    for (Eigen::Index j = 0; j < d.Y.cols(); ++j) {
      out += "y" + std::to_string(j) + (j + 1 < d.Y.cols() ? "," : "\n");
    }
  }
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) {
    for (Eigen::Index j = 0; j < d.X.cols(); ++j) {
      out += format_double(d.X(r, j)) + ",";
    }
    if (d.is_classification()) {
      out += std::to_string(d.labels[r]) + "\n";
    } else {
      for (Eigen::Index j = 0; j < d.Y.cols(); ++j) {
        out += format_double(d.Y(r, j)) + (j + 1 < d.Y.cols() ? "," : "\n");
      }
    }
  }
  return out;
}

inline CsvSchema default_schema(const Dataset& d) {
  CsvSchema s;
  if (d.is_classification()) {
    s.label_column = "label";
    s.num_classes = d.num_outputs;
  } else {
    for (Eigen::Index j = 0; j < d.Y.cols(); ++j) {
      s.target_columns.push_back("y" + std::to_string(j));
    }
  }
  return s;
}

inline void write_csv_dataset(const std::filesystem::path& path, const Dataset& d) {
  write_file_atomic(path, dataset_to_csv(d));
}

}  // namespace wraploss
