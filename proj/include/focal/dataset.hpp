// Dataset construction: the hierarchical-Gaussian generator (coarse labels as
// target, fine labels as sensitive attribute), the tabular CSV ingester, and
// deterministic stratified splitting. Datasets are immutable after
// construction and safe to share across threads.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "focal/checkpoint.hpp"
#include "focal/csv.hpp"
#include "focal/errors.hpp"
#include "focal/matrix.hpp"
#include "focal/rng.hpp"
#include "focal/similarity.hpp"

namespace focal {

struct LabeledDataset {
  DenseMatrix features;
  std::vector<std::size_t> target_labels;
  std::vector<std::size_t> sensitive_labels;
  std::size_t n_target_classes = 0;
  std::size_t n_sensitive_classes = 0;
  std::optional<LabelGrouping> grouping;
  std::vector<std::size_t> example_ids;  // original row ids, preserved by split()

  std::size_t size() const { return features.rows; }

  void check_consistent() const {
    if (target_labels.size() != size() || sensitive_labels.size() != size() ||
        example_ids.size() != size())
      throw std::invalid_argument("LabeledDataset: row counts disagree");
    for (std::size_t t : target_labels)
      if (t >= n_target_classes) throw std::invalid_argument("LabeledDataset: target label out of range");
    for (std::size_t s : sensitive_labels)
      if (s >= n_sensitive_classes)
        throw std::invalid_argument("LabeledDataset: sensitive label out of range");
  }
};

struct SyntheticSpec {
  std::size_t n_super = 20;
  std::size_t n_sub_per_super = 5;
  std::size_t dim = 64;
  std::size_t samples_per_sub = 100;
  double sigma_super = 3.0;
  double sigma_sub = 1.0;
  double sigma_noise = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_super < 2) throw std::invalid_argument("SyntheticSpec: n_super must be >= 2");
    if (n_sub_per_super < 2) throw std::invalid_argument("SyntheticSpec: n_sub_per_super must be >= 2");
    if (dim == 0 || samples_per_sub == 0)
      throw std::invalid_argument("SyntheticSpec: dim and samples_per_sub must be >= 1");
    if (!(sigma_super > 0.0) || !(sigma_sub > 0.0))
      throw std::invalid_argument("SyntheticSpec: sigma_super and sigma_sub must be > 0");
    if (!(sigma_noise >= 0.0)) throw std::invalid_argument("SyntheticSpec: sigma_noise must be >= 0");
  }
};

// Superclass centers ~ N(0, sigma_super^2 I); subclass centers offset by
// N(0, sigma_sub^2 I); samples offset by N(0, sigma_noise^2 I). Target is the
// superclass, sensitive is the global subclass; the grouping maps one to the
// other.
inline LabeledDataset generate_hierarchical_gaussian(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  const std::size_t n_sub_total = spec.n_super * spec.n_sub_per_super;
  std::vector<std::vector<double>> sub_centers(n_sub_total, std::vector<double>(spec.dim));
  std::vector<double> super_center(spec.dim);
  for (std::size_t sup = 0; sup < spec.n_super; ++sup) {
    for (double& v : super_center) v = spec.sigma_super * rng.normal();
    for (std::size_t sub = 0; sub < spec.n_sub_per_super; ++sub) {
      std::vector<double>& center = sub_centers[sup * spec.n_sub_per_super + sub];
      for (std::size_t d = 0; d < spec.dim; ++d)
        center[d] = super_center[d] + spec.sigma_sub * rng.normal();
    }
  }

  LabeledDataset out;
  const std::size_t n_rows = n_sub_total * spec.samples_per_sub;
  out.features = DenseMatrix(n_rows, spec.dim);
  out.target_labels.reserve(n_rows);
  out.sensitive_labels.reserve(n_rows);
  out.example_ids.reserve(n_rows);

  std::size_t row = 0;
  for (std::size_t cls = 0; cls < n_sub_total; ++cls) {
    for (std::size_t s = 0; s < spec.samples_per_sub; ++s, ++row) {
      double* dst = out.features.row(row);
      for (std::size_t d = 0; d < spec.dim; ++d)
        dst[d] = sub_centers[cls][d] + spec.sigma_noise * rng.normal();
      out.target_labels.push_back(cls / spec.n_sub_per_super);
      out.sensitive_labels.push_back(cls);
      out.example_ids.push_back(row);
    }
  }

  out.n_target_classes = spec.n_super;
  out.n_sensitive_classes = n_sub_total;
  std::vector<std::size_t> group_of(n_sub_total);
  for (std::size_t cls = 0; cls < n_sub_total; ++cls) group_of[cls] = cls / spec.n_sub_per_super;
  out.grouping.emplace(std::move(group_of));
  out.check_consistent();
  return out;
}

// ---------------------------------------------------------------------------
// Tabular ingestion
// ---------------------------------------------------------------------------

struct TabularSchema {
  std::vector<std::string> numeric_columns;
  std::vector<std::string> categorical_columns;
  std::string target_column;
  std::string target_positive;  // field value mapping to label 1
  std::string sensitive_column;
  std::vector<std::string> missing_values{"", "?"};
};

struct TabularLoadResult {
  LabeledDataset dataset;
  std::size_t dropped_rows = 0;
  // Feature indices holding raw numeric columns (the ones to standardize);
  // one-hot blocks follow them and are left untouched.
  std::vector<std::size_t> numeric_feature_columns;
  std::vector<std::string> sensitive_class_names;
};

namespace detail {

inline bool is_missing(const TabularSchema& schema, const std::string& field) {
  for (const std::string& m : schema.missing_values)
    if (field == m) return true;
  return false;
}

inline std::string trimmed(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  std::size_t e = s.find_last_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Feature layout: numeric columns in schema order, then one one-hot block per
// categorical column in schema order (category order is first appearance).
// Rows containing a missing token in any used column are dropped and counted.
inline TabularLoadResult load_tabular_csv(const std::string& path, const TabularSchema& schema) {
  const std::vector<std::vector<std::string>> rows = csv::read_file(path);
  if (rows.empty()) throw IoError("load_tabular_csv: empty file " + path);

  std::map<std::string, std::size_t> header;
  for (std::size_t c = 0; c < rows[0].size(); ++c) header[detail::trimmed(rows[0][c])] = c;
  auto column_index = [&](const std::string& name) {
    auto it = header.find(name);
    if (it == header.end())
      throw ConfigError("load_tabular_csv: unknown column '" + name + "'");
    return it->second;
  };

  std::vector<std::size_t> numeric_idx, categorical_idx;
  for (const std::string& name : schema.numeric_columns) numeric_idx.push_back(column_index(name));
  for (const std::string& name : schema.categorical_columns)
    categorical_idx.push_back(column_index(name));
  const std::size_t target_idx = column_index(schema.target_column);
  const std::size_t sensitive_idx = column_index(schema.sensitive_column);

  std::vector<std::size_t> used = numeric_idx;
  used.insert(used.end(), categorical_idx.begin(), categorical_idx.end());
  used.push_back(target_idx);
  used.push_back(sensitive_idx);

  // First pass: drop rows with missing values, collect categories in
  // first-appearance order.
  std::vector<std::size_t> kept;
  std::size_t dropped = 0;
  std::vector<std::vector<std::string>> categories(categorical_idx.size());
  std::vector<std::map<std::string, std::size_t>> category_index(categorical_idx.size());
  std::vector<std::string> sensitive_names;
  std::map<std::string, std::size_t> sensitive_index;

  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() == 1 && rows[r][0].empty()) continue;  // stray blank line
    if (rows[r].size() != rows[0].size())
      throw IoError("load_tabular_csv: row " + std::to_string(r) +
                               " has wrong field count");
    bool missing = false;
    for (std::size_t c : used)
      if (detail::is_missing(schema, detail::trimmed(rows[r][c]))) missing = true;
    if (missing) {
      ++dropped;
      continue;
    }
    kept.push_back(r);
    for (std::size_t ci = 0; ci < categorical_idx.size(); ++ci) {
      const std::string value = detail::trimmed(rows[r][categorical_idx[ci]]);
      if (!category_index[ci].count(value)) {
        category_index[ci][value] = categories[ci].size();
        categories[ci].push_back(value);
      }
    }
    const std::string sens = detail::trimmed(rows[r][sensitive_idx]);
    if (!sensitive_index.count(sens)) {
      sensitive_index[sens] = sensitive_names.size();
      sensitive_names.push_back(sens);
    }
  }
  if (kept.empty()) throw IoError("load_tabular_csv: empty dataset (no usable rows)");
  if (sensitive_names.size() < 2)
    throw IoError("load_tabular_csv: sensitive column has a single value");

  std::size_t width = numeric_idx.size();
  for (const auto& cats : categories) width += cats.size();

  TabularLoadResult out;
  out.dropped_rows = dropped;
  out.sensitive_class_names = sensitive_names;
  for (std::size_t c = 0; c < numeric_idx.size(); ++c) out.numeric_feature_columns.push_back(c);

  LabeledDataset& data = out.dataset;
  data.features = DenseMatrix(kept.size(), width);
  data.n_target_classes = 2;
  data.n_sensitive_classes = sensitive_names.size();

  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::vector<std::string>& row = rows[kept[i]];
    double* dst = data.features.row(i);
    for (std::size_t c = 0; c < numeric_idx.size(); ++c) {
      const std::string field = detail::trimmed(row[numeric_idx[c]]);
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0')
        throw IoError("load_tabular_csv: non-numeric value '" + field + "' in column " +
                                 schema.numeric_columns[c]);
      dst[c] = v;
    }
    std::size_t offset = numeric_idx.size();
    for (std::size_t ci = 0; ci < categorical_idx.size(); ++ci) {
      const std::string value = detail::trimmed(row[categorical_idx[ci]]);
      dst[offset + category_index[ci].at(value)] = 1.0;
      offset += categories[ci].size();
    }
    data.target_labels.push_back(detail::trimmed(row[target_idx]) == schema.target_positive ? 1 : 0);
    data.sensitive_labels.push_back(sensitive_index.at(detail::trimmed(row[sensitive_idx])));
    data.example_ids.push_back(i);
  }
  data.check_consistent();
  return out;
}

// ---------------------------------------------------------------------------
// Standardization (replaces batch norm; statistics come from the training
// split only)
// ---------------------------------------------------------------------------

struct Standardizer {
  std::vector<std::size_t> columns;
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const DenseMatrix& train_features, std::vector<std::size_t> columns) {
    if (train_features.rows == 0) throw std::invalid_argument("Standardizer: empty training data");
    Standardizer st;
    st.columns = std::move(columns);
    const double n = static_cast<double>(train_features.rows);
    for (std::size_t c : st.columns) {
      double total = 0.0;
      for (std::size_t i = 0; i < train_features.rows; ++i) total += train_features.at(i, c);
      const double mu = total / n;
      double var = 0.0;
      for (std::size_t i = 0; i < train_features.rows; ++i) {
        const double d = train_features.at(i, c) - mu;
        var += d * d;
      }
      var /= n;
      st.mean.push_back(mu);
      st.scale.push_back(var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0);
    }
    return st;
  }

  void apply(DenseMatrix& features) const {
    for (std::size_t k = 0; k < columns.size(); ++k) {
      const std::size_t c = columns[k];
      for (std::size_t i = 0; i < features.rows; ++i)
        features.at(i, c) = (features.at(i, c) - mean[k]) * scale[k];
    }
  }
};

// ---------------------------------------------------------------------------
// Deterministic stratified splitting
// ---------------------------------------------------------------------------

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

namespace detail {

inline LabeledDataset take_rows(const LabeledDataset& data, const std::vector<std::size_t>& rows) {
  LabeledDataset out;
  out.features = DenseMatrix(rows.size(), data.features.cols);
  out.n_target_classes = data.n_target_classes;
  out.n_sensitive_classes = data.n_sensitive_classes;
  out.grouping = data.grouping;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    std::copy(data.features.row(r), data.features.row(r) + data.features.cols,
              out.features.row(i));
    out.target_labels.push_back(data.target_labels[r]);
    out.sensitive_labels.push_back(data.sensitive_labels[r]);
    out.example_ids.push_back(data.example_ids[r]);
  }
  return out;
}

}  // namespace detail

// Stratified by (target, sensitive) pair when every stratum is large enough,
// otherwise by sensitive label. Disjoint, exhaustive, deterministic. Zero
// fractions yield empty splits; whether that is allowed is the caller's call.
inline DatasetSplits split(const LabeledDataset& data, const SplitFractions& fractions,
                           std::uint64_t seed) {
  const double f[3] = {fractions.train, fractions.val, fractions.test};
  double total = 0.0;
  for (double v : f) {
    if (v < 0.0) throw std::invalid_argument("split: negative fraction");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
  if (f[0] <= 0.0) throw std::invalid_argument("split: train fraction must be positive");
  std::size_t n_positive = 0;
  for (double v : f) n_positive += v > 0.0 ? 1 : 0;

  // Sensitive classes must be able to reach every nonempty split.
  std::vector<std::size_t> class_counts(data.n_sensitive_classes, 0);
  for (std::size_t s : data.sensitive_labels) ++class_counts[s];
  for (std::size_t cls = 0; cls < class_counts.size(); ++cls)
    if (class_counts[cls] < n_positive)
      throw std::invalid_argument("split: sensitive class " + std::to_string(cls) + " has " +
                                  std::to_string(class_counts[cls]) + " rows but " +
                                  std::to_string(n_positive) + " splits require it");

  // Choose the stratification key.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_counts;
  for (std::size_t i = 0; i < data.size(); ++i)
    ++pair_counts[{data.target_labels[i], data.sensitive_labels[i]}];
  bool by_pair = true;
  for (const auto& [key, count] : pair_counts)
    if (count < n_positive) by_pair = false;

  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::pair<std::size_t, std::size_t> key =
        by_pair ? std::pair{data.target_labels[i], data.sensitive_labels[i]}
                : std::pair{std::size_t{0}, data.sensitive_labels[i]};
    strata[key].push_back(i);
  }

  Rng rng(seed);
  std::vector<std::size_t> assignment(data.size(), 0);
  for (auto& [key, rows] : strata) {
    rng.shuffle(rows);
    const double n = static_cast<double>(rows.size());
    std::size_t counts[3];
    double fracs[3];
    std::size_t assigned = 0;
    for (int j = 0; j < 3; ++j) {
      const double exact = n * f[j];
      counts[j] = static_cast<std::size_t>(std::floor(exact + 1e-12));
      fracs[j] = exact - static_cast<double>(counts[j]);
      assigned += counts[j];
    }
    while (assigned < rows.size()) {
      int best = 0;
      for (int j = 1; j < 3; ++j)
        if (fracs[j] > fracs[best] + 1e-12) best = j;
      ++counts[best];
      fracs[best] = -1.0;
      ++assigned;
    }
    std::size_t pos = 0;
    for (int j = 0; j < 3; ++j)
      for (std::size_t c = 0; c < counts[j]; ++c) assignment[rows[pos++]] = static_cast<std::size_t>(j);
  }

  // Every sensitive class must appear in each nonempty split; steal from the
  // split holding most of that class when a split came up empty.
  for (int j = 0; j < 3; ++j) {
    if (f[j] <= 0.0) continue;
    for (std::size_t cls = 0; cls < data.n_sensitive_classes; ++cls) {
      std::size_t have = 0;
      for (std::size_t i = 0; i < data.size(); ++i)
        if (assignment[i] == static_cast<std::size_t>(j) && data.sensitive_labels[i] == cls) ++have;
      if (have > 0) continue;
      std::size_t donor_count[3] = {0, 0, 0};
      for (std::size_t i = 0; i < data.size(); ++i)
        if (data.sensitive_labels[i] == cls) ++donor_count[assignment[i]];
      int donor = 0;
      for (int d = 1; d < 3; ++d)
        if (donor_count[d] > donor_count[donor]) donor = d;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (assignment[i] == static_cast<std::size_t>(donor) && data.sensitive_labels[i] == cls) {
          assignment[i] = static_cast<std::size_t>(j);
          break;
        }
      }
    }
  }

  std::vector<std::size_t> rows_of[3];
  for (std::size_t i = 0; i < data.size(); ++i) rows_of[assignment[i]].push_back(i);
  return DatasetSplits{detail::take_rows(data, rows_of[0]), detail::take_rows(data, rows_of[1]),
                       detail::take_rows(data, rows_of[2])};
}

// ---------------------------------------------------------------------------
// Versioned binary dataset cache
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kDatasetMagic = 0x5344'5346ull;  // "FSDS"
inline constexpr std::uint64_t kDatasetVersion = 1;

inline void save_dataset(std::ostream& out, const LabeledDataset& data) {
  bin::write_u64(out, kDatasetMagic);
  bin::write_u64(out, kDatasetVersion);
  bin::write_u64(out, data.features.rows);
  bin::write_u64(out, data.features.cols);
  bin::write_f64_array(out, data.features.data);
  bin::write_u64_array(out, data.target_labels);
  bin::write_u64_array(out, data.sensitive_labels);
  bin::write_u64(out, data.n_target_classes);
  bin::write_u64(out, data.n_sensitive_classes);
  bin::write_u64(out, data.grouping ? 1 : 0);
  if (data.grouping) {
    std::vector<std::size_t> groups;
    for (std::size_t cls = 0; cls < data.n_sensitive_classes; ++cls)
      groups.push_back(data.grouping->group_of(cls));
    bin::write_u64_array(out, groups);
  }
  bin::write_u64_array(out, data.example_ids);
}

inline LabeledDataset load_dataset(std::istream& in) {
  if (bin::read_u64(in) != kDatasetMagic) throw ArtifactError("dataset cache: bad magic");
  if (bin::read_u64(in) != kDatasetVersion)
    throw ArtifactError("dataset cache: unsupported version");
  LabeledDataset data;
  const std::size_t rows = static_cast<std::size_t>(bin::read_u64(in));
  const std::size_t cols = static_cast<std::size_t>(bin::read_u64(in));
  data.features.rows = rows;
  data.features.cols = cols;
  data.features.data = bin::read_f64_array(in);
  if (data.features.data.size() != rows * cols)
    throw ArtifactError("dataset cache: feature size mismatch");
  data.target_labels = bin::read_u64_array(in);
  data.sensitive_labels = bin::read_u64_array(in);
  data.n_target_classes = static_cast<std::size_t>(bin::read_u64(in));
  data.n_sensitive_classes = static_cast<std::size_t>(bin::read_u64(in));
  if (bin::read_u64(in) != 0) data.grouping.emplace(bin::read_u64_array(in));
  data.example_ids = bin::read_u64_array(in);
  data.check_consistent();
  return data;
}

}  // namespace focal
