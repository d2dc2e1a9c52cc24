#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowids/task.hpp"
#include "flowids/tensor.hpp"

namespace flowids::data {

enum class ColumnKind { kNumeric, kCategorical, kLabel };

std::string to_string(ColumnKind kind);
ColumnKind column_kind_from_string(const std::string& s);

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
  std::vector<std::string> categories;  // fitted, categorical columns only
};

// Per-column standardization parameters. Standard deviation is the
// population estimator (divide by n); constant columns keep sigma = 0 and
// transform to all zeros.
struct ScalerParams {
  std::vector<std::string> columns;
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Maps the raw label vocabulary {Acceptable, Safe, Fun, Unrated, Unsafe}
// (case-insensitive, trimmed) onto contiguous class indices.
struct LabelCodec {
  TaskMode mode = TaskMode::kMulticlass;
  std::vector<std::string> class_names;
  std::map<std::string, int> raw_to_class;  // lower-cased raw -> index

  int encode(const std::string& raw) const;
  std::size_t n_classes() const { return class_names.size(); }

  static LabelCodec multiclass();
  static LabelCodec binary();
  static LabelCodec for_task(TaskMode mode);
};

// Typed columns of raw strings, straight out of a CSV.
struct RawDataset {
  std::vector<ColumnSchema> schema;
  std::vector<std::vector<std::string>> columns;  // schema order
  std::size_t n_rows = 0;
  std::size_t label_index = 0;
  std::vector<std::size_t> missing_per_column;
};

// Fully numeric, scaled, selected feature matrix with encoded labels.
struct Dataset {
  Tensor X;  // [n, d]
  std::vector<int> y;
  std::vector<std::string> feature_names;
  LabelCodec codec;
  std::vector<std::uint8_t> provenance;  // empty, or per-row 1 = synthetic

  std::size_t rows() const { return X.rank() > 0 ? X.dim(0) : 0; }
  std::size_t cols() const { return X.rank() > 1 ? X.dim(1) : 0; }
  std::vector<std::int64_t> class_counts() const;
};

// ------------------------------------------------------------ operations

// Columns are typed by the override map when given, otherwise inferred:
// a column where every non-empty cell parses as a number is numeric, the
// rest are categorical. The named label column must exist.
RawDataset load_csv(const std::filesystem::path& path,
                    const std::string& label_column,
                    const std::map<std::string, ColumnKind>& kind_override = {});

// Removes rows with any empty cell, or any unparseable cell in a numeric
// column. Returns the number of dropped rows; throws when nothing is left.
std::size_t drop_missing(RawDataset& raw);

std::vector<std::string> fit_categories(const std::vector<std::string>& values);

// [n, m] indicator matrix; categories must be fitted (ordered) beforehand.
Tensor one_hot_encode(const std::vector<std::string>& values,
                      const std::vector<std::string>& categories);

ScalerParams fit_standard_scaler(const Tensor& x,
                                 const std::vector<std::string>& names);
Tensor apply_standard_scaler(const Tensor& x, const ScalerParams& params);

std::vector<int> encode_labels_multiclass(const std::vector<std::string>& raw);
std::vector<int> encode_labels_binary(const std::vector<std::string>& raw);

// Pearson correlation of every column against the encoded labels. Columns
// with zero variance get r = 0 (and are never selected).
std::vector<double> pearson_r(const Tensor& x, const std::vector<int>& y);

// Keeps columns with |r| > threshold (or r > threshold in signed mode),
// preserving column order. Throws when nothing survives.
std::vector<std::size_t> select_features_pearson(const Tensor& x,
                                                 const std::vector<int>& y,
                                                 double threshold = 0.5,
                                                 bool signed_mode = false);

// Seeded, stratified index split. Classes with one instance go to train with
// a warning.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
stratified_split_indices(const std::vector<int>& y, double val_fraction,
                         std::uint64_t seed,
                         std::vector<std::string>* warnings = nullptr);

std::pair<Dataset, Dataset> train_val_split(const Dataset& ds,
                                            double val_fraction,
                                            std::uint64_t seed,
                                            std::vector<std::string>* warnings = nullptr);

Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& indices);

// ----------------------------------------------------- composite pipeline

struct PreprocessOptions {
  TaskMode task = TaskMode::kMulticlass;
  double pearson_threshold = 0.5;
  bool pearson_signed = false;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct PreprocessResult {
  Dataset train;
  Dataset val;
  ScalerParams scaler;
  std::vector<ColumnSchema> schema;          // categories fitted on train
  std::vector<std::string> encoded_columns;  // names after one-hot expansion
  std::vector<double> pearson;               // per encoded column, on train
  std::vector<std::size_t> selected;         // indices into encoded columns
  std::size_t dropped_rows = 0;
  std::vector<std::string> warnings;
};

// drop_missing -> encode labels -> split -> one-hot (fit on train) ->
// scale (fit on train) -> Pearson selection (fit on train), applied to both
// splits. Fitting anything on validation rows would leak.
PreprocessResult preprocess(const RawDataset& raw,
                            const PreprocessOptions& options);

// --------------------------------------------------------- persistence

// Feature columns (17 significant digits), a label column with class names,
// and a provenance column when the dataset carries one.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path,
                         const LabelCodec& codec);

std::string sidecar_to_json(const PreprocessResult& result,
                            const PreprocessOptions& options,
                            const std::string& config_hash);
// Reads back what later stages need: codec and selected feature names.
struct SidecarInfo {
  TaskMode task = TaskMode::kMulticlass;
  LabelCodec codec;
  std::vector<std::string> selected_features;
  ScalerParams scaler;
};
SidecarInfo read_sidecar_json(const std::filesystem::path& path);

}  // namespace flowids::data
