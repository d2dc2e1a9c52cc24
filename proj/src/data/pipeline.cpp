#include "flowids/data/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "flowids/data/csv.hpp"
#include "flowids/errors.hpp"
#include "flowids/rng.hpp"
#include "flowids/util.hpp"

namespace flowids::data {

using nlohmann::json;

std::string to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::kNumeric: return "numeric";
    case ColumnKind::kCategorical: return "categorical";
    case ColumnKind::kLabel: return "label";
  }
  return "?";
}

ColumnKind column_kind_from_string(const std::string& s) {
  if (s == "numeric") return ColumnKind::kNumeric;
  if (s == "categorical") return ColumnKind::kCategorical;
  if (s == "label") return ColumnKind::kLabel;
  throw ConfigError("unknown column kind '" + s + "'");
}

// ------------------------------------------------------------ LabelCodec

int LabelCodec::encode(const std::string& raw) const {
  const std::string key = util::to_lower(util::trim(raw));
  auto it = raw_to_class.find(key);
  if (it == raw_to_class.end()) {
    throw LabelError("unknown label '" + util::trim(raw) + "'");
  }
  return it->second;
}

LabelCodec LabelCodec::multiclass() {
  LabelCodec codec;
  codec.mode = TaskMode::kMulticlass;
  codec.class_names = {"Acceptable", "Unrated", "Unsafe"};
  codec.raw_to_class = {{"acceptable", 0}, {"safe", 0},   {"unrated", 1},
                        {"fun", 1},        {"unsafe", 2}};
  return codec;
}

LabelCodec LabelCodec::binary() {
  LabelCodec codec;
  codec.mode = TaskMode::kBinary;
  codec.class_names = {"normal", "abnormal"};
  codec.raw_to_class = {{"acceptable", 0}, {"safe", 0},   {"unrated", 1},
                        {"fun", 1},        {"unsafe", 1}};
  return codec;
}

LabelCodec LabelCodec::for_task(TaskMode mode) {
  return mode == TaskMode::kMulticlass ? multiclass() : binary();
}

std::vector<std::int64_t> Dataset::class_counts() const {
  std::vector<std::int64_t> counts(codec.n_classes(), 0);
  for (int cls : y) {
    if (cls < 0 || static_cast<std::size_t>(cls) >= counts.size()) {
      throw LabelError("class index " + std::to_string(cls) +
                       " outside [0, " + std::to_string(counts.size()) + ")");
    }
    ++counts[static_cast<std::size_t>(cls)];
  }
  return counts;
}

// -------------------------------------------------------------- load_csv

namespace {

bool cell_missing(const std::string& cell) {
  return util::trim(cell).empty();
}

bool column_all_numeric(const std::vector<std::string>& values) {
  double tmp;
  for (const std::string& v : values) {
    if (cell_missing(v)) continue;
    if (!util::try_parse_double(v, tmp)) return false;
  }
  return true;
}

}  // namespace

RawDataset load_csv(const std::filesystem::path& path,
                    const std::string& label_column,
                    const std::map<std::string, ColumnKind>& kind_override) {
  const CsvTable table = read_csv(path);
  RawDataset raw;
  raw.n_rows = table.rows.size();
  {
    std::set<std::string> seen;
    for (const std::string& name : table.header) {
      if (!seen.insert(name).second) {
        throw CsvError(path.string() + ": duplicate column name '" + name +
                       "'");
      }
    }
  }
  bool found_label = false;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    ColumnSchema schema;
    schema.name = table.header[j];
    std::vector<std::string> values(raw.n_rows);
    for (std::size_t i = 0; i < raw.n_rows; ++i) values[i] = table.rows[i][j];
    if (schema.name == label_column) {
      schema.kind = ColumnKind::kLabel;
      raw.label_index = j;
      found_label = true;
    } else if (auto it = kind_override.find(schema.name);
               it != kind_override.end()) {
      schema.kind = it->second;
    } else {
      schema.kind = column_all_numeric(values) ? ColumnKind::kNumeric
                                               : ColumnKind::kCategorical;
    }
    std::size_t missing = 0;
    for (const std::string& v : values) {
      if (cell_missing(v)) ++missing;
    }
    raw.missing_per_column.push_back(missing);
    raw.schema.push_back(std::move(schema));
    raw.columns.push_back(std::move(values));
  }
  if (!found_label) {
    throw CsvError(path.string() + ": label column '" + label_column +
                   "' not found in header");
  }
  return raw;
}

std::size_t drop_missing(RawDataset& raw) {
  std::vector<bool> keep(raw.n_rows, true);
  double tmp;
  for (std::size_t j = 0; j < raw.columns.size(); ++j) {
    const bool numeric = raw.schema[j].kind == ColumnKind::kNumeric;
    for (std::size_t i = 0; i < raw.n_rows; ++i) {
      const std::string& cell = raw.columns[j][i];
      if (cell_missing(cell) ||
          (numeric && !util::try_parse_double(cell, tmp))) {
        keep[i] = false;
      }
    }
  }
  std::size_t kept = 0;
  for (std::size_t i = 0; i < raw.n_rows; ++i) {
    if (!keep[i]) continue;
    if (kept != i) {
      for (auto& column : raw.columns) column[kept] = std::move(column[i]);
    }
    ++kept;
  }
  const std::size_t dropped = raw.n_rows - kept;
  for (auto& column : raw.columns) column.resize(kept);
  for (std::size_t j = 0; j < raw.missing_per_column.size(); ++j) {
    raw.missing_per_column[j] = 0;
  }
  raw.n_rows = kept;
  if (kept == 0) {
    throw DataError("every row has missing values; nothing left to process");
  }
  return dropped;
}

// --------------------------------------------------------------- one-hot

std::vector<std::string> fit_categories(const std::vector<std::string>& values) {
  std::set<std::string> unique(values.begin(), values.end());
  return {unique.begin(), unique.end()};
}

Tensor one_hot_encode(const std::vector<std::string>& values,
                      const std::vector<std::string>& categories) {
  if (categories.empty()) {
    throw DataError("one-hot encoding needs at least one category");
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t m = 0; m < categories.size(); ++m) {
    if (!index.emplace(categories[m], m).second) {
      throw DataError("duplicate category '" + categories[m] + "'");
    }
  }
  Tensor out({values.size(), categories.size()});
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto it = index.find(values[i]);
    if (it == index.end()) {
      throw DataError("category '" + values[i] +
                      "' was not seen when the encoder was fitted");
    }
    out.at(i, it->second) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------- scaler

ScalerParams fit_standard_scaler(const Tensor& x,
                                 const std::vector<std::string>& names) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (names.size() != d) {
    throw ShapeError("scaler names count " + std::to_string(names.size()) +
                     " does not match columns " + std::to_string(d));
  }
  if (n == 0) throw DataError("cannot fit a scaler on zero rows");
  ScalerParams params;
  params.columns = names;
  params.mean.resize(d);
  params.stddev.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dlt = x.at(i, j) - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(n);  // population estimator
    params.mean[j] = mean;
    params.stddev[j] = std::sqrt(var);
  }
  return params;
}

Tensor apply_standard_scaler(const Tensor& x, const ScalerParams& params) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (params.mean.size() != d) {
    throw ShapeError("scaler was fitted on " +
                     std::to_string(params.mean.size()) +
                     " columns, input has " + std::to_string(d));
  }
  Tensor out({n, d});
  for (std::size_t j = 0; j < d; ++j) {
    const double mu = params.mean[j];
    const double sigma = params.stddev[j];
    for (std::size_t i = 0; i < n; ++i) {
      out.at(i, j) = sigma == 0.0 ? 0.0 : (x.at(i, j) - mu) / sigma;
    }
  }
  return out;
}

// ---------------------------------------------------------------- labels

namespace {

std::vector<int> encode_with(const LabelCodec& codec,
                             const std::vector<std::string>& raw) {
  std::vector<int> out;
  out.reserve(raw.size());
  for (const std::string& value : raw) out.push_back(codec.encode(value));
  return out;
}

}  // namespace

std::vector<int> encode_labels_multiclass(const std::vector<std::string>& raw) {
  return encode_with(LabelCodec::multiclass(), raw);
}

std::vector<int> encode_labels_binary(const std::vector<std::string>& raw) {
  return encode_with(LabelCodec::binary(), raw);
}

// --------------------------------------------------------------- Pearson

std::vector<double> pearson_r(const Tensor& x, const std::vector<int>& y) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (y.size() != n) {
    throw ShapeError("pearson: " + std::to_string(n) + " rows vs " +
                     std::to_string(y.size()) + " labels");
  }
  if (n == 0) throw DataError("pearson correlation needs at least one row");
  double y_mean = 0.0;
  for (int v : y) y_mean += static_cast<double>(v);
  y_mean /= static_cast<double>(n);
  double y_var = 0.0;
  for (int v : y) {
    const double dlt = static_cast<double>(v) - y_mean;
    y_var += dlt * dlt;
  }
  std::vector<double> r(d, 0.0);
  if (y_var == 0.0) return r;  // constant labels correlate with nothing
  for (std::size_t j = 0; j < d; ++j) {
    double x_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) x_mean += x.at(i, j);
    x_mean /= static_cast<double>(n);
    double x_var = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = x.at(i, j) - x_mean;
      x_var += dx * dx;
      cov += dx * (static_cast<double>(y[i]) - y_mean);
    }
    r[j] = x_var == 0.0 ? 0.0 : cov / std::sqrt(x_var * y_var);
  }
  return r;
}

std::vector<std::size_t> select_features_pearson(const Tensor& x,
                                                 const std::vector<int>& y,
                                                 double threshold,
                                                 bool signed_mode) {
  const std::vector<double> r = pearson_r(x, y);
  std::vector<std::size_t> selected;
  for (std::size_t j = 0; j < r.size(); ++j) {
    const double score = signed_mode ? r[j] : std::abs(r[j]);
    if (score > threshold) selected.push_back(j);
  }
  if (selected.empty()) {
    throw DataError(
        "no feature passed the Pearson threshold " +
        util::format_double(threshold) +
        "; lower --pearson-threshold or check the label encoding");
  }
  return selected;
}

// ----------------------------------------------------------------- split

std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
stratified_split_indices(const std::vector<int>& y, double val_fraction,
                         std::uint64_t seed,
                         std::vector<std::string>* warnings) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ConfigError("val_fraction must be in [0, 1), got " +
                      util::format_double(val_fraction));
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> train, val;
  for (auto& [cls, indices] : by_class) {
    rng.shuffle(indices);
    std::size_t n_val = 0;
    if (val_fraction > 0.0) {
      if (indices.size() == 1) {
        if (warnings != nullptr) {
          warnings->push_back("class " + std::to_string(cls) +
                              " has a single instance; keeping it in train");
        }
      } else {
        const auto want = static_cast<std::size_t>(std::llround(
            static_cast<double>(indices.size()) * val_fraction));
        n_val = std::clamp<std::size_t>(want, 1, indices.size() - 1);
      }
    }
    val.insert(val.end(), indices.begin(), indices.begin() + n_val);
    train.insert(train.end(), indices.begin() + n_val, indices.end());
  }
  rng.shuffle(train);
  rng.shuffle(val);
  return {train, val};
}

Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.feature_names = ds.feature_names;
  out.codec = ds.codec;
  out.X = Tensor({indices.size(), ds.cols()});
  out.y.resize(indices.size());
  if (!ds.provenance.empty()) out.provenance.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    for (std::size_t j = 0; j < ds.cols(); ++j) {
      out.X.at(i, j) = ds.X.at(src, j);
    }
    out.y[i] = ds.y[src];
    if (!ds.provenance.empty()) out.provenance[i] = ds.provenance[src];
  }
  return out;
}

std::pair<Dataset, Dataset> train_val_split(const Dataset& ds,
                                            double val_fraction,
                                            std::uint64_t seed,
                                            std::vector<std::string>* warnings) {
  if (!(val_fraction > 0.0) || val_fraction >= 1.0) {
    throw ConfigError("val_fraction must be in (0, 1), got " +
                      util::format_double(val_fraction));
  }
  auto [train_idx, val_idx] =
      stratified_split_indices(ds.y, val_fraction, seed, warnings);
  return {take_rows(ds, train_idx), take_rows(ds, val_idx)};
}

// ------------------------------------------------------------ preprocess

PreprocessResult preprocess(const RawDataset& raw_in,
                            const PreprocessOptions& options) {
  RawDataset raw = raw_in;
  PreprocessResult result;
  result.dropped_rows = drop_missing(raw);

  const LabelCodec codec = LabelCodec::for_task(options.task);
  const std::vector<int> labels =
      encode_with(codec, raw.columns[raw.label_index]);

  std::vector<std::size_t> train_idx, val_idx;
  if (options.val_fraction > 0.0) {
    std::tie(train_idx, val_idx) = stratified_split_indices(
        labels, options.val_fraction, options.seed, &result.warnings);
  } else {
    train_idx.resize(raw.n_rows);
    for (std::size_t i = 0; i < raw.n_rows; ++i) train_idx[i] = i;
  }

  // One-hot expansion, with categories fitted on the training rows only.
  std::vector<std::vector<double>> encoded;  // column-major
  result.schema = raw.schema;
  for (std::size_t j = 0; j < raw.columns.size(); ++j) {
    if (raw.schema[j].kind == ColumnKind::kLabel) continue;
    const std::vector<std::string>& values = raw.columns[j];
    if (raw.schema[j].kind == ColumnKind::kNumeric) {
      std::vector<double> column(raw.n_rows);
      for (std::size_t i = 0; i < raw.n_rows; ++i) {
        util::try_parse_double(values[i], column[i]);
      }
      encoded.push_back(std::move(column));
      result.encoded_columns.push_back(raw.schema[j].name);
    } else {
      std::vector<std::string> train_values;
      train_values.reserve(train_idx.size());
      for (std::size_t i : train_idx) train_values.push_back(values[i]);
      const std::vector<std::string> categories = fit_categories(train_values);
      result.schema[j].categories = categories;
      const Tensor onehot = one_hot_encode(values, categories);
      for (std::size_t m = 0; m < categories.size(); ++m) {
        std::vector<double> column(raw.n_rows);
        for (std::size_t i = 0; i < raw.n_rows; ++i) {
          column[i] = onehot.at(i, m);
        }
        encoded.push_back(std::move(column));
        result.encoded_columns.push_back(raw.schema[j].name + "=" +
                                         categories[m]);
      }
    }
  }

  const std::size_t d = encoded.size();
  Tensor all({raw.n_rows, d});
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < raw.n_rows; ++i) all.at(i, j) = encoded[j][i];
  }

  Tensor train_x({train_idx.size(), d});
  std::vector<int> train_y(train_idx.size());
  for (std::size_t i = 0; i < train_idx.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      train_x.at(i, j) = all.at(train_idx[i], j);
    }
    train_y[i] = labels[train_idx[i]];
  }

  result.scaler = fit_standard_scaler(train_x, result.encoded_columns);
  const Tensor train_scaled = apply_standard_scaler(train_x, result.scaler);
  result.pearson = pearson_r(train_scaled, train_y);
  result.selected = select_features_pearson(
      train_scaled, train_y, options.pearson_threshold, options.pearson_signed);

  const Tensor all_scaled = apply_standard_scaler(all, result.scaler);
  auto project = [&](const std::vector<std::size_t>& rows) {
    Dataset ds;
    ds.codec = codec;
    for (std::size_t j : result.selected) {
      ds.feature_names.push_back(result.encoded_columns[j]);
    }
    ds.X = Tensor({rows.size(), result.selected.size()});
    ds.y.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t jj = 0; jj < result.selected.size(); ++jj) {
        ds.X.at(i, jj) = all_scaled.at(rows[i], result.selected[jj]);
      }
      ds.y[i] = labels[rows[i]];
    }
    return ds;
  };
  result.train = project(train_idx);
  result.val = project(val_idx);
  return result;
}

// ------------------------------------------------------------ persistence

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  CsvTable table;
  table.header = ds.feature_names;
  table.header.push_back("label");
  const bool with_provenance = !ds.provenance.empty();
  if (with_provenance) table.header.push_back("provenance");
  table.rows.reserve(ds.rows());
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    std::vector<std::string> row;
    row.reserve(table.header.size());
    for (std::size_t j = 0; j < ds.cols(); ++j) {
      row.push_back(util::format_double(ds.X.at(i, j)));
    }
    row.push_back(ds.codec.class_names.at(static_cast<std::size_t>(ds.y[i])));
    if (with_provenance) {
      row.push_back(ds.provenance[i] != 0 ? "synthetic" : "real");
    }
    table.rows.push_back(std::move(row));
  }
  write_csv(path, table);
}

Dataset read_dataset_csv(const std::filesystem::path& path,
                         const LabelCodec& codec) {
  const CsvTable table = read_csv(path);
  Dataset ds;
  ds.codec = codec;
  std::size_t label_col = table.header.size();
  std::size_t provenance_col = table.header.size();
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (table.header[j] == "label") label_col = j;
    else if (table.header[j] == "provenance") provenance_col = j;
    else ds.feature_names.push_back(table.header[j]);
  }
  if (label_col == table.header.size()) {
    throw CsvError(path.string() + ": no 'label' column");
  }
  const std::size_t n = table.rows.size();
  const std::size_t d = ds.feature_names.size();
  ds.X = Tensor({n, d});
  ds.y.resize(n);
  const bool with_provenance = provenance_col != table.header.size();
  if (with_provenance) ds.provenance.resize(n);
  std::map<std::string, int> name_to_class;
  for (std::size_t c = 0; c < codec.class_names.size(); ++c) {
    name_to_class[codec.class_names[c]] = static_cast<int>(c);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t jj = 0;
    for (std::size_t j = 0; j < table.header.size(); ++j) {
      const std::string& cell = table.rows[i][j];
      if (j == label_col) {
        auto it = name_to_class.find(util::trim(cell));
        if (it == name_to_class.end()) {
          throw LabelError(path.string() + ": row " + std::to_string(i + 1) +
                           " has unknown class name '" + cell + "'");
        }
        ds.y[i] = it->second;
      } else if (j == provenance_col) {
        ds.provenance[i] = util::trim(cell) == "synthetic" ? 1 : 0;
      } else {
        double v;
        if (!util::try_parse_double(cell, v)) {
          throw CsvError(path.string() + ": row " + std::to_string(i + 1) +
                         ", column '" + table.header[j] +
                         "' is not numeric: '" + cell + "'");
        }
        ds.X.at(i, jj++) = v;
      }
    }
  }
  return ds;
}

namespace {

json scaler_to_json(const ScalerParams& scaler) {
  return json{{"columns", scaler.columns},
              {"mean", scaler.mean},
              {"stddev", scaler.stddev}};
}

ScalerParams scaler_from_json(const json& j) {
  ScalerParams scaler;
  scaler.columns = j.at("columns").get<std::vector<std::string>>();
  scaler.mean = j.at("mean").get<std::vector<double>>();
  scaler.stddev = j.at("stddev").get<std::vector<double>>();
  return scaler;
}

json codec_to_json(const LabelCodec& codec) {
  return json{{"mode", to_string(codec.mode)},
              {"class_names", codec.class_names},
              {"raw_to_class", codec.raw_to_class}};
}

LabelCodec codec_from_json(const json& j) {
  LabelCodec codec;
  codec.mode = task_mode_from_string(j.at("mode").get<std::string>());
  codec.class_names = j.at("class_names").get<std::vector<std::string>>();
  codec.raw_to_class = j.at("raw_to_class").get<std::map<std::string, int>>();
  return codec;
}

}  // namespace

std::string sidecar_to_json(const PreprocessResult& result,
                            const PreprocessOptions& options,
                            const std::string& config_hash) {
  json schema = json::array();
  for (const ColumnSchema& column : result.schema) {
    json entry{{"name", column.name}, {"kind", to_string(column.kind)}};
    if (column.kind == ColumnKind::kCategorical) {
      entry["categories"] = column.categories;
    }
    schema.push_back(entry);
  }
  std::vector<std::string> selected_names;
  for (std::size_t j : result.selected) {
    selected_names.push_back(result.encoded_columns[j]);
  }
  const json doc{
      {"format_version", 1},
      {"task", to_string(options.task)},
      {"config_hash", config_hash},
      {"schema", schema},
      {"codec", codec_to_json(result.train.codec)},
      {"scaler", scaler_to_json(result.scaler)},
      {"encoded_columns", result.encoded_columns},
      {"pearson_r", result.pearson},
      {"selected_indices", result.selected},
      {"selected_features", selected_names},
      {"options",
       {{"pearson_threshold", options.pearson_threshold},
        {"pearson_signed", options.pearson_signed},
        {"val_fraction", options.val_fraction},
        {"seed", options.seed}}},
      {"dropped_rows", result.dropped_rows},
      {"row_counts",
       {{"train", result.train.rows()}, {"val", result.val.rows()}}},
      {"class_counts",
       {{"train", result.train.class_counts()},
        {"val", result.val.class_counts()}}},
      {"warnings", result.warnings}};
  return doc.dump(2) + "\n";
}

SidecarInfo read_sidecar_json(const std::filesystem::path& path) {
  const json doc = json::parse(util::read_text_file(path));
  SidecarInfo info;
  info.task = task_mode_from_string(doc.at("task").get<std::string>());
  info.codec = codec_from_json(doc.at("codec"));
  info.selected_features =
      doc.at("selected_features").get<std::vector<std::string>>();
  info.scaler = scaler_from_json(doc.at("scaler"));
  return info;
}

}  // namespace flowids::data
