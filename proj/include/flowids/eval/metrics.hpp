#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowids/tensor.hpp"

namespace flowids::eval {

// Rows are true classes, columns are predictions.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::int64_t> counts;
  std::vector<std::string> class_names;

  std::int64_t& at(std::size_t i, std::size_t j) { return counts[i * k + j]; }
  std::int64_t at(std::size_t i, std::size_t j) const {
    return counts[i * k + j];
  }
  std::int64_t total() const;
  std::int64_t trace() const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& y_true,
                                 const std::vector<int>& y_pred, std::size_t k,
                                 std::vector<std::string> class_names = {});

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
};

struct MetricTable {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  double weighted_precision = 0.0, weighted_recall = 0.0, weighted_f1 = 0.0;
  double accuracy = 0.0;
  std::int64_t total = 0;
  // Classes whose precision or recall denominator was zero (reported as 0).
  std::vector<std::size_t> zero_denominator_classes;
};

MetricTable precision_recall_f1(const ConfusionMatrix& cm);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

struct RocResult {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Thresholds sweep the unique scores descending; AUC is the trapezoid over
// (FPR, TPR), which gives ties half credit. Needs both a positive and a
// negative instance.
RocResult roc_curve_auc(const std::vector<int>& y_true_binary,
                        const std::vector<double>& scores);

struct PrPoint {
  double threshold;
  double recall;
  double precision;
};

// Precision/recall at each unique-score threshold, descending, up to and
// including the first point that reaches recall 1.
std::vector<PrPoint> pr_curve(const std::vector<int>& y_true_binary,
                              const std::vector<double>& scores);

// One-vs-rest curves per class from a probability matrix [n, K]. A class
// that is absent (or universal) in y gets no curves and an explanatory note.
struct ClassCurves {
  std::string class_name;
  std::optional<RocResult> roc;
  std::vector<PrPoint> pr;
  std::string note;
};

std::vector<ClassCurves> one_vs_rest_curves(
    const std::vector<int>& y_true, const Tensor& proba,
    const std::vector<std::string>& class_names);

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double detection_rate = 0.0;
};

struct RunMeta {
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // path -> content hash
  std::map<std::string, double> timings_sec;
  std::map<std::string, std::string> config_echo;
};

void write_run_meta(const std::filesystem::path& path, const RunMeta& meta);
void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochRow>& history);

// Writes metrics.json, confusion.csv, roc_<class>.csv, pr_<class>.csv,
// history.csv and run_meta.json into out_dir.
void emit_report(const MetricTable& table, const ConfusionMatrix& cm,
                 const std::vector<ClassCurves>& curves,
                 const std::vector<EpochRow>& history, const RunMeta& meta,
                 const std::filesystem::path& out_dir);

std::string sanitize_filename(const std::string& name);

}  // namespace flowids::eval
