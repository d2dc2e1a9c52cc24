#include "flowids/eval/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "flowids/data/csv.hpp"
#include "flowids/errors.hpp"
#include "flowids/util.hpp"

namespace flowids::eval {

using nlohmann::json;

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (std::size_t i = 0; i < k; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& y_true,
                                 const std::vector<int>& y_pred, std::size_t k,
                                 std::vector<std::string> class_names) {
  if (y_true.size() != y_pred.size()) {
    throw EvalError("confusion matrix: " + std::to_string(y_true.size()) +
                    " true labels vs " + std::to_string(y_pred.size()) +
                    " predictions");
  }
  ConfusionMatrix cm;
  cm.k = k;
  cm.counts.assign(k * k, 0);
  if (class_names.empty()) {
    for (std::size_t c = 0; c < k; ++c) {
      class_names.push_back("class_" + std::to_string(c));
    }
  }
  cm.class_names = std::move(class_names);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || static_cast<std::size_t>(t) >= k || p < 0 ||
        static_cast<std::size_t>(p) >= k) {
      throw EvalError("label out of range at index " + std::to_string(i) +
                      ": true " + std::to_string(t) + ", predicted " +
                      std::to_string(p) + ", K=" + std::to_string(k));
    }
    ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

MetricTable precision_recall_f1(const ConfusionMatrix& cm) {
  MetricTable table;
  table.total = cm.total();
  table.accuracy =
      table.total == 0 ? 0.0
                       : static_cast<double>(cm.trace()) /
                             static_cast<double>(table.total);
  double weighted_support = 0.0;
  for (std::size_t c = 0; c < cm.k; ++c) {
    std::int64_t col = 0, row = 0;
    for (std::size_t j = 0; j < cm.k; ++j) {
      col += cm.at(j, c);
      row += cm.at(c, j);
    }
    const std::int64_t tp = cm.at(c, c);
    ClassMetrics m;
    m.support = row;
    bool zero_denom = false;
    if (col == 0) {
      zero_denom = true;
    } else {
      m.precision = static_cast<double>(tp) / static_cast<double>(col);
    }
    if (row == 0) {
      zero_denom = true;
    } else {
      m.recall = static_cast<double>(tp) / static_cast<double>(row);
    }
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      zero_denom = true;
    }
    if (zero_denom) table.zero_denominator_classes.push_back(c);
    table.per_class.push_back(m);
    weighted_support += static_cast<double>(row);
  }
  const double inv_k = cm.k == 0 ? 0.0 : 1.0 / static_cast<double>(cm.k);
  for (std::size_t c = 0; c < cm.k; ++c) {
    const ClassMetrics& m = table.per_class[c];
    table.macro_precision += m.precision * inv_k;
    table.macro_recall += m.recall * inv_k;
    table.macro_f1 += m.f1 * inv_k;
    const double w = weighted_support == 0.0
                         ? 0.0
                         : static_cast<double>(m.support) / weighted_support;
    table.weighted_precision += m.precision * w;
    table.weighted_recall += m.recall * w;
    table.weighted_f1 += m.f1 * w;
  }
  return table;
}

namespace {

struct ThresholdSweep {
  // Cumulative true/false positive counts after each unique-score group,
  // threshold = that group's score (predict positive when score >= t).
  std::vector<double> thresholds;
  std::vector<std::int64_t> tp, fp;
  std::int64_t positives = 0, negatives = 0;
};

ThresholdSweep sweep_thresholds(const std::vector<int>& y,
                                const std::vector<double>& scores) {
  if (y.size() != scores.size()) {
    throw EvalError("curve: " + std::to_string(y.size()) + " labels vs " +
                    std::to_string(scores.size()) + " scores");
  }
  ThresholdSweep sweep;
  for (int v : y) {
    if (v == 1) ++sweep.positives;
    else if (v == 0) ++sweep.negatives;
    else throw EvalError("binary label must be 0 or 1, got " + std::to_string(v));
  }
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (y[order[i]] == 1) ++tp;
      else ++fp;
      ++i;
    }
    sweep.thresholds.push_back(s);
    sweep.tp.push_back(tp);
    sweep.fp.push_back(fp);
  }
  return sweep;
}

}  // namespace

RocResult roc_curve_auc(const std::vector<int>& y_true_binary,
                        const std::vector<double>& scores) {
  const ThresholdSweep sweep = sweep_thresholds(y_true_binary, scores);
  if (sweep.positives == 0 || sweep.negatives == 0) {
    throw EvalError("AUC undefined: evaluation labels contain a single class");
  }
  RocResult result;
  result.points.push_back(
      {std::numeric_limits<double>::infinity(), 0.0, 0.0});
  const double p = static_cast<double>(sweep.positives);
  const double n = static_cast<double>(sweep.negatives);
  for (std::size_t i = 0; i < sweep.thresholds.size(); ++i) {
    result.points.push_back({sweep.thresholds[i],
                             static_cast<double>(sweep.fp[i]) / n,
                             static_cast<double>(sweep.tp[i]) / p});
  }
  for (std::size_t i = 1; i < result.points.size(); ++i) {
    const RocPoint& a = result.points[i - 1];
    const RocPoint& b = result.points[i];
    result.auc += (b.fpr - a.fpr) * (b.tpr + a.tpr) * 0.5;
  }
  return result;
}

std::vector<PrPoint> pr_curve(const std::vector<int>& y_true_binary,
                              const std::vector<double>& scores) {
  const ThresholdSweep sweep = sweep_thresholds(y_true_binary, scores);
  if (sweep.positives == 0) {
    throw EvalError("precision-recall curve needs at least one positive");
  }
  std::vector<PrPoint> points;
  const double p = static_cast<double>(sweep.positives);
  for (std::size_t i = 0; i < sweep.thresholds.size(); ++i) {
    const double predicted =
        static_cast<double>(sweep.tp[i] + sweep.fp[i]);
    PrPoint point{sweep.thresholds[i],
                  static_cast<double>(sweep.tp[i]) / p,
                  predicted == 0.0
                      ? 0.0
                      : static_cast<double>(sweep.tp[i]) / predicted};
    points.push_back(point);
    if (point.recall >= 1.0) break;  // further thresholds only dilute
  }
  return points;
}

std::vector<ClassCurves> one_vs_rest_curves(
    const std::vector<int>& y_true, const Tensor& proba,
    const std::vector<std::string>& class_names) {
  const std::size_t k = proba.dim(1);
  std::vector<ClassCurves> out;
  for (std::size_t c = 0; c < k; ++c) {
    ClassCurves curves;
    curves.class_name =
        c < class_names.size() ? class_names[c] : "class_" + std::to_string(c);
    std::vector<int> y_bin(y_true.size());
    std::vector<double> scores(y_true.size());
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      y_bin[i] = y_true[i] == static_cast<int>(c) ? 1 : 0;
      scores[i] = proba.at(i, c);
    }
    try {
      curves.roc = roc_curve_auc(y_bin, scores);
      curves.pr = pr_curve(y_bin, scores);
    } catch (const EvalError& e) {
      curves.note = e.what();
    }
    out.push_back(std::move(curves));
  }
  return out;
}

std::string sanitize_filename(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      out.push_back('_');
    }
  }
  return out.empty() ? "unnamed" : out;
}

void write_run_meta(const std::filesystem::path& path, const RunMeta& meta) {
  const json doc{{"stage", meta.stage},
                 {"config_hash", meta.config_hash},
                 {"seed", meta.seed},
                 {"inputs", meta.inputs},
                 {"timings_sec", meta.timings_sec},
                 {"config", meta.config_echo}};
  util::write_text_file(path, doc.dump(2) + "\n");
}

void emit_report(const MetricTable& table, const ConfusionMatrix& cm,
                 const std::vector<ClassCurves>& curves,
                 const std::vector<EpochRow>& history, const RunMeta& meta,
                 const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  json per_class = json::object();
  for (std::size_t c = 0; c < table.per_class.size(); ++c) {
    const ClassMetrics& m = table.per_class[c];
    per_class[cm.class_names[c]] = {{"precision", m.precision},
                                    {"recall", m.recall},
                                    {"f1", m.f1},
                                    {"support", m.support}};
  }
  json auc = json::object();
  for (const ClassCurves& c : curves) {
    if (c.roc.has_value()) {
      auc[c.class_name] = c.roc->auc;
    } else {
      auc[c.class_name] = nullptr;
    }
  }
  std::vector<std::string> warnings;
  for (std::size_t c : table.zero_denominator_classes) {
    warnings.push_back("class '" + cm.class_names[c] +
                       "' had a zero precision/recall denominator; reported 0");
  }
  for (const ClassCurves& c : curves) {
    if (!c.note.empty()) {
      warnings.push_back("class '" + c.class_name + "': " + c.note);
    }
  }
  const json metrics{
      {"accuracy", table.accuracy},
      {"total", table.total},
      {"per_class", per_class},
      {"macro",
       {{"precision", table.macro_precision},
        {"recall", table.macro_recall},
        {"f1", table.macro_f1}}},
      {"weighted",
       {{"precision", table.weighted_precision},
        {"recall", table.weighted_recall},
        {"f1", table.weighted_f1}}},
      {"auc", auc},
      {"warnings", warnings},
      {"config_hash", meta.config_hash}};
  util::write_text_file(out_dir / "metrics.json", metrics.dump(2) + "\n");

  data::CsvTable confusion;
  confusion.header.push_back("true\\pred");
  for (const std::string& name : cm.class_names) {
    confusion.header.push_back(name);
  }
  for (std::size_t i = 0; i < cm.k; ++i) {
    std::vector<std::string> row{cm.class_names[i]};
    for (std::size_t j = 0; j < cm.k; ++j) {
      row.push_back(std::to_string(cm.at(i, j)));
    }
    confusion.rows.push_back(std::move(row));
  }
  data::write_csv(out_dir / "confusion.csv", confusion);

  for (const ClassCurves& c : curves) {
    const std::string tag = sanitize_filename(c.class_name);
    data::CsvTable roc;
    roc.header = {"threshold", "fpr", "tpr"};
    if (c.roc.has_value()) {
      for (const RocPoint& p : c.roc->points) {
        roc.rows.push_back({util::format_double(p.threshold),
                            util::format_double(p.fpr),
                            util::format_double(p.tpr)});
      }
    }
    data::write_csv(out_dir / ("roc_" + tag + ".csv"), roc);

    data::CsvTable pr;
    pr.header = {"threshold", "recall", "precision"};
    for (const PrPoint& p : c.pr) {
      pr.rows.push_back({util::format_double(p.threshold),
                         util::format_double(p.recall),
                         util::format_double(p.precision)});
    }
    data::write_csv(out_dir / ("pr_" + tag + ".csv"), pr);
  }

  data::CsvTable hist;
  hist.header = {"epoch",        "train_loss",   "train_accuracy",
                 "val_loss",     "val_accuracy", "detection_rate"};
  for (const EpochRow& row : history) {
    hist.rows.push_back({std::to_string(row.epoch),
                         util::format_double(row.train_loss),
                         util::format_double(row.train_accuracy),
                         util::format_double(row.val_loss),
                         util::format_double(row.val_accuracy),
                         util::format_double(row.detection_rate)});
  }
  data::write_csv(out_dir / "history.csv", hist);

  write_run_meta(out_dir / "run_meta.json", meta);
}

}  // namespace flowids::eval
