#pragma once

// Classification metrics: Cohen's kappa, weighted F1, balanced accuracy and,
// for binary tasks, AUROC (trapezoidal ROC) and AUC-PR (step integration).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace codebrain::probe {

enum class Task { binary, multiclass };

inline const char* task_name(Task t) { return t == Task::binary ? "binary" : "multiclass"; }

struct MetricsReport {
  Task task = Task::multiclass;
  std::size_t classes = 0;
  double kappa = 0.0;
  double weighted_f1 = 0.0;
  double balanced_acc = 0.0;
  std::optional<double> auroc, auc_pr;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::size_t> support;

  nlohmann::json to_json() const {
    nlohmann::json j{{"task", task_name(task)},       {"classes", classes},
                     {"kappa", kappa},                {"weighted_f1", weighted_f1},
                     {"balanced_acc", balanced_acc},  {"confusion", confusion},
                     {"support", support}};
    if (auroc) j["auroc"] = *auroc;
    if (auc_pr) j["auc_pr"] = *auc_pr;
    return j;
  }

  void write_csv(std::ostream& out) const {
    out << "metric,value\n";
    out << "kappa," << kappa << "\nweighted_f1," << weighted_f1 << "\nbalanced_acc," << balanced_acc << "\n";
    if (auroc) out << "auroc," << *auroc << "\n";
    if (auc_pr) out << "auc_pr," << *auc_pr << "\n";
  }

  void write_confusion_csv(std::ostream& out) const {
    out << "true\\pred";
    for (std::size_t j = 0; j < classes; ++j) out << "," << j;
    out << "\n";
    for (std::size_t i = 0; i < classes; ++i) {
      out << i;
      for (std::size_t j = 0; j < classes; ++j) out << "," << confusion[i][j];
      out << "\n";
    }
  }
};

// kappa = (p_o - p_e) / (1 - p_e) from a [true][pred] confusion matrix.
inline double cohen_kappa(const std::vector<std::vector<std::size_t>>& cm) {
  const std::size_t k = cm.size();
  double n = 0.0, agree = 0.0;
  std::vector<double> rows(k, 0.0), cols(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    if (cm[i].size() != k) throw std::invalid_argument("confusion matrix must be square");
    for (std::size_t j = 0; j < k; ++j) {
      const double c = static_cast<double>(cm[i][j]);
      n += c;
      rows[i] += c;
      cols[j] += c;
      if (i == j) agree += c;
    }
  }
  if (n == 0.0) throw std::invalid_argument("cohen_kappa: empty confusion matrix");
  // Scaled by n^2 so integer counts stay exact until the final division.
  double chance = 0.0;
  for (std::size_t i = 0; i < k; ++i) chance += rows[i] * cols[i];
  if (chance >= n * n) throw std::domain_error("cohen_kappa: undefined when chance agreement is 1");
  return (n * agree - chance) / (n * n - chance);
}

// Area under the ROC curve by trapezoids over distinct score thresholds.
// Tied scores form one ROC segment, which counts each tied
// positive/negative pair as one half.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size() || scores.empty()) throw std::invalid_argument("auroc: bad input sizes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double P = 0, N = 0;
  for (int p : positive) (p ? P : N) += 1;
  if (P == 0 || N == 0) throw std::domain_error("auroc: needs both classes");
  double tp = 0, fp = 0, prev_tp = 0, prev_fp = 0, area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (positive[order[i]] ? tp : fp) += 1;
    area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
    prev_tp = tp;
    prev_fp = fp;
  }
  return area / (P * N);
}

// Average precision: sum over thresholds of (R_i - R_{i-1}) * P_i.
inline double auc_pr(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size() || scores.empty()) throw std::invalid_argument("auc_pr: bad input sizes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double P = 0;
  for (int p : positive) P += p ? 1 : 0;
  if (P == 0) throw std::domain_error("auc_pr: no positive labels");
  double tp = 0, seen = 0, prev_recall = 0, area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      tp += positive[order[i]] ? 1 : 0;
      seen += 1;
    }
    const double recall = tp / P;
    area += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
  }
  return area;
}

// `scores` holds the positive-class score per sample and is required for
// binary tasks (classes == 2); it is ignored otherwise.
inline MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<double>& scores,
                                     const std::vector<int>& labels, std::size_t classes) {
  if (labels.empty()) throw std::invalid_argument("compute_metrics: empty input");
  if (predictions.size() != labels.size()) throw std::invalid_argument("compute_metrics: prediction count mismatch");
  if (classes < 2) throw std::invalid_argument("compute_metrics: at least two classes required");
  MetricsReport r;
  r.classes = classes;
  r.task = classes == 2 ? Task::binary : Task::multiclass;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  r.support.assign(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes || p < 0 || static_cast<std::size_t>(p) >= classes)
      throw std::invalid_argument("compute_metrics: class id out of range");
    ++r.confusion[y][p];
    ++r.support[y];
  }
  const auto present = std::count_if(r.support.begin(), r.support.end(), [](auto s) { return s > 0; });
  if (present < 2) throw std::domain_error("compute_metrics: kappa is undefined for single-class labels");
  r.kappa = cohen_kappa(r.confusion);

  const double n = static_cast<double>(labels.size());
  double recall_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t predicted = 0;
    for (std::size_t i = 0; i < classes; ++i) predicted += r.confusion[i][c];
    const double tp = static_cast<double>(r.confusion[c][c]);
    const double prec = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double rec = r.support[c] ? tp / static_cast<double>(r.support[c]) : 0.0;
    const double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    r.weighted_f1 += f1 * static_cast<double>(r.support[c]) / n;
    if (r.support[c]) recall_sum += rec;
  }
  r.balanced_acc = recall_sum / static_cast<double>(present);

  if (r.task == Task::binary) {
    if (scores.size() != labels.size()) throw std::invalid_argument("compute_metrics: binary task needs one score per sample");
    std::vector<int> pos(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) pos[i] = labels[i] == 1;
    r.auroc = auroc(scores, pos);
    r.auc_pr = auc_pr(scores, pos);
  }
  return r;
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

// Sample standard deviation (n - 1); zero for a single value.
inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean_std: no values");
  MeanStd m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(v.size() - 1));
  }
  return m;
}

}  // namespace codebrain::probe
