#pragma once

#include <array>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reviewlens/category.hpp"
#include "reviewlens/error.hpp"

namespace reviewlens::metrics {

struct ConfusionMatrix {
  long long tp = 0, fp = 0, fn = 0, tn = 0;

  long long n() const { return tp + fp + fn + tn; }
  /// Label-0 view: the negative class treated as the positive one.
  ConfusionMatrix complemented() const { return {tn, fn, fp, tp}; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> preds) {
  if (labels.size() != preds.size()) fail(ErrorKind::InvalidArgument, "labels and predictions differ in length");
  if (labels.empty()) fail(ErrorKind::InvalidArgument, "cannot score an empty set");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = preds[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) fail(ErrorKind::InvalidArgument, "labels must be 0 or 1");
    if (y == 1) (p == 1 ? cm.tp : cm.fn) += 1;
    else (p == 1 ? cm.fp : cm.tn) += 1;
  }
  return cm;
}

struct EvalReport {
  double share_label = 0;  // positive share among the evaluated items
  double accuracy = 0, balanced_accuracy = 0;
  double f1_macro = 0, f1_micro = 0, f1_label1 = 0, f1_label0 = 0;
  double precision_macro = 0, precision_micro = 0, precision_label1 = 0, precision_label0 = 0;
  double recall_macro = 0, recall_micro = 0, recall_label1 = 0, recall_label0 = 0;
  long long n = 0;

  bool operator==(const EvalReport&) const = default;
};

/// x / y, or 0 when y is 0.
inline double ratio(double x, double y) { return y == 0 ? 0.0 : x / y; }

/// Harmonic mean; returns the common value exactly when precision == recall.
inline double f1_score(double precision, double recall) {
  if (precision == recall) return precision;
  return ratio(2.0 * precision * recall, precision + recall);
}

/// Precision, recall and F1 are 0 whenever their denominator is 0. Micro averages pool the
/// label-1 and label-0 views, so every item contributes one slot to each and micro = accuracy.
inline EvalReport compute_metrics(const ConfusionMatrix& cm) {
  if (cm.n() <= 0) fail(ErrorKind::InvalidArgument, "confusion matrix is empty");
  const auto d = [](long long v) { return static_cast<double>(v); };
  const double n = d(cm.n());
  EvalReport r;
  r.n = cm.n();
  r.share_label = d(cm.tp + cm.fn) / n;
  r.accuracy = d(cm.tp + cm.tn) / n;

  r.precision_label1 = ratio(d(cm.tp), d(cm.tp + cm.fp));
  r.recall_label1 = ratio(d(cm.tp), d(cm.tp + cm.fn));
  r.f1_label1 = f1_score(r.precision_label1, r.recall_label1);
  r.precision_label0 = ratio(d(cm.tn), d(cm.tn + cm.fn));
  r.recall_label0 = ratio(d(cm.tn), d(cm.tn + cm.fp));
  r.f1_label0 = f1_score(r.precision_label0, r.recall_label0);

  r.precision_macro = (r.precision_label1 + r.precision_label0) / 2.0;
  r.recall_macro = (r.recall_label1 + r.recall_label0) / 2.0;
  r.f1_macro = (r.f1_label1 + r.f1_label0) / 2.0;
  r.balanced_accuracy = r.recall_macro;

  const double pooled_tp = d(cm.tp + cm.tn);
  const double pooled_fp = d(cm.fp + cm.fn);
  const double pooled_fn = d(cm.fn + cm.fp);
  r.precision_micro = ratio(pooled_tp, pooled_tp + pooled_fp);
  r.recall_micro = ratio(pooled_tp, pooled_tp + pooled_fn);
  r.f1_micro = f1_score(r.precision_micro, r.recall_micro);
  return r;
}

inline EvalReport evaluate(std::span<const int> labels, std::span<const int> preds) {
  return compute_metrics(confusion(labels, preds));
}

/// Column headers of the per-category report table, in order.
inline constexpr std::array<std::string_view, 16> kReportColumns{
    "Category",       "Share Label",   "Acc.",           "Bal. Acc.",       "F1 (Macro)",  "F1 (Micro)",
    "F1 Lab=1",       "F1 Lab=0",      "Prec. (Macro)",  "Prec. (Micro)",   "Prec. Lab=1", "Prec. Lab=0",
    "Recall (Macro)", "Recall (Micro)", "Recall Lab=1", "Recall Lab=0"};

inline std::array<double, 15> report_values(const EvalReport& r) {
  return {r.share_label,      r.accuracy,        r.balanced_accuracy, r.f1_macro,         r.f1_micro,
          r.f1_label1,        r.f1_label0,       r.precision_macro,   r.precision_micro,  r.precision_label1,
          r.precision_label0, r.recall_macro,    r.recall_micro,      r.recall_label1,    r.recall_label0};
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct CategoryReport {
  Category category{};
  EvalReport report;
};

inline void write_report_csv(std::ostream& out, const std::vector<CategoryReport>& rows) {
  for (std::size_t i = 0; i < kReportColumns.size(); ++i) out << (i ? "," : "") << kReportColumns[i];
  out << '\n';
  for (const auto& row : rows) {
    out << codebook_name(row.category);
    for (double v : report_values(row.report)) out << ',' << format_number(v);
    out << '\n';
  }
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  const auto values = report_values(r);
  for (std::size_t i = 0; i < values.size(); ++i) j[std::string(kReportColumns[i + 1])] = values[i];
  j["n"] = r.n;
  return j;
}

inline nlohmann::ordered_json to_json(const std::vector<CategoryReport>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json j{{"Category", std::string(codebook_name(row.category))}};
    j.update(to_json(row.report));
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace reviewlens::metrics
