#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace mtcl {

struct ConfusionCounts {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long total() const { return tp + fp + tn + fn; }
  long positives() const { return tp + fn; }
  long negatives() const { return tn + fp; }
};

// A metric that may be undefined for degenerate inputs. An undefined metric
// carries NaN, except MCC which keeps the conventional 0 and is merely
// flagged.
struct MetricValue {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
};

struct MetricReport {
  MetricValue sensitivity, specificity, accuracy, g_means, balanced_accuracy, mcc, auprc, auc;
  ConfusionCounts counts;
  double threshold = 0.5;

  // Column order follows the evaluation tables: Sensitivity, Specificity,
  // Accuracy, G-Means, Balanced Accuracy, MCC, AUPRC, AUC.
  static const std::vector<std::string>& metric_names();
  std::vector<MetricValue> values_in_order() const;

  static std::string csv_header();
  std::string csv_row() const;
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

// Positive prediction iff score >= threshold. Inputs must be non-empty and of
// equal length, labels in {0, 1}.
ConfusionCounts confusion_counts(std::span<const double> scores, std::span<const int> labels,
                                 double threshold);

// The six threshold metrics. Metrics whose denominator is empty are flagged
// undefined rather than silently zeroed; MCC with a zero denominator factor
// reports 0 with the undefined flag set.
MetricReport threshold_metrics(const ConfusionCounts& counts);

// Mann-Whitney statistic with half credit for ties, computed by a sorted
// tie-group sweep. Undefined unless both classes are present.
MetricValue auc(std::span<const double> scores, std::span<const int> labels);

// Step-wise area under precision-recall over descending unique thresholds
// (no interpolation). Undefined without positives.
MetricValue auprc(std::span<const double> scores, std::span<const int> labels);

MetricReport evaluate_task(std::span<const double> scores, std::span<const int> labels,
                           double threshold);

// FNV-1a over a file's bytes; used for artifact identity checks.
uint64_t hash_file(const std::string& path);

}  // namespace mtcl
