#include "mtcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mtcl/errors.hpp"

namespace mtcl {

namespace {

MetricValue defined_value(double v) { return {v, true}; }

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw DataError("metrics: empty score list");
  if (scores.size() != labels.size())
    throw DataError("metrics: scores/labels length mismatch (" + std::to_string(scores.size()) +
                    " vs " + std::to_string(labels.size()) + ")");
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw DataError("metrics: label must be 0 or 1 at index " + std::to_string(i));
    if (!std::isfinite(scores[i]))
      throw DataError("metrics: non-finite score at index " + std::to_string(i));
  }
}

std::string format_value(const MetricValue& m) {
  if (std::isnan(m.value)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", m.value);
  return buf;
}

}  // namespace

const std::vector<std::string>& MetricReport::metric_names() {
  static const std::vector<std::string> names = {
      "Sensitivity", "Specificity", "Accuracy", "G-Means",
      "Balanced Accuracy", "MCC", "AUPRC", "AUC"};
  return names;
}

std::vector<MetricValue> MetricReport::values_in_order() const {
  return {sensitivity, specificity, accuracy, g_means, balanced_accuracy, mcc, auprc, auc};
}

std::string MetricReport::csv_header() {
  std::string out;
  for (const auto& name : metric_names()) {
    if (!out.empty()) out += ',';
    out += name;
  }
  return out;
}

std::string MetricReport::csv_row() const {
  std::string out;
  for (const auto& v : values_in_order()) {
    if (!out.empty()) out += ',';
    out += format_value(v);
  }
  return out;
}

namespace {
const std::vector<std::string>& metric_keys() {
  static const std::vector<std::string> keys = {"sensitivity", "specificity",       "accuracy",
                                                "g_means",     "balanced_accuracy", "mcc",
                                                "auprc",       "auc"};
  return keys;
}
}  // namespace

// Flat object: one key per metric (null when undefined), *_defined flags,
// confusion counts and the threshold.
nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  const auto vals = values_in_order();
  const auto& keys = metric_keys();
  for (size_t i = 0; i < keys.size(); ++i) {
    if (std::isnan(vals[i].value))
      j[keys[i]] = nullptr;
    else
      j[keys[i]] = vals[i].value;
    j[keys[i] + "_defined"] = vals[i].defined;
  }
  j["tp"] = counts.tp;
  j["fp"] = counts.fp;
  j["tn"] = counts.tn;
  j["fn"] = counts.fn;
  j["threshold"] = threshold;
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  const auto& keys = metric_keys();
  std::vector<MetricValue*> slots = {&r.sensitivity, &r.specificity, &r.accuracy,
                                     &r.g_means,     &r.balanced_accuracy, &r.mcc,
                                     &r.auprc,       &r.auc};
  for (size_t i = 0; i < keys.size(); ++i) {
    slots[i]->defined = j.at(keys[i] + "_defined").get<bool>();
    if (!j.at(keys[i]).is_null()) slots[i]->value = j.at(keys[i]).get<double>();
  }
  r.counts.tp = j.at("tp").get<long>();
  r.counts.fp = j.at("fp").get<long>();
  r.counts.tn = j.at("tn").get<long>();
  r.counts.fn = j.at("fn").get<long>();
  r.threshold = j.at("threshold").get<double>();
  return r;
}

ConfusionCounts confusion_counts(std::span<const double> scores, std::span<const int> labels,
                                 double threshold) {
  check_inputs(scores, labels);
  ConfusionCounts c;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1)
      predicted ? ++c.tp : ++c.fn;
    else
      predicted ? ++c.fp : ++c.tn;
  }
  return c;
}

MetricReport threshold_metrics(const ConfusionCounts& c) {
  MetricReport r;
  r.counts = c;
  const long pos = c.positives(), neg = c.negatives(), n = c.total();
  if (pos > 0) r.sensitivity = defined_value(static_cast<double>(c.tp) / static_cast<double>(pos));
  if (neg > 0) r.specificity = defined_value(static_cast<double>(c.tn) / static_cast<double>(neg));
  if (n > 0)
    r.accuracy = defined_value(static_cast<double>(c.tp + c.tn) / static_cast<double>(n));
  if (r.sensitivity.defined && r.specificity.defined) {
    r.g_means = defined_value(std::sqrt(r.sensitivity.value * r.specificity.value));
    r.balanced_accuracy = defined_value((r.sensitivity.value + r.specificity.value) / 2.0);
  }
  const double f1 = static_cast<double>(c.tp + c.fp);
  const double f2 = static_cast<double>(c.tp + c.fn);
  const double f3 = static_cast<double>(c.tn + c.fp);
  const double f4 = static_cast<double>(c.tn + c.fn);
  if (f1 > 0 && f2 > 0 && f3 > 0 && f4 > 0) {
    const double num = static_cast<double>(c.tp) * static_cast<double>(c.tn) -
                       static_cast<double>(c.fp) * static_cast<double>(c.fn);
    r.mcc = defined_value(num / std::sqrt(f1 * f2 * f3 * f4));
  } else {
    // Zero-denominator convention: report 0 but flag it.
    r.mcc = {0.0, false};
  }
  return r;
}

MetricValue auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const long n = static_cast<long>(scores.size());
  long n_pos = 0;
  for (int y : labels) n_pos += y;
  const long n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return {};

  std::vector<long> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  std::sort(order.begin(), order.end(),
            [&scores](long a, long b) { return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)]; });

  // Ascending sweep over tie groups: every positive beats all negatives with
  // strictly smaller scores and half-ties with negatives in its own group.
  double wins = 0.0, ties = 0.0;
  long neg_below = 0;
  long i = 0;
  while (i < n) {
    long j = i;
    long group_pos = 0, group_neg = 0;
    const double s = scores[static_cast<size_t>(order[static_cast<size_t>(i)])];
    while (j < n && scores[static_cast<size_t>(order[static_cast<size_t>(j)])] == s) {
      if (labels[static_cast<size_t>(order[static_cast<size_t>(j)])] == 1)
        ++group_pos;
      else
        ++group_neg;
      ++j;
    }
    wins += static_cast<double>(group_pos) * static_cast<double>(neg_below);
    ties += static_cast<double>(group_pos) * static_cast<double>(group_neg);
    neg_below += group_neg;
    i = j;
  }
  return defined_value((wins + 0.5 * ties) /
                       (static_cast<double>(n_pos) * static_cast<double>(n_neg)));
}

MetricValue auprc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const long n = static_cast<long>(scores.size());
  long n_pos = 0;
  for (int y : labels) n_pos += y;
  if (n_pos == 0) return {};

  std::vector<long> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  std::sort(order.begin(), order.end(),
            [&scores](long a, long b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]; });

  double area = 0.0;
  double prev_recall = 0.0;
  long tp = 0, fp = 0;
  long i = 0;
  while (i < n) {
    long j = i;
    const double s = scores[static_cast<size_t>(order[static_cast<size_t>(i)])];
    while (j < n && scores[static_cast<size_t>(order[static_cast<size_t>(j)])] == s) {
      if (labels[static_cast<size_t>(order[static_cast<size_t>(j)])] == 1)
        ++tp;
      else
        ++fp;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return defined_value(area);
}

MetricReport evaluate_task(std::span<const double> scores, std::span<const int> labels,
                           double threshold) {
  MetricReport r = threshold_metrics(confusion_counts(scores, labels, threshold));
  r.threshold = threshold;
  r.auc = auc(scores, labels);
  r.auprc = auprc(scores, labels);
  return r;
}

uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("hash_file: cannot open " + path);
  uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!in) break;
  }
  return h;
}

}  // namespace mtcl
