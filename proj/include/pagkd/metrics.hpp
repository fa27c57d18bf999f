#pragma once

// Classification metrics: accuracy, macro precision / recall / F1, and macro
// one-vs-rest ROC AUC by the trapezoidal rule over every distinct threshold.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pagkd/tensor.hpp"

namespace pagkd::metrics {

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct ClassMetrics {
  std::size_t label = 0;
  bool present = true;  // false: no sample of this class, excluded from macro averages
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::vector<RocPoint> roc;
};

struct MetricsReport {
  std::size_t samples = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::vector<ClassMetrics> classes;
  std::vector<std::string> warnings;

  nlohmann::json to_json(bool with_roc = false) const;
};

// ROC curve of `scores` for the positive set; points run from (0,0) to (1,1),
// one per distinct threshold, tied scores moving together.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const bool> positive);
// Trapezoidal area under a ROC curve.
double trapezoid_auc(std::span<const RocPoint> roc);
// Binary AUC; needs at least one positive and one negative.
double binary_auc(std::span<const double> scores, std::span<const bool> positive);

// `probabilities` [N, C], rows summing to 1; labels in [0, C).
MetricsReport compute_metrics(const Tensor& probabilities, std::span<const std::size_t> labels);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct AggregateReport {
  MetricSummary accuracy, precision, recall, f1, auc;
  std::size_t folds = 0;
  nlohmann::json to_json() const;
};

AggregateReport aggregate(std::span<const MetricsReport> folds);
MetricSummary summarize(std::span<const double> values);

}  // namespace pagkd::metrics
