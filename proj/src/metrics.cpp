#include "pagkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "pagkd/error.hpp"

namespace pagkd::metrics {

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw DimensionError("roc_curve: scores and labels differ in length");
  const auto pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw DataError("ROC needs at least one positive and one negative sample");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> roc{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      if (positive[order[i]]) ++tp; else ++fp;
    }
    roc.push_back({threshold, static_cast<double>(fp) / static_cast<double>(neg),
                   static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return roc;
}

double trapezoid_auc(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) * 0.5;
  }
  return area;
}

double binary_auc(std::span<const double> scores, std::span<const bool> positive) {
  return trapezoid_auc(roc_curve(scores, positive));
}

MetricsReport compute_metrics(const Tensor& probabilities, std::span<const std::size_t> labels) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != labels.size()) {
    throw DimensionError("compute_metrics: probabilities " + shape_str(probabilities.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size(), c = probabilities.dim(1);
  const auto p = probabilities.data();
  MetricsReport report;
  report.samples = n;

  std::vector<std::size_t> pred(n);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw IndexError("label " + std::to_string(labels[i]) + " outside [0," + std::to_string(c) + ")");
    auto row = p.subspan(i * c, c);
    pred[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += pred[i] == labels[i] ? 1 : 0;
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  std::size_t present = 0, ranked = 0;
  for (std::size_t k = 0; k < c; ++k) {
    ClassMetrics cm;
    cm.label = k;
    std::size_t tp = 0, fp = 0, fn = 0;
    std::vector<double> scores(n);
    // std::vector<bool> is not contiguous, so positives go in a plain array.
    auto is_pos = std::make_unique<bool[]>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool actual = labels[i] == k, predicted = pred[i] == k;
      tp += actual && predicted;
      fp += !actual && predicted;
      fn += actual && !predicted;
      scores[i] = p[i * c + k];
      is_pos[i] = actual;
    }
    if (tp + fn == 0) {
      cm.present = false;
      report.warnings.push_back("class " + std::to_string(k) + " has no samples; excluded from macro averages");
      report.classes.push_back(std::move(cm));
      continue;
    }
    cm.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    cm.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    cm.f1 = cm.precision + cm.recall == 0.0 ? 0.0 : 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall);
    if (tp + fn < n) {
      cm.roc = roc_curve(scores, std::span<const bool>(is_pos.get(), n));
      cm.auc = trapezoid_auc(cm.roc);
      report.auc += cm.auc;
      ++ranked;
    } else {
      report.warnings.push_back("class " + std::to_string(k) + " has no negatives; excluded from macro AUC");
    }
    report.precision += cm.precision;
    report.recall += cm.recall;
    report.f1 += cm.f1;
    ++present;
    report.classes.push_back(std::move(cm));
  }
  if (present > 0) {
    const double inv = 1.0 / static_cast<double>(present);
    report.precision *= inv;
    report.recall *= inv;
    report.f1 *= inv;
  }
  if (ranked > 0) report.auc /= static_cast<double>(ranked);
  return report;
}

nlohmann::json MetricsReport::to_json(bool with_roc) const {
  nlohmann::json classes_json = nlohmann::json::array();
  for (const auto& cm : classes) {
    nlohmann::json j{{"class", cm.label}, {"present", cm.present}, {"precision", cm.precision},
                     {"recall", cm.recall}, {"f1", cm.f1}, {"auc", cm.auc}};
    if (with_roc) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& pt : cm.roc) pts.push_back({pt.fpr, pt.tpr});
      j["roc"] = pts;
    }
    classes_json.push_back(std::move(j));
  }
  return {{"samples", samples}, {"accuracy", accuracy}, {"precision", precision}, {"recall", recall},
          {"f1", f1}, {"auc", auc}, {"auc_scheme", "macro one-vs-rest"}, {"classes", classes_json},
          {"warnings", warnings}};
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  for (double v : values) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(values.size()));
  return s;
}

AggregateReport aggregate(std::span<const MetricsReport> folds) {
  AggregateReport a;
  a.folds = folds.size();
  auto pick = [&](auto member) {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.*member);
    return summarize(v);
  };
  a.accuracy = pick(&MetricsReport::accuracy);
  a.precision = pick(&MetricsReport::precision);
  a.recall = pick(&MetricsReport::recall);
  a.f1 = pick(&MetricsReport::f1);
  a.auc = pick(&MetricsReport::auc);
  return a;
}

nlohmann::json AggregateReport::to_json() const {
  auto s = [](const MetricSummary& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  return {{"folds", folds}, {"accuracy", s(accuracy)}, {"precision", s(precision)}, {"recall", s(recall)},
          {"f1", s(f1)}, {"auc", s(auc)}};
}

}  // namespace pagkd::metrics
