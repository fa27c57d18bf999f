#pragma once

// Cross-validation and ablation sweeps over the distillation trainer.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "pagkd/backbone.hpp"
#include "pagkd/config.hpp"
#include "pagkd/dataset.hpp"
#include "pagkd/dense.hpp"
#include "pagkd/metrics.hpp"

namespace pagkd::experiment {

// Frozen teachers keyed by (seed, fold, teacher recipe): pretrained once and
// shared by every variant that needs them.
class TeacherCache {
 public:
  const backbone::FrozenClassifier& get(const Dataset& dataset, const TrainConfig& config);
  std::size_t size() const { return teachers_.size(); }

 private:
  std::map<std::string, backbone::FrozenClassifier> teachers_;
};

struct FoldResult {
  int fold = 0;
  metrics::MetricsReport metrics;
  std::size_t steps = 0;
  double final_loss = 0.0;
  den::AttentionAudit audit;
  std::uint64_t teacher_hash_before = 0;
  std::uint64_t teacher_hash_after = 0;
  std::size_t test_images_touched_in_training = 0;
  std::size_t extra_params = 0;
};

struct CvReport {
  std::vector<FoldResult> folds;
  metrics::AggregateReport aggregate;
  nlohmann::json to_json() const;
};

struct CvOptions {
  std::vector<int> folds{0, 1, 2, 3, 4};
  std::ostream* log = nullptr;  // JSON-lines step log
};

// Per fold: trains on paired rows of the other folds plus every unpaired row
// and scores the student on the WLI side of the held-out fold. Throws
// ManifestError if the manifest has no fold column. An access log proves no
// held-out image is read while training (ProtocolError otherwise).
CvReport run_cv(const Dataset& dataset, const TrainConfig& config, TeacherCache& teachers,
                const CvOptions& options = {});
CvReport run_cv(const Dataset& dataset, const TrainConfig& config, const CvOptions& options = {});

struct Variant {
  std::string name;
  TrainConfig config;
  std::vector<std::string> changed;  // flags differing from the matrix baseline
};

// Variants of one ablation study. Each differs from `base` only in the
// flags listed in `changed`.
std::vector<Variant> component_variants(const TrainConfig& base);    // full / pro-only / den-only / baseline
std::vector<Variant> granularity_variants(const TrainConfig& base);  // group-level vs image-level joint
std::vector<Variant> subcomponent_variants(const TrainConfig& base); // w/o qformer, srca, bidirectional
std::vector<Variant> threshold_variants(const TrainConfig& base);    // tau1 and tau2 sweeps
std::vector<Variant> query_variants(const TrainConfig& base);        // N_q sweep
std::vector<Variant> budget_variants(const TrainConfig& base);       // batch budget sweep

struct MatrixRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<std::string> changed;
  nlohmann::json flags;
  std::optional<CvReport> report;
  std::string error;  // non-empty when the variant failed
};

struct MatrixReport {
  std::vector<MatrixRow> rows;
  std::vector<std::string> variant_order;

  // Mean macro-AUC per variant over its successful rows.
  std::map<std::string, double> mean_auc() const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
  // Variants ordered by mean AUC, with deltas to the first variant.
  nlohmann::json trend_summary() const;
};

struct MatrixOptions {
  std::vector<std::uint64_t> seeds{0};
  CvOptions cv;
  std::ostream* progress = nullptr;
};

// One row per (variant, seed). A failing variant is recorded and the sweep
// continues.
MatrixReport run_matrix(const Dataset& dataset, const std::vector<Variant>& variants, TeacherCache& teachers,
                        const MatrixOptions& options = {});

}  // namespace pagkd::experiment
