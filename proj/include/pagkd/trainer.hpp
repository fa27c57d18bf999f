#pragma once

// Teacher pretraining, the distillation loop (L_total = L_pro + L_den + L_cls)
// and student-only inference.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pagkd/adam.hpp"
#include "pagkd/backbone.hpp"
#include "pagkd/config.hpp"
#include "pagkd/dataset.hpp"
#include "pagkd/dense.hpp"
#include "pagkd/error.hpp"
#include "pagkd/grouping.hpp"
#include "pagkd/manifest.hpp"
#include "pagkd/prototype.hpp"

namespace pagkd::train {

struct ClassRelation {
  std::size_t label = 0;
  den::RelationStats stats;
};

struct StepReport {
  std::size_t epoch = 0;
  std::size_t step = 0;   // global step index
  std::size_t batch = 0;  // batch index within the epoch
  double l_pro = 0.0;
  double l_den = 0.0;
  double l_cls = 0.0;
  double l_total = 0.0;
  double grad_norm_student = 0.0;
  double grad_norm_qformer = 0.0;
  double grad_norm_srca = 0.0;
  std::vector<ClassRelation> relations;

  nlohmann::json to_json() const;
};

// Raised when a loss turns non-finite; carries the offending step.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, StepReport report)
      : NumericalError(what), report_(std::move(report)) {}
  const StepReport& report() const { return report_; }

 private:
  StepReport report_;
};

// (1/C) sum_c (1/N_c) sum_{i in c} CE(logits_i, c) over the classes present
// in `labels`. Throws IndexError for a label outside [0, C).
Tensor classification_loss(const Tensor& logits, std::span<const std::size_t> labels);

struct ClassifierTrainResult {
  backbone::Classifier model;
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

// Mini-batch cross-entropy training of a fresh classifier on `rows`.
ClassifierTrainResult train_classifier(std::span<const ManifestRow> rows, const ImageStore& images,
                                       const backbone::BackboneConfig& config, const TeacherRecipe& recipe,
                                       std::uint64_t seed, const std::string& prefix);

// Trains the teacher on the NBI rows of `train_rows` with the config's
// teacher recipe. Throws DataError when there are none.
ClassifierTrainResult pretrain_teacher(std::span<const ManifestRow> train_rows, const ImageStore& images,
                                       const TrainConfig& config);

struct DistillOptions {
  std::ostream* log = nullptr;             // JSON-lines step log
  std::filesystem::path checkpoint_dir;    // empty: no periodic checkpoints
};

// Distillation of a WLI student from a frozen NBI teacher. Teacher features
// and CAM labels are computed once up front (the teacher never changes).
class Distiller {
 public:
  Distiller(TrainConfig config, const backbone::FrozenClassifier& teacher, const ImageStore& images,
            std::vector<ManifestRow> train_rows, DistillOptions options = {});

  StepReport step();
  std::vector<StepReport> run();  // remaining steps of all epochs

  std::size_t steps_per_epoch() const { return plan_.batches_per_epoch; }
  std::size_t total_steps() const { return config_.epochs * steps_per_epoch(); }
  std::size_t steps_done() const { return step_; }

  const TrainConfig& config() const { return config_; }
  const backbone::Classifier& student() const { return student_; }
  const pro::LrQFormer& qformer() const { return qformer_; }
  const den::Srca& srca() const { return srca_; }
  const den::AttentionAudit& audit() const { return audit_; }
  const grouping::GroupPlan& plan() const { return plan_; }

  // Student, query-transformer and cross-attention parameters.
  std::vector<NamedParam> checkpoint() const;
  // Parameters of the distillation heads only (qformer + srca).
  std::size_t extra_param_count() const { return qformer_.param_count() + srca_.param_count(); }

 private:
  // One WLI/NBI feature pair to be distilled: a class group or an image pair.
  struct Unit {
    std::size_t label = 0;
    Tensor wli;  // [L_wli, d], student features
    Tensor nbi;  // [L_nbi, d], teacher features
    std::vector<den::CamLabel> wli_labels;
    std::vector<den::CamLabel> nbi_labels;
  };
  Unit make_unit(std::size_t label, const Tensor& features, std::span<const std::size_t> members,
                 const std::vector<std::vector<den::CamLabel>>& student_cam,
                 std::span<const std::string> nbi_ids) const;
  Tensor prototype(const Tensor& group) const;
  // Units are contrasted and aligned as if each were one class.
  Tensor pro_loss(const std::vector<Unit>& units) const;
  Tensor den_loss(const std::vector<Unit>& units, StepReport& report);

  TrainConfig config_;
  const backbone::FrozenClassifier& teacher_;
  const ImageStore& images_;
  std::vector<ManifestRow> rows_;
  DistillOptions options_;

  backbone::Classifier student_;
  pro::LrQFormer qformer_;
  den::Srca srca_;
  AdamState adam_;
  grouping::GroupPlan plan_;
  grouping::FeatureBank teacher_bank_;
  std::map<std::string, std::vector<den::CamLabel>, std::less<>> teacher_cam_;
  std::map<std::string, std::string, std::less<>> nbi_partner_;  // WLI id -> NBI id for true pairs
  std::map<std::size_t, std::vector<std::string>> nbi_by_class_;
  std::mt19937_64 pair_rng_;
  den::AttentionAudit audit_;
  std::size_t step_ = 0;
};

// Cross-entropy-only training on the same grouped batch schedule as the
// distiller: the reference for the "no distillation" configuration.
class PlainTrainer {
 public:
  PlainTrainer(TrainConfig config, const ImageStore& images, std::vector<ManifestRow> train_rows);

  StepReport step();
  std::vector<StepReport> run();

  std::size_t total_steps() const { return config_.epochs * plan_.batches_per_epoch; }
  const backbone::Classifier& student() const { return student_; }

 private:
  TrainConfig config_;
  const ImageStore& images_;
  std::vector<ManifestRow> rows_;
  backbone::Classifier student_;
  AdamState adam_;
  grouping::GroupPlan plan_;
  std::size_t step_ = 0;
};

// Class probabilities [N, C] from a checkpoint that only needs "student."
// parameters. Throws LoadError if any is missing.
Tensor run_inference(std::span<const NamedParam> checkpoint, const backbone::BackboneConfig& config,
                     const Tensor& images, std::size_t batch = 32);

// Rows of `rows` usable for training under a fold plan: every unpaired row
// plus paired rows outside `test_fold`.
std::vector<ManifestRow> training_rows(std::span<const ManifestRow> rows, int test_fold);
// WLI rows of the held-out paired fold.
std::vector<ManifestRow> test_rows(std::span<const ManifestRow> rows, int test_fold);

}  // namespace pagkd::train
