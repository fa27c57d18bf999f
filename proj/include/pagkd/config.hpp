#pragma once

// Experiment description shared by the trainer, the CV driver and the CLI.
// Serialised as JSON; unknown keys are rejected so typos surface early.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "pagkd/backbone.hpp"
#include "pagkd/dense.hpp"
#include "pagkd/grouping.hpp"

namespace pagkd {

// Plain cross-entropy recipe for the frozen NBI teacher (and for the
// single-modality baselines used by the dataset gap check).
struct TeacherRecipe {
  std::size_t epochs = 30;
  double lr = 1e-3;
  double weight_decay = 1e-8;
  std::size_t batch = 24;
};

struct TrainConfig {
  std::size_t epochs = 100;
  double lr = 1e-4;
  double weight_decay = 1e-8;
  std::size_t batch_budget = 24;
  std::size_t num_queries = 12;
  std::size_t qformer_blocks = 2;
  double tau1 = 0.3;
  double tau2 = 0.7;
  std::size_t reform_period = 5;

  bool enable_pro = true;
  bool enable_den = true;
  bool use_qformer = true;
  bool use_srca = true;
  bool bidirectional = true;
  bool exclude_positive = false;
  grouping::PairingMode pairing_mode = grouping::PairingMode::kGroup;
  // Image-level units pair a WLI image with its true NBI partner when it has
  // one; when false every partner is a random same-class NBI image.
  bool use_true_pairs = true;
  den::NormMode norm_mode = den::NormMode::kMean;
  den::RefineOptions refinement;

  std::uint64_t seed = 0;
  int fold = 0;
  std::size_t checkpoint_every = 10;  // epochs; 0 disables

  TeacherRecipe teacher;
  backbone::BackboneConfig backbone;

  // Throws ConfigError on an inconsistent setting.
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Reduced scale used by the acceptance suite and quick CLI runs: a narrower
// backbone, fewer epochs and a larger step size than the published recipe so
// that a full cross-validated matrix fits in minutes on one core.
TrainConfig desk_config();

}  // namespace pagkd

namespace pagkd {

// Independent stream seed for one consumer (`tag`) of a run: the student,
// the query transformer, the grouping schedule, and so on each draw from
// their own generator so enabling one component never shifts another.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

}  // namespace pagkd
