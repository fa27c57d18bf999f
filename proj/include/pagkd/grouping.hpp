#pragma once

// Per-class, per-modality image groups within a fixed batch budget.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pagkd/manifest.hpp"
#include "pagkd/tensor.hpp"

namespace pagkd::grouping {

struct CellKey {
  std::size_t label = 0;
  Modality modality = Modality::kWli;
  auto operator<=>(const CellKey&) const = default;
};

inline constexpr std::size_t kMinGroupSize = 2;

// Splits the budget `s` over cells in proportion to their sample counts:
// floor of the exact quota, then the leftover units to the largest
// remainders (ties to the earlier cell), then every cell is raised to
// kMinGroupSize by taking single units from the currently largest cell.
// Throws ConfigError when the budget cannot give each cell its minimum.
std::map<CellKey, std::size_t> allocate_group_sizes(const std::map<CellKey, std::size_t>& counts,
                                                    std::size_t batch_budget);

struct GroupCell {
  CellKey key;
  std::size_t size = 0;             // N_{c,mod}
  std::vector<std::string> pool;    // every sample id of the cell, sorted
  std::vector<std::string> order;   // current membership order (a permutation of pool)
};

struct PlanOptions {
  std::size_t batch_budget = 24;
  std::size_t reform_period = 5;
  std::uint64_t seed = 0;
};

struct GroupPlan {
  std::vector<GroupCell> cells;  // sorted by key
  std::size_t batch_budget = 24;
  std::size_t reform_period = 5;
  std::uint64_t base_seed = 0;
  std::size_t num_classes = 0;
  std::size_t batches_per_epoch = 0;  // ceil(samples / batch_budget)

  std::size_t group_size(std::size_t label, Modality modality) const;
  std::size_t total_samples() const;
};

// Builds the plan for a training subset. Every class must be present in both
// modalities with at least kMinGroupSize samples each.
GroupPlan plan_groups(std::span<const ManifestRow> samples, const PlanOptions& options);

// Reshuffles membership at the start of every reform period (seed
// base_seed ^ (epoch / period)); returns the plan unchanged otherwise.
GroupPlan reform(const GroupPlan& plan, std::size_t epoch);

struct BatchGroup {
  CellKey key;
  std::vector<std::string> ids;
};

// Groups of batch `batch_index`: for every cell, the next `size` ids of its
// membership order, cycling over the pool. Cells come in plan order.
std::vector<BatchGroup> batch_groups(const GroupPlan& plan, std::size_t batch_index);

// Feature maps [N, d, h, w] addressable by sample id.
class FeatureBank {
 public:
  FeatureBank() = default;
  FeatureBank(std::vector<std::string> ids, Tensor features);

  bool contains(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;  // throws DataError naming the id
  const Tensor& features() const { return features_; }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::map<std::string, std::size_t, std::less<>> index_;
  Tensor features_;
};

// Flattens the members' feature maps into [N_c*h*w, d]; row i*h*w + p holds
// member i at spatial index p (row-major over h, w). Differentiable.
Tensor form_group(std::span<const std::string> ids, const FeatureBank& bank);

// Inverse of the flattening: [N*h*w, d] -> [N, d, h, w]. Values only.
Tensor unflatten_group(const Tensor& group, std::size_t n, std::size_t h, std::size_t w);

enum class PairingMode { kGroup, kImage, kMixed };
std::string_view pairing_mode_name(PairingMode mode);
PairingMode parse_pairing_mode(std::string_view text);

}  // namespace pagkd::grouping
