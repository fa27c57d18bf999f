#include "pagkd/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pagkd/error.hpp"
#include "pagkd/ops.hpp"

namespace pagkd::grouping {

std::map<CellKey, std::size_t> allocate_group_sizes(const std::map<CellKey, std::size_t>& counts,
                                                    std::size_t batch_budget) {
  if (counts.empty()) throw ConfigError("no (class, modality) cells to allocate");
  const std::size_t cells = counts.size();
  const std::size_t required = kMinGroupSize * cells;
  if (batch_budget < required) {
    throw ConfigError("batch budget s=" + std::to_string(batch_budget) + " is infeasible: " +
                      std::to_string(cells) + " cells need s >= " + std::to_string(required));
  }
  std::vector<CellKey> keys;
  std::vector<double> quota;
  std::size_t total = 0;
  for (const auto& [key, n] : counts) {
    if (n < kMinGroupSize) {
      throw ConfigError("class " + std::to_string(key.label) + " / " + std::string(modality_name(key.modality)) +
                        " has " + std::to_string(n) + " samples; at least " + std::to_string(kMinGroupSize) +
                        " are required");
    }
    total += n;
  }
  if (batch_budget > total) {
    throw ConfigError("batch budget s=" + std::to_string(batch_budget) + " exceeds the " + std::to_string(total) +
                      " available samples");
  }
  std::vector<std::size_t> alloc;
  std::vector<std::size_t> avail;
  for (const auto& [key, n] : counts) {
    keys.push_back(key);
    quota.push_back(static_cast<double>(batch_budget) * static_cast<double>(n) / static_cast<double>(total));
    alloc.push_back(static_cast<std::size_t>(std::floor(quota.back())));
    avail.push_back(n);
  }
  std::size_t assigned = std::accumulate(alloc.begin(), alloc.end(), std::size_t{0});
  std::vector<std::size_t> by_remainder(cells);
  std::iota(by_remainder.begin(), by_remainder.end(), 0);
  std::stable_sort(by_remainder.begin(), by_remainder.end(), [&](std::size_t a, std::size_t b) {
    return quota[a] - std::floor(quota[a]) > quota[b] - std::floor(quota[b]);
  });
  for (std::size_t i = 0; assigned < batch_budget; ++i, ++assigned) ++alloc[by_remainder[i % cells]];

  for (std::size_t i = 0; i < cells; ++i) {
    while (alloc[i] < kMinGroupSize) {
      std::size_t donor = cells;
      for (std::size_t j = 0; j < cells; ++j) {
        if (alloc[j] > kMinGroupSize && (donor == cells || alloc[j] > alloc[donor])) donor = j;
      }
      if (donor == cells) throw ConfigError("cannot satisfy minimum group size within the budget");
      --alloc[donor];
      ++alloc[i];
    }
  }
  std::map<CellKey, std::size_t> result;
  for (std::size_t i = 0; i < cells; ++i) {
    if (alloc[i] > avail[i]) {
      throw ConfigError("group of " + std::to_string(alloc[i]) + " exceeds the " + std::to_string(avail[i]) +
                        " samples of class " + std::to_string(keys[i].label) + " / " +
                        std::string(modality_name(keys[i].modality)));
    }
    result[keys[i]] = alloc[i];
  }
  return result;
}

std::size_t GroupPlan::group_size(std::size_t label, Modality modality) const {
  for (const auto& c : cells) {
    if (c.key.label == label && c.key.modality == modality) return c.size;
  }
  return 0;
}

std::size_t GroupPlan::total_samples() const {
  std::size_t n = 0;
  for (const auto& c : cells) n += c.pool.size();
  return n;
}

namespace {

void shuffle_cells(GroupPlan& plan, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& cell : plan.cells) {
    cell.order = cell.pool;
    std::shuffle(cell.order.begin(), cell.order.end(), rng);
  }
}

}  // namespace

GroupPlan plan_groups(std::span<const ManifestRow> samples, const PlanOptions& options) {
  if (options.reform_period == 0) throw ConfigError("reform period must be at least 1 epoch");
  std::map<CellKey, std::vector<std::string>> pools;
  std::size_t num_classes = 0;
  for (const auto& row : samples) {
    pools[CellKey{row.label, row.modality}].push_back(row.id);
    num_classes = std::max(num_classes, row.label + 1);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (Modality m : {Modality::kWli, Modality::kNbi}) {
      if (!pools.count(CellKey{c, m})) {
        throw ConfigError("class " + std::to_string(c) + " has no " + std::string(modality_name(m)) +
                          " training samples");
      }
    }
  }
  std::map<CellKey, std::size_t> counts;
  for (const auto& [key, ids] : pools) counts[key] = ids.size();
  const auto sizes = allocate_group_sizes(counts, options.batch_budget);

  GroupPlan plan;
  plan.batch_budget = options.batch_budget;
  plan.reform_period = options.reform_period;
  plan.base_seed = options.seed;
  plan.num_classes = num_classes;
  for (auto& [key, ids] : pools) {
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw DataError("duplicate sample id in class " + std::to_string(key.label));
    }
    plan.cells.push_back(GroupCell{key, sizes.at(key), ids, {}});
  }
  plan.batches_per_epoch = (samples.size() + options.batch_budget - 1) / options.batch_budget;
  shuffle_cells(plan, plan.base_seed);
  return plan;
}

GroupPlan reform(const GroupPlan& plan, std::size_t epoch) {
  if (epoch % plan.reform_period != 0) return plan;
  GroupPlan next = plan;
  shuffle_cells(next, plan.base_seed ^ static_cast<std::uint64_t>(epoch / plan.reform_period));
  return next;
}

std::vector<BatchGroup> batch_groups(const GroupPlan& plan, std::size_t batch_index) {
  std::vector<BatchGroup> groups;
  groups.reserve(plan.cells.size());
  for (const auto& cell : plan.cells) {
    BatchGroup g{cell.key, {}};
    const std::size_t n = cell.order.size();
    for (std::size_t j = 0; j < cell.size; ++j) g.ids.push_back(cell.order[(batch_index * cell.size + j) % n]);
    groups.push_back(std::move(g));
  }
  return groups;
}

FeatureBank::FeatureBank(std::vector<std::string> ids, Tensor features)
    : ids_(std::move(ids)), features_(std::move(features)) {
  if (features_.rank() != 4 || features_.dim(0) != ids_.size()) {
    throw DimensionError("feature bank: " + std::to_string(ids_.size()) + " ids for features " +
                         shape_str(features_.shape()));
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], i);
}

bool FeatureBank::contains(std::string_view id) const { return index_.find(id) != index_.end(); }

std::size_t FeatureBank::index_of(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("no features for sample '" + std::string(id) + "'");
  return it->second;
}

Tensor form_group(std::span<const std::string> ids, const FeatureBank& bank) {
  if (ids.empty()) throw DataError("cannot form an empty group");
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) rows.push_back(bank.index_of(id));

  // Contiguous ascending members need a single slice.
  bool contiguous = true;
  for (std::size_t i = 1; i < rows.size(); ++i) contiguous = contiguous && rows[i] == rows[i - 1] + 1;
  Tensor members;
  if (contiguous) {
    members = ops::slice(bank.features(), rows.front(), rows.back() + 1);
  } else {
    std::vector<Tensor> parts;
    parts.reserve(rows.size());
    for (auto r : rows) parts.push_back(ops::slice(bank.features(), r, r + 1));
    members = ops::concat(parts);
  }
  return ops::to_positions(members);
}

Tensor unflatten_group(const Tensor& group, std::size_t n, std::size_t h, std::size_t w) {
  const std::size_t hw = h * w;
  if (group.rank() != 2 || group.dim(0) != n * hw) {
    throw DimensionError("unflatten_group: " + shape_str(group.shape()) + " is not " + std::to_string(n) +
                         " images of " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t d = group.dim(1);
  std::vector<double> out(n * d * hw);
  auto g = group.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < d; ++c) out[(i * d + c) * hw + p] = g[(i * hw + p) * d + c];
  return Tensor::from({n, d, h, w}, std::move(out));
}

std::string_view pairing_mode_name(PairingMode mode) {
  switch (mode) {
    case PairingMode::kGroup:
      return "group";
    case PairingMode::kImage:
      return "image";
    case PairingMode::kMixed:
      return "mixed";
  }
  return "group";
}

PairingMode parse_pairing_mode(std::string_view text) {
  if (text == "group") return PairingMode::kGroup;
  if (text == "image") return PairingMode::kImage;
  if (text == "mixed") return PairingMode::kMixed;
  throw ConfigError("pairing_mode must be group, image or mixed, got '" + std::string(text) + "'");
}

}  // namespace pagkd::grouping
