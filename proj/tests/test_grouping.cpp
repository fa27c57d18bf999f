#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "pagkd/error.hpp"
#include "pagkd/grouping.hpp"

using namespace pagkd;
using namespace pagkd::grouping;

namespace {

std::vector<ManifestRow> make_rows(const std::vector<std::size_t>& wli, const std::vector<std::size_t>& nbi) {
  std::vector<ManifestRow> rows;
  for (int m = 0; m < 2; ++m) {
    const auto& counts = m == 0 ? wli : nbi;
    for (std::size_t c = 0; c < counts.size(); ++c)
      for (std::size_t i = 0; i < counts[c]; ++i) {
        ManifestRow r;
        r.id = "c" + std::to_string(c) + (m == 0 ? "_w" : "_n") + std::to_string(i);
        r.label = c;
        r.modality = m == 0 ? Modality::kWli : Modality::kNbi;
        r.split = "train";
        rows.push_back(r);
      }
  }
  return rows;
}

// Enumerative reference: exact quotas, floors, remainders ranked by size
// (ties to the earlier cell), then minimum top-ups from the largest cell.
std::vector<std::size_t> reference_allocation(const std::vector<std::size_t>& counts, std::size_t s) {
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  std::vector<std::size_t> out(counts.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double q = static_cast<double>(s) * static_cast<double>(counts[i]) / total;
    out[i] = static_cast<std::size_t>(std::floor(q));
    used += out[i];
    rem.push_back({q - std::floor(q), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; used < s; ++k, ++used) ++out[rem[k].second];
  for (auto& v : out) {
    while (v < 2) {
      auto big = std::max_element(out.begin(), out.end());
      --*big;
      ++v;
    }
  }
  return out;
}

std::map<CellKey, std::size_t> as_counts(const std::vector<std::size_t>& wli, const std::vector<std::size_t>& nbi) {
  std::map<CellKey, std::size_t> m;
  for (std::size_t c = 0; c < wli.size(); ++c) m[{c, Modality::kWli}] = wli[c];
  for (std::size_t c = 0; c < nbi.size(); ++c) m[{c, Modality::kNbi}] = nbi[c];
  return m;
}

TEST(Allocation, TwoBalancedClassesGiveSixPerCell) {
  auto sizes = allocate_group_sizes(as_counts({50, 50}, {50, 50}), 24);
  for (const auto& [key, n] : sizes) EXPECT_EQ(n, 6u);
}

TEST(Allocation, SingleClassSplitsEvenly) {
  auto sizes = allocate_group_sizes(as_counts({30}, {30}), 24);
  EXPECT_EQ(sizes.at({0, Modality::kWli}), 12u);
  EXPECT_EQ(sizes.at({0, Modality::kNbi}), 12u);
}

TEST(Allocation, SkewedCountsSumToBudgetWithMinimumTwo) {
  auto sizes = allocate_group_sizes(as_counts({155, 834, 76}, {40, 300, 25}), 24);
  std::size_t sum = 0;
  for (const auto& [key, n] : sizes) {
    sum += n;
    EXPECT_GE(n, 2u);
  }
  EXPECT_EQ(sum, 24u);
}

TEST(Allocation, MatchesEnumerativeReference) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> cnt(2, 400), cls(1, 4), budget(16, 48);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = cls(rng);
    std::vector<std::size_t> w(c), n(c);
    for (auto& v : w) v = cnt(rng);
    for (auto& v : n) v = cnt(rng);
    const std::size_t s = std::max<std::size_t>(budget(rng), 4 * c);
    auto got = allocate_group_sizes(as_counts(w, n), s);
    std::vector<std::size_t> flat;
    // map order: (label, modality) with WLI before NBI
    for (std::size_t k = 0; k < c; ++k) {
      flat.push_back(w[k]);
      flat.push_back(n[k]);
    }
    auto want = reference_allocation(flat, s);
    std::size_t i = 0;
    for (const auto& [key, v] : got) EXPECT_EQ(v, want[i++]) << "trial " << trial;
  }
}

TEST(Allocation, PermutingClassesPermutesAllocation) {
  auto a = allocate_group_sizes(as_counts({10, 70, 20}, {5, 40, 15}), 24);
  auto b = allocate_group_sizes(as_counts({20, 10, 70}, {15, 5, 40}), 24);
  for (auto m : {Modality::kWli, Modality::kNbi}) {
    EXPECT_EQ(a.at({0, m}), b.at({1, m}));
    EXPECT_EQ(a.at({1, m}), b.at({2, m}));
    EXPECT_EQ(a.at({2, m}), b.at({0, m}));
  }
}

TEST(Allocation, InfeasibleBudgetNamesMinimum) {
  try {
    allocate_group_sizes(as_counts({10, 10, 10}, {10, 10, 10}), 10);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("12"), std::string::npos) << e.what();
  }
}

TEST(Plan, EveryBatchHonoursBudgetAndUniqueness) {
  auto rows = make_rows({40, 25, 9}, {30, 12, 5});
  auto plan = plan_groups(rows, {.batch_budget = 24, .reform_period = 5, .seed = 3});
  EXPECT_EQ(plan.batches_per_epoch, (plan.total_samples() + 23) / 24);
  for (std::size_t b = 0; b < plan.batches_per_epoch; ++b) {
    auto groups = batch_groups(plan, b);
    std::size_t total = 0;
    std::set<std::string> seen;
    for (const auto& g : groups) {
      total += g.ids.size();
      EXPECT_GE(g.ids.size(), 2u);
      for (const auto& id : g.ids) {
        EXPECT_TRUE(seen.insert(id).second) << id;
        const auto* row = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.id == id; }).base();
        EXPECT_EQ(row->label, g.key.label);
        EXPECT_EQ(row->modality, g.key.modality);
      }
    }
    EXPECT_EQ(total, 24u);
  }
}

TEST(Plan, MissingModalityIsRejected) {
  auto rows = make_rows({10, 10}, {10, 1});
  EXPECT_THROW(plan_groups(rows, {}), Error);
}

TEST(Reform, OffScheduleEpochLeavesPlanUnchanged) {
  auto plan = plan_groups(make_rows({30, 30}, {30, 30}), {.seed = 9});
  auto same = reform(plan, 3);
  for (std::size_t i = 0; i < plan.cells.size(); ++i) EXPECT_EQ(same.cells[i].order, plan.cells[i].order);
}

TEST(Reform, OnScheduleReshufflesButKeepsSizes) {
  auto plan = plan_groups(make_rows({30, 30}, {30, 30}), {.seed = 9});
  auto r0 = reform(plan, 0), r5 = reform(plan, 5);
  for (std::size_t i = 0; i < plan.cells.size(); ++i) {
    EXPECT_EQ(r5.cells[i].size, plan.cells[i].size);
    EXPECT_NE(r5.cells[i].order, r0.cells[i].order);
    auto a = r5.cells[i].order, b = plan.cells[i].pool;
    std::sort(a.begin(), a.end());
    EXPECT_EQ(a, b);
  }
}

TEST(Reform, DeterministicForSeed) {
  auto a = reform(plan_groups(make_rows({30, 30}, {30, 30}), {.seed = 4}), 10);
  auto b = reform(plan_groups(make_rows({30, 30}, {30, 30}), {.seed = 4}), 10);
  for (std::size_t i = 0; i < a.cells.size(); ++i) EXPECT_EQ(a.cells[i].order, b.cells[i].order);
}

TEST(FormGroup, RowOrderIsImageMajor) {
  // N=2, d=3, h=w=2: value encodes (image, channel, position).
  std::vector<double> v(2 * 3 * 4);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 4; ++p) v[(i * 3 + c) * 4 + p] = 100.0 * i + 10.0 * c + p;
  FeatureBank bank({"a", "b"}, Tensor::from({2, 3, 2, 2}, v));
  std::vector<std::string> ids{"b", "a"};
  Tensor g = form_group(ids, bank);
  ASSERT_EQ(g.shape(), (Shape{8, 3}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t c = 0; c < 3; ++c) {
        const double image = i == 0 ? 1.0 : 0.0;
        EXPECT_EQ(g.at((i * 4 + p) * 3 + c), 100.0 * image + 10.0 * c + p);
      }
}

TEST(FormGroup, UnflattenRoundTripsExactly) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d;
  std::vector<double> v(3 * 5 * 2 * 3);
  for (auto& x : v) x = d(rng);
  FeatureBank bank({"x", "y", "z"}, Tensor::from({3, 5, 2, 3}, v));
  std::vector<std::string> ids{"x", "y", "z"};
  Tensor back = unflatten_group(form_group(ids, bank), 3, 2, 3);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(back.at(i), v[i]);
}

TEST(FormGroup, MissingIdNamesSample) {
  FeatureBank bank({"a"}, Tensor::zeros({1, 2, 2, 2}));
  std::vector<std::string> ids{"ghost"};
  try {
    form_group(ids, bank);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(PairingMode, NamesRoundTrip) {
  for (auto m : {PairingMode::kGroup, PairingMode::kImage, PairingMode::kMixed})
    EXPECT_EQ(parse_pairing_mode(pairing_mode_name(m)), m);
  EXPECT_THROW(parse_pairing_mode("pairs"), ConfigError);
}

}  // namespace
