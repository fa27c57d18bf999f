#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "pagkd/error.hpp"
#include "pagkd/experiment.hpp"
#include "pagkd/synthdata.hpp"

using namespace pagkd;
using namespace pagkd::experiment;

namespace {

Dataset small_dataset() {
  synth::GenerateOptions g;
  g.per_class = 15;
  g.pairing = 0.6;
  g.side = 16;
  return synth::generate(g);
}

TrainConfig small_config() {
  TrainConfig c = desk_config();
  c.epochs = 2;
  c.num_queries = 3;
  c.backbone.stages = {4, 8};
  c.backbone.input_side = 16;
  c.teacher.epochs = 2;
  return c;
}

std::set<std::string> differing_keys(const TrainConfig& a, const TrainConfig& b) {
  std::set<std::string> out;
  const auto ja = a.to_json(), jb = b.to_json();
  for (const auto& [key, value] : ja.items())
    if (jb.at(key) != value) out.insert(key);
  return out;
}

TEST(Variants, EachDiffersFromBaseOnlyInNamedFlags) {
  const TrainConfig base = desk_config();
  std::vector<std::vector<Variant>> families{component_variants(base), granularity_variants(base),
                                             subcomponent_variants(base), threshold_variants(base),
                                             query_variants(base), budget_variants(base)};
  for (const auto& family : families) {
    std::set<std::string> names;
    for (const auto& v : family) {
      EXPECT_TRUE(names.insert(v.name).second) << v.name;
      const auto diff = differing_keys(base, v.config);
      for (const auto& k : diff)
        EXPECT_NE(std::find(v.changed.begin(), v.changed.end(), k), v.changed.end()) << v.name << ": " << k;
    }
  }
}

TEST(Variants, ComponentMatrixHasFourRowsWithProvenance) {
  auto v = component_variants(desk_config());
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0].name, "baseline");
  EXPECT_FALSE(v[0].config.enable_pro || v[0].config.enable_den);
  EXPECT_EQ(v[0].changed, (std::vector<std::string>{"enable_pro", "enable_den"}));
  EXPECT_TRUE(v[3].config.enable_pro && v[3].config.enable_den);
  auto t = threshold_variants(desk_config());
  EXPECT_EQ(t.size(), 10u);
  for (const auto& x : t) EXPECT_NO_THROW(x.config.validate()) << x.name;
}

TEST(Cv, FoldReportsAreCompleteAndClean) {
  auto ds = small_dataset();
  CvOptions opts;
  opts.folds = {0, 1};
  auto report = run_cv(ds, small_config(), opts);
  ASSERT_EQ(report.folds.size(), 2u);
  EXPECT_EQ(report.aggregate.folds, 2u);
  for (const auto& f : report.folds) {
    EXPECT_GT(f.steps, 0u);
    EXPECT_EQ(f.teacher_hash_before, f.teacher_hash_after);
    EXPECT_EQ(f.test_images_touched_in_training, 0u);
    EXPECT_EQ(f.audit.violations, 0u);
    EXPECT_GT(f.metrics.samples, 0u);
    EXPECT_GE(f.metrics.auc, 0.0);
    EXPECT_LE(f.metrics.auc, 1.0);
  }
  const double mean = (report.folds[0].metrics.auc + report.folds[1].metrics.auc) / 2;
  EXPECT_NEAR(report.aggregate.auc.mean, mean, 1e-12);
  auto j = report.to_json();
  EXPECT_EQ(j["folds"].size(), 2u);
}

TEST(Cv, RepeatedRunIsIdentical) {
  auto ds = small_dataset();
  CvOptions opts;
  opts.folds = {2};
  auto a = run_cv(ds, small_config(), opts), b = run_cv(ds, small_config(), opts);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Cv, MissingFoldColumnIsManifestError) {
  auto ds = small_dataset();
  ds.manifest.has_fold_column = false;
  EXPECT_THROW(run_cv(ds, small_config()), ManifestError);
}

TEST(Matrix, SingleVariantMatchesRunCv) {
  auto ds = small_dataset();
  TeacherCache cache;
  MatrixOptions opts;
  opts.seeds = {5};
  opts.cv.folds = {1};
  TrainConfig cfg = small_config();
  auto m = run_matrix(ds, {Variant{"only", cfg, {}}}, cache, opts);
  ASSERT_EQ(m.rows.size(), 1u);
  ASSERT_TRUE(m.rows[0].report.has_value());
  cfg.seed = 5;
  auto direct = run_cv(ds, cfg, opts.cv);
  EXPECT_EQ(m.rows[0].report->to_json().dump(), direct.to_json().dump());
  EXPECT_EQ(cache.size(), 1u);
}

TEST(Matrix, FailingVariantIsRecordedAndSweepContinues) {
  auto ds = small_dataset();
  TeacherCache cache;
  MatrixOptions opts;
  opts.cv.folds = {0};
  TrainConfig bad = small_config();
  bad.tau1 = 0.9;
  auto variants = component_variants(small_config());
  variants.insert(variants.begin(), Variant{"broken", bad, {"tau1"}});
  auto m = run_matrix(ds, variants, cache, opts);
  ASSERT_EQ(m.rows.size(), 5u);
  EXPECT_FALSE(m.rows[0].report.has_value());
  EXPECT_NE(m.rows[0].error.find("tau1"), std::string::npos);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_TRUE(m.rows[i].report.has_value()) << m.rows[i].error;
  // the teacher is pretrained once and shared by every variant
  EXPECT_EQ(cache.size(), 1u);

  const auto csv = m.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_NE(csv.find("baseline,0,enable_pro;enable_den,false,false"), std::string::npos) << csv;
  const auto means = m.mean_auc();
  EXPECT_EQ(means.size(), 4u);
  EXPECT_FALSE(means.contains("broken"));
  auto trend = m.trend_summary();
  EXPECT_EQ(trend.size(), 4u);
}

}  // namespace
