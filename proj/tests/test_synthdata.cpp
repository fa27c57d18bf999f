#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "pagkd/archive.hpp"
#include "pagkd/error.hpp"
#include "pagkd/synthdata.hpp"

using namespace pagkd;
using namespace pagkd::synth;

namespace {

GenerateOptions small(double pairing = 0.4) {
  GenerateOptions o;
  o.per_class = 20;
  o.pairing = pairing;
  return o;
}

TEST(Generate, FullPairingGivesEveryInstanceBothModalities) {
  auto ds = generate(small(1.0));
  EXPECT_EQ(ds.manifest.rows.size(), 3u * 20u * 2u);
  for (const auto& r : ds.manifest.rows) {
    EXPECT_TRUE(r.paired()) << r.id;
    EXPECT_TRUE(r.fold.has_value());
  }
}

TEST(Generate, NoPairingIsAConfigurationError) { EXPECT_THROW(generate(small(0.0)), ConfigError); }

TEST(Generate, RejectsBadOptions) {
  GenerateOptions o = small();
  o.per_class = 9;
  EXPECT_THROW(generate(o), ConfigError);
  o = small();
  o.pairing = 1.5;
  EXPECT_THROW(generate(o), ConfigError);
}

TEST(Generate, PairedUnpairedStructure) {
  auto ds = generate(small(0.4));
  std::map<std::string, std::vector<const ManifestRow*>> pairs;
  std::map<std::size_t, std::map<Modality, std::size_t>> unpaired;
  for (const auto& r : ds.manifest.rows) {
    if (r.paired()) {
      pairs[r.pair_id].push_back(&r);
      EXPECT_EQ(r.split, "cv");
    } else {
      ++unpaired[r.label][r.modality];
      EXPECT_EQ(r.split, "train");
      EXPECT_FALSE(r.fold.has_value());
    }
  }
  EXPECT_EQ(pairs.size(), 3u * 8u);
  for (const auto& [id, rows] : pairs) {
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_NE(rows[0]->modality, rows[1]->modality);
    EXPECT_EQ(rows[0]->label, rows[1]->label);
    EXPECT_EQ(rows[0]->fold, rows[1]->fold);  // instance-disjoint folds
  }
  // 12 unpaired per class alternate between modalities
  for (const auto& [label, by_mod] : unpaired) {
    EXPECT_EQ(by_mod.at(Modality::kWli), 6u);
    EXPECT_EQ(by_mod.at(Modality::kNbi), 6u);
  }
}

TEST(Generate, FoldsAreStratifiedAndNearEqual) {
  GenerateOptions o;  // default scale
  auto ds = generate(o);
  std::map<int, std::map<std::size_t, std::size_t>> per_fold;
  for (const auto& r : ds.manifest.rows)
    if (r.paired() && r.modality == Modality::kWli) ++per_fold[*r.fold][r.label];
  ASSERT_EQ(per_fold.size(), static_cast<std::size_t>(kNumFolds));
  for (const auto& [fold, by_class] : per_fold) {
    ASSERT_EQ(by_class.size(), 3u);
    for (const auto& [label, n] : by_class) {
      EXPECT_GE(n, 9u);
      EXPECT_LE(n, 10u);
    }
  }
}

TEST(Generate, PairedImagesShareLatents) {
  const auto inst = sample_instance(1, 4, 7);
  const auto again = sample_instance(1, 4, 7);
  EXPECT_EQ(inst.frequency, again.frequency);
  EXPECT_EQ(inst.blobs.size(), again.blobs.size());
  GenerateOptions o;
  // NBI renderings ignore the nuisance seed; WLI ones depend on it.
  Tensor n1 = render(inst, Modality::kNbi, o, 1), n2 = render(inst, Modality::kNbi, o, 2);
  Tensor w1 = render(inst, Modality::kWli, o, 1), w2 = render(inst, Modality::kWli, o, 2);
  EXPECT_EQ(n1.data().size(), n2.data().size());
  EXPECT_TRUE(std::equal(n1.data().begin(), n1.data().end(), n2.data().begin()));
  EXPECT_FALSE(std::equal(w1.data().begin(), w1.data().end(), w2.data().begin()));
}

TEST(Generate, FrequencyBandsAreDisjointAndRespected) {
  for (std::size_t c = 0; c + 1 < 5; ++c) EXPECT_LT(frequency_band(c).second, frequency_band(c + 1).first);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 50; ++i) {
      auto inst = sample_instance(c, i, 3);
      EXPECT_GE(inst.frequency, frequency_band(c).first);
      EXPECT_LE(inst.frequency, frequency_band(c).second);
      EXPECT_GE(inst.blobs.size(), 1u);
    }
}

TEST(Generate, ZeroGapRendersIdenticalTextureAmplitude) {
  // With g=0 the WLI texture is not attenuated and carries no nuisance, so the
  // two renderings differ only by the fixed tissue colour.
  GenerateOptions o;
  o.gap = 0.0;
  auto inst = sample_instance(0, 0, 1);
  Tensor w = render(inst, Modality::kWli, o, 5), w2 = render(inst, Modality::kWli, o, 6);
  EXPECT_TRUE(std::equal(w.data().begin(), w.data().end(), w2.data().begin()));
}

TEST(Generate, SeedFixedRerunIsByteIdentical) {
  const auto root = std::filesystem::temp_directory_path() / "pagkd_synth_test";
  std::filesystem::remove_all(root);
  auto o = small();
  generate_to(o, root / "a");
  generate_to(o, root / "b");
  EXPECT_EQ(read_file_bytes(root / "a" / "manifest.csv"), read_file_bytes(root / "b" / "manifest.csv"));
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(root / "a" / "images")) {
    EXPECT_EQ(read_file_bytes(entry.path()), read_file_bytes(root / "b" / "images" / entry.path().filename()));
    ++files;
  }
  EXPECT_EQ(files, 3u * (8u * 2u + 12u));
  // a different seed changes the images
  o.seed = 1;
  generate_to(o, root / "c");
  EXPECT_NE(read_file_bytes(root / "a" / "manifest.csv"), read_file_bytes(root / "c" / "manifest.csv"));
  auto loaded = Dataset::load(root / "a" / "manifest.csv");
  EXPECT_EQ(loaded.images.size(), files);
  std::filesystem::remove_all(root);
}

GapOptions quick_gap() {
  GapOptions g;
  g.backbone = desk_config().backbone;
  g.recipe = desk_config().teacher;
  g.throw_on_failure = false;
  return g;
}

TEST(VerifyGap, ZeroGapFailsMarginCheck) {
  GenerateOptions o;
  o.gap = 0.0;
  auto ds = generate(o);
  auto g = quick_gap();
  auto report = verify_gap(ds, g);
  EXPECT_FALSE(report.passed) << report.nbi_auc << " vs " << report.wli_auc;
  g.throw_on_failure = true;
  EXPECT_THROW(verify_gap(ds, g), DataQualityError);
}

TEST(VerifyGap, DefaultGapHoldsAndPureNoiseWliIsChance) {
  auto ds = generate(GenerateOptions{});
  auto report = verify_gap(ds, quick_gap());
  EXPECT_TRUE(report.passed) << report.nbi_auc << " vs " << report.wli_auc;

  GenerateOptions extreme;
  extreme.gap = 1.0;
  extreme.pairing = 1.0;
  auto noisy = verify_gap(generate(extreme), quick_gap());
  EXPECT_NEAR(noisy.wli_auc, 0.5, 0.08);
  EXPECT_GT(noisy.nbi_auc, 0.9);
}

}  // namespace
