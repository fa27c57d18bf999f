#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "pagkd/config.hpp"
#include "pagkd/error.hpp"
#include "pagkd/manifest.hpp"

using namespace pagkd;

namespace {

TEST(Config, JsonRoundTripKeepsEveryField) {
  TrainConfig c = desk_config();
  c.epochs = 7;
  c.tau1 = 0.25;
  c.enable_pro = false;
  c.exclude_positive = true;
  c.pairing_mode = grouping::PairingMode::kMixed;
  c.norm_mode = den::NormMode::kMean;
  c.refinement.identity = true;
  c.seed = 12345678901234ULL;
  c.backbone.stages = {4, 8};
  c.teacher.batch = 9;
  TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
}

TEST(Config, MissingKeysKeepBase) {
  TrainConfig base = desk_config();
  TrainConfig c = TrainConfig::from_json(nlohmann::json{{"epochs", 3}}, base);
  EXPECT_EQ(c.epochs, 3u);
  EXPECT_EQ(c.lr, base.lr);
  EXPECT_EQ(c.backbone.stages, base.backbone.stages);
}

TEST(Config, UnknownAndMistypedKeysAreRejected) {
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"epoch", 3}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"backbone", {{"stage", 1}}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"lr", "fast"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"refinement", "bilateral"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, ValidateCatchesInconsistentSettings) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_NO_THROW(desk_config().validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](TrainConfig& c) { c.tau1 = 0.7; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.tau2 = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.epochs = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lr = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.num_queries = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) {
                 c.pairing_mode = grouping::PairingMode::kImage;
                 c.num_queries = 16;
               }).validate(),
               ConfigError);
}

TEST(Config, FileRoundTrip) {
  auto path = std::filesystem::temp_directory_path() / "pagkd_config_test.json";
  TrainConfig c = desk_config();
  c.fold = 3;
  c.save(path);
  EXPECT_EQ(TrainConfig::load(path).to_json(), c.to_json());
  std::filesystem::remove(path);
  EXPECT_THROW(TrainConfig::load(path), ConfigError);
}

TEST(DeriveSeed, StreamsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (const char* tag : {"student", "qformer", "srca", "grouping"})
    for (std::uint64_t i = 0; i < 4; ++i)
      for (std::uint64_t base = 0; base < 4; ++base) EXPECT_TRUE(seen.insert(derive_seed(base, tag, i)).second);
  EXPECT_EQ(derive_seed(7, "student", 1), derive_seed(7, "student", 1));
}

TEST(Manifest, CsvRoundTrip) {
  Manifest m;
  m.rows.push_back({"a", "images/a.pgkd", 0, Modality::kWli, "p0", "cv", 2});
  m.rows.push_back({"b", "images/b.pgkd", 2, Modality::kNbi, "", "train", std::nullopt});
  Manifest back = Manifest::parse_csv(m.to_csv());
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.to_csv(), m.to_csv());
  EXPECT_EQ(back.rows[0].fold, 2);
  EXPECT_FALSE(back.rows[1].fold.has_value());
  EXPECT_FALSE(back.rows[1].paired());
  EXPECT_EQ(back.num_classes(), 3u);
  EXPECT_EQ(back.find("b")->modality, Modality::kNbi);
  EXPECT_EQ(back.find("zzz"), nullptr);
}

TEST(Manifest, MalformedInputIsManifestError) {
  EXPECT_THROW(Manifest::parse_csv(""), ManifestError);
  EXPECT_THROW(Manifest::parse_csv("id,path\n"), ManifestError);
  EXPECT_THROW(Manifest::parse_csv("id,path,class,modality\na,x,zero,WLI\n"), ManifestError);
  EXPECT_THROW(Manifest::parse_csv("id,path,class,modality\na,x,0,XRAY\n"), ManifestError);
  EXPECT_THROW(Manifest::parse_csv("id,path,class,modality\na,x,0\n"), ManifestError);
}

TEST(Manifest, FoldColumnIsOptional) {
  Manifest m = Manifest::parse_csv("id,path,class,modality\na,x,0,NBI\n");
  EXPECT_FALSE(m.has_fold_column);
  EXPECT_EQ(m.rows[0].modality, Modality::kNbi);
}

}  // namespace
