#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "pagkd/adam.hpp"
#include "pagkd/archive.hpp"
#include "pagkd/error.hpp"
#include "pagkd/ops.hpp"

using namespace pagkd;

namespace {

std::vector<NamedParam> one_param(Tensor t, const char* name = "w") { return {NamedParam{name, std::move(t)}}; }

TEST(Adam, ZeroGradientWithoutDecayLeavesParamsUnchanged) {
  Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  w.mutable_grad();
  AdamState adam({.lr = 0.1, .weight_decay = 0.0});
  auto params = one_param(w);
  adam.step(params);
  EXPECT_EQ(w.at(0), 1.0);
  EXPECT_EQ(w.at(1), -2.0);
  EXPECT_EQ(w.at(2), 0.5);
  EXPECT_FALSE(w.has_grad());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor w = Tensor::from({1}, {3.0}, true);
  w.mutable_grad()[0] = 1.0;
  AdamState adam({.lr = 1e-4, .weight_decay = 0.0});
  auto params = one_param(w);
  adam.step(params);
  EXPECT_NEAR(w.at(0) - 3.0, -1e-4, 1e-11);
  EXPECT_EQ(adam.step_count(), 1u);
}

TEST(Adam, DecoupledWeightDecayShrinksWeights) {
  Tensor w = Tensor::from({1}, {2.0}, true);
  w.mutable_grad();
  AdamState adam({.lr = 0.1, .weight_decay = 0.5});
  auto params = one_param(w);
  adam.step(params);
  EXPECT_NEAR(w.at(0), 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(Adam, MinimisesQuadratic) {
  Tensor x = Tensor::from({1}, {1.0}, true);
  AdamState adam({.lr = 0.1, .weight_decay = 0.0});
  auto params = one_param(x);
  std::vector<double> trace;
  for (int i = 0; i < 100; ++i) {
    GradTape tape;
    {
      TapeScope scope(tape);
      tape.backward(ops::sum(ops::mul(x, x)));
    }
    adam.step(params);
    trace.push_back(std::abs(x.at(0)));
  }
  // Adam overshoots and oscillates around the minimum late on; the early
  // descent is monotone and the end point is far below the start.
  for (int i = 1; i < 8; ++i) EXPECT_LT(trace[i], trace[i - 1]) << i;
  EXPECT_LT(trace.back(), 0.1);
}

TEST(Adam, MissingGradientNamesParameter) {
  Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
  AdamState adam;
  auto params = one_param(w, "student.conv0.weight");
  try {
    adam.step(params);
    FAIL();
  } catch (const OptimizerError& e) {
    EXPECT_NE(std::string(e.what()).find("student.conv0.weight"), std::string::npos);
  }
}

TEST(Adam, FrozenParametersAreSkippedBitExactly) {
  Tensor frozen = Tensor::from({2}, {0.1, 0.2}, false);
  Tensor live = Tensor::from({1}, {1.0}, true);
  live.mutable_grad()[0] = 0.3;
  std::vector<NamedParam> params{{"teacher.w", frozen}, {"student.w", live}};
  AdamState adam({.lr = 0.1});
  adam.step(params);
  EXPECT_EQ(frozen.at(0), 0.1);
  EXPECT_EQ(frozen.at(1), 0.2);
  EXPECT_NE(live.at(0), 1.0);
}

TEST(Archive, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0, 1e10);
  std::vector<double> v(24);
  for (auto& x : v) x = d(rng);
  v[0] = -0.0;
  v[1] = 5e-324;
  v[2] = std::nextafter(1.0, 2.0);
  std::vector<NamedParam> entries{{"student.conv0.weight", Tensor::from({2, 3, 4}, v)},
                                  {"ünïcode", Tensor::from({1}, {42.0})}};
  const std::string bytes = encode_archive(entries);
  auto back = decode_archive(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "student.conv0.weight");
  EXPECT_EQ(back[0].tensor.shape(), (Shape{2, 3, 4}));
  EXPECT_EQ(std::memcmp(back[0].tensor.data().data(), v.data(), v.size() * sizeof(double)), 0);
  EXPECT_EQ(back[1].name, "ünïcode");
  EXPECT_EQ(encode_archive(back), bytes);
}

TEST(Archive, HeaderLayout) {
  const std::string bytes = encode_archive(one_param(Tensor::from({2}, {1.0, 2.0})));
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 4), "PGKD");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), kArchiveVersion);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);
  // 4 magic + 4 version + 4 count + (4 + 1 name) + 4 rank + 8 dim + 16 payload
  EXPECT_EQ(bytes.size(), 45u);
}

TEST(Archive, RejectsCorruptInput) {
  const std::string bytes = encode_archive(one_param(Tensor::from({2}, {1.0, 2.0})));
  EXPECT_THROW(decode_archive("XXXX" + bytes.substr(4)), ArchiveError);
  EXPECT_THROW(decode_archive(bytes.substr(0, bytes.size() - 3)), ArchiveError);
  EXPECT_THROW(decode_archive(bytes + "z"), ArchiveError);
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  EXPECT_THROW(decode_archive(wrong_version), ArchiveError);
}

TEST(Archive, FileRoundTripAndFingerprint) {
  const auto path = std::filesystem::temp_directory_path() / "pagkd_archive_test.pgkd";
  auto entries = one_param(Tensor::from({2, 2}, {1, 2, 3, 4}));
  write_archive(path, entries);
  auto back = read_archive(path);
  EXPECT_EQ(back[0].tensor.at(3), 4.0);
  EXPECT_EQ(fnv1a64(read_file_bytes(path)), fnv1a64(encode_archive(entries)));
  std::filesystem::remove(path);
  EXPECT_THROW(read_archive(path), ArchiveError);
}

TEST(Fnv, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

}  // namespace
