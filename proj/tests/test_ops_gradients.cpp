#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "pagkd/error.hpp"
#include "pagkd/gradcheck.hpp"
#include "pagkd/gradsuite.hpp"
#include "pagkd/ops.hpp"

using namespace pagkd;

namespace {

class GradSuiteCase : public ::testing::TestWithParam<std::string> {};

TEST_P(GradSuiteCase, MatchesCentralDifferencesOverHundredSeeds) {
  gradsuite::SuiteOptions opts;
  opts.filter = GetParam();
  auto reports = gradsuite::run(opts);
  bool found = false;
  for (const auto& r : reports) {
    if (r.name != GetParam()) continue;
    found = true;
    EXPECT_EQ(r.seeds, 100u);
    EXPECT_GT(r.checked, 0u);
    EXPECT_TRUE(r.passed) << r.name << " max rel err " << r.max_rel_err << " at " << r.worst << " seed "
                          << r.worst_seed;
    EXPECT_LT(r.max_rel_err, 1e-4);
  }
  EXPECT_TRUE(found);
}

INSTANTIATE_TEST_SUITE_P(AllOpsAndHeads, GradSuiteCase, ::testing::ValuesIn(gradsuite::case_names()),
                         [](const auto& info) { return info.param; });

TEST(GradSuite, CoversEveryOpAndBothHeads) {
  const auto names = gradsuite::case_names();
  for (const char* op : {"matmul", "transpose", "reshape", "add", "sub", "mul", "scale", "masked_softmax", "conv2d",
                         "relu", "avg_pool2", "global_avg_pool", "linear", "layer_norm", "l2_normalize_rows",
                         "row_norm", "cross_entropy", "sum", "mean", "weighted_sum", "concat", "slice",
                         "to_positions", "l_pro", "l_den_mean", "l_den_paper", "heads_through_backbone"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), op), names.end()) << op;
  }
}

TEST(GradCheck, DetectsAWrongBackward) {
  // A hand-recorded op whose backward is off by a factor of two.
  Tensor x = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
  auto loss = [&] {
    Tensor out = Tensor::from({1}, {x.at(0) * x.at(0) + x.at(1) + x.at(2)});
    if (GradTape* tape = active_tape()) {
      out.set_requires_grad(true);
      Tensor in = x;
      tape->record("bad", {x}, out, [in](std::span<const double> g) {
        auto gx = in.mutable_grad();
        gx[0] += g[0] * 4.0 * in.at(0);
        gx[1] += g[0];
        gx[2] += g[0];
      });
    }
    return out;
  };
  std::vector<Tensor> inputs{x};
  auto r = check_gradients(loss, inputs);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst, "0[0]");
}

TEST(GradCheck, RestoresInputsAfterPerturbation) {
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  std::vector<Tensor> inputs{x};
  check_gradients([&] { return ops::sum(ops::mul(x, x)); }, inputs);
  EXPECT_EQ(std::vector<double>(x.data().begin(), x.data().end()), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_FALSE(x.has_grad());
}

TEST(MatmulGradient, RandomThreeByFourMeetsTightTolerance) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> d;
  std::vector<double> av(12), bv(8);
  for (auto& v : av) v = d(rng);
  for (auto& v : bv) v = d(rng);
  Tensor a = Tensor::from({3, 4}, av, true), b = Tensor::from({4, 2}, bv, true);
  std::vector<Tensor> inputs{a, b};
  auto r = check_gradients([&] { return ops::sum(ops::mul(ops::matmul(a, b), ops::matmul(a, b))); }, inputs);
  EXPECT_LT(r.max_rel_err, 1e-6);
}

TEST(MaskedSoftmaxGradient, RandomMaskRowsSumToOneAndGradientsMatch) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d;
  std::bernoulli_distribution masked(0.35);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> lv(16), bias(16, 0.0);
    for (auto& v : lv) v = d(rng);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (j != i && masked(rng)) bias[i * 4 + j] = kMaskedBias;
    Tensor logits = Tensor::from({4, 4}, lv, true);
    Tensor p = ops::masked_softmax(logits, bias);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        s += p.at(i * 4 + j);
        if (bias[i * 4 + j] == kMaskedBias) EXPECT_EQ(p.at(i * 4 + j), 0.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    std::vector<double> w(16);
    for (auto& v : w) v = d(rng);
    std::vector<Tensor> inputs{logits};
    auto r = check_gradients(
        [&] { return ops::weighted_sum(ops::reshape(ops::masked_softmax(logits, bias), {16}), w); }, inputs);
    EXPECT_LT(r.max_rel_err, 1e-5) << r.worst;
  }
}

TEST(RowNorm, ZeroRowHasZeroGradient) {
  Tensor x = Tensor::from({2, 2}, {0, 0, 3, 4}, true);
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(ops::sum(ops::row_norm(x)));
  }
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_NEAR(x.grad()[2], 0.6, 1e-15);
  EXPECT_NEAR(x.grad()[3], 0.8, 1e-15);
}

}  // namespace
