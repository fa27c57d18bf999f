#include <gtest/gtest.h>

#include <random>

#include <cmath>

#include "pagkd/error.hpp"
#include "pagkd/ops.hpp"
#include "pagkd/tensor.hpp"

using namespace pagkd;

TEST(Tensor, ShapeInvariant) {
  auto t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(shape_str(t.shape()), "[2x3]");
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::from({0, 2}, {}), DimensionError);
}

TEST(Tensor, ItemNeedsOneElement) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.5).item(), 4.5);
  EXPECT_THROW(Tensor::zeros({2}).item(), DimensionError);
}

TEST(Tensor, DetachCopiesWithoutGrad) {
  auto t = Tensor::from({2}, {1, 2}, true);
  auto d = t.detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_FALSE(d.same_storage(t));
  EXPECT_EQ(d.at(1), 2);
}

TEST(Tape, BackwardTwiceIsAnError) {
  auto x = Tensor::from({2}, {1, 2}, true);
  GradTape tape;
  TapeScope scope(tape);
  auto loss = ops::sum(ops::mul(x, x));
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), TapeError);
  tape.reset();
  EXPECT_FALSE(tape.consumed());
}

TEST(Tape, ReplaysInReverseOrder) {
  auto x = Tensor::from({1}, {3}, true);
  GradTape tape;
  TapeScope scope(tape);
  auto y = ops::mul(x, x);
  auto z = ops::scale(y, 2.0);
  auto loss = ops::sum(z);
  EXPECT_EQ(tape.op_names(), (std::vector<std::string>{"mul", "scale", "sum"}));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tape, GradShapeMatchesEveryParticipant) {
  auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto b = Tensor::from({3, 1}, {1, 0, -1}, true);
  GradTape tape;
  TapeScope scope(tape);
  tape.backward(ops::sum(ops::matmul(a, b)));
  EXPECT_EQ(a.grad().size(), a.numel());
  EXPECT_EQ(b.grad().size(), b.numel());
}

TEST(Tape, NoRecordingWithoutScopeOrGrad) {
  GradTape tape;
  auto x = Tensor::from({2}, {1, 2}, true);
  ops::sum(x);
  EXPECT_EQ(tape.size(), 0u);
  TapeScope scope(tape);
  ops::sum(Tensor::from({2}, {1, 2}));
  EXPECT_EQ(tape.size(), 0u);
  {
    NoGradScope ng;
    ops::sum(x);
  }
  EXPECT_EQ(tape.size(), 0u);
  ops::sum(x);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tape, LossWithoutGradIsRejected) {
  GradTape tape;
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), TapeError);
  EXPECT_THROW(tape.backward(Tensor::from({2}, {1, 2}, true)), DimensionError);
}

TEST(Ops, MatmulExamples) {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto r = ops::matmul(eye, eye);
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{1, 0, 0, 1}));
  auto p = ops::matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {1, 1}));
  EXPECT_EQ(p.at(0), 3);
  EXPECT_EQ(p.at(1), 7);
}

TEST(Ops, MatmulShapeErrorNamesBothShapes) {
  try {
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
  }
}

TEST(Ops, MaskedSoftmaxExamples) {
  auto u = ops::masked_softmax(Tensor::from({1, 3}, {0, 0, 0}), std::vector<double>{0, 0, 0});
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto m = ops::masked_softmax(Tensor::from({1, 2}, {5, 1}), std::vector<double>{0, kMaskedBias});
  EXPECT_EQ(m.at(0), 1.0);
  EXPECT_EQ(m.at(1), 0.0);
}

TEST(Ops, MaskedSoftmaxDegenerateRow) {
  EXPECT_THROW(ops::masked_softmax(Tensor::from({1, 2}, {1, 2}), std::vector<double>{kMaskedBias, kMaskedBias}),
               DegenerateRowError);
}

TEST(Ops, MaskedSoftmaxRowsAndMaskedZeros) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> d(0, 3);
  std::bernoulli_distribution mask(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(16), bias(16, 0.0);
    for (auto& v : logits) v = d(rng);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 1; c < 4; ++c) bias[r * 4 + c] = mask(rng) ? kMaskedBias : 0.0;
    auto out = ops::masked_softmax(Tensor::from({4, 4}, logits), bias);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        s += out.at(r * 4 + c);
        if (bias[r * 4 + c] == kMaskedBias) EXPECT_EQ(out.at(r * 4 + c), 0.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Ops, ElementaryExamples) {
  auto r = ops::relu(Tensor::from({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{0, 0, 2}));
  auto g = ops::global_avg_pool(Tensor::full({1, 2, 3, 3}, 7.0));
  EXPECT_DOUBLE_EQ(g.at(0), 7.0);
  EXPECT_DOUBLE_EQ(g.at(1), 7.0);
  const std::size_t target = 0;
  auto ce = ops::cross_entropy(Tensor::from({1, 2}, {0, 0}), std::span<const std::size_t>(&target, 1));
  EXPECT_NEAR(ce.item(), std::log(2.0), 1e-15);
}

TEST(Ops, CrossEntropyTargetRange) {
  const std::size_t target = 5;
  EXPECT_THROW(ops::cross_entropy(Tensor::zeros({1, 2}), std::span<const std::size_t>(&target, 1)), IndexError);
}

TEST(Ops, ConvChannelMismatch) {
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 1, 3, 3}), Tensor::zeros({3})),
               DimensionError);
}

TEST(Ops, SliceConcatRoundTrip) {
  auto x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  auto y = ops::concat({ops::slice(x, 0, 1), ops::slice(x, 1, 3)});
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
  EXPECT_THROW(ops::slice(x, 2, 2), IndexError);
}

TEST(Ops, ForwardIsDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> d;
    std::vector<double> v(2 * 3 * 8 * 8), w(4 * 3 * 3 * 3);
    for (auto& x : v) x = d(rng);
    for (auto& x : w) x = d(rng);
    auto y = ops::conv2d(Tensor::from({2, 3, 8, 8}, v), Tensor::from({4, 3, 3, 3}, w), Tensor::zeros({4}));
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}
