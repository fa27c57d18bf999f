#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pagkd/adam.hpp"
#include "pagkd/error.hpp"
#include "pagkd/ops.hpp"
#include "pagkd/prototype.hpp"

using namespace pagkd;
using namespace pagkd::pro;
using oracle::Matrix;

namespace {

Matrix attend(const Matrix& q_in, const Matrix& kv, const Matrix& wq, const Matrix& wk, const Matrix& wv,
              const Matrix& wo) {
  const Matrix q = oracle::multiply(q_in, wq), k = oracle::multiply(kv, wk), v = oracle::multiply(kv, wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q_in[0].size()));
  Matrix a(q.size(), std::vector<double>(k.size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double s = 0;
      for (std::size_t t = 0; t < q[i].size(); ++t) s += q[i][t] * k[j][t];
      a[i][j] = s * scale;
      mx = std::max(mx, a[i][j]);
    }
    double z = 0;
    for (auto& x : a[i]) z += (x = std::exp(x - mx));
    for (auto& x : a[i]) x /= z;
  }
  return oracle::multiply(oracle::multiply(a, v), wo);
}

Matrix residual_norm(const Matrix& x, const Matrix& delta) {
  Matrix out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < x[i].size(); ++j) mean += (out[i][j] = x[i][j] + delta[i][j]);
    mean /= n;
    for (double v : out[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (auto& v : out[i]) v = (v - mean) / std::sqrt(var + 1e-5);
  }
  return out;
}

Matrix param(const LrQFormer& model, const std::string& name) {
  for (const auto& p : model.params())
    if (p.name == name) return oracle::to_matrix(p.tensor);
  throw std::runtime_error("no param " + name);
}

TEST(QFormer, ZeroBlocksReturnQueries) {
  LrQFormer model({.num_queries = 3, .blocks = 0, .dim = 8, .grid_h = 2, .grid_w = 2}, 1);
  Tensor group = Tensor::full({8, 8}, 0.3);
  Tensor out = model.forward(group);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.at(i), model.queries().at(i));
}

TEST(QFormer, GroupNotLongerThanQueriesIsConfigError) {
  LrQFormer model({.num_queries = 4, .blocks = 1, .dim = 4, .grid_h = 1, .grid_w = 4}, 1);
  EXPECT_THROW(model.forward(Tensor::zeros({4, 4})), ConfigError);
  EXPECT_THROW(model.forward(Tensor::zeros({6, 4})), DimensionError);  // not whole images
  EXPECT_THROW(model.forward(Tensor::zeros({8, 5})), DimensionError);
}

TEST(QFormer, HandSizedBlockMatchesStepByStepRecomputation) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    LrQFormer model({.num_queries = 2, .blocks = 1, .dim = 4, .grid_h = 1, .grid_w = 3}, rng());
    Matrix group = oracle::random_matrix(3, 4, rng);
    Matrix memory = group;
    const Matrix pos = oracle::to_matrix(positional_encoding_2d(1, 3, 4));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) memory[i][j] += pos[i][j];
    Matrix q = oracle::to_matrix(model.queries());
    auto w = [&](const char* s) { return param(model, std::string("qformer.block0.") + s); };
    q = residual_norm(q, attend(q, q, w("sa.wq"), w("sa.wk"), w("sa.wv"), w("sa.wo")));
    q = residual_norm(q, attend(q, memory, w("ca.wq"), w("ca.wk"), w("ca.wv"), w("ca.wo")));
    Tensor out = model.forward(oracle::to_tensor(group));
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.at(i * 4 + j), q[i][j], 1e-10);
  }
}

TEST(QFormer, ImageOrderWithinGroupDoesNotMatter) {
  // E_pos is tiled identically per image and attention is order-free over
  // keys, so swapping two member images leaves the prototypes unchanged.
  LrQFormer model({.num_queries = 2, .blocks = 2, .dim = 8, .grid_h = 2, .grid_w = 2}, 5);
  std::mt19937_64 rng(3);
  Matrix first = oracle::random_matrix(4, 8, rng), second = oracle::random_matrix(4, 8, rng);
  Matrix ab = first, ba = second;
  ab.insert(ab.end(), second.begin(), second.end());
  ba.insert(ba.end(), first.begin(), first.end());
  Tensor a = model.forward(oracle::to_tensor(ab)), b = model.forward(oracle::to_tensor(ba));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
  // Moving a position inside one image does change them.
  std::swap(ab[0], ab[3]);
  Tensor c = model.forward(oracle::to_tensor(ab));
  double diff = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff += std::abs(a.at(i) - c.at(i));
  EXPECT_GT(diff, 1e-6);
}

TEST(QFormer, PositionalEncodingLayout) {
  Tensor pe = positional_encoding_2d(2, 3, 8);
  ASSERT_EQ(pe.shape(), (Shape{6, 8}));
  // position (y=1, x=2): first half encodes the row, second the column
  const std::size_t r = 1 * 3 + 2;
  EXPECT_NEAR(pe.at(r * 8 + 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe.at(r * 8 + 1), std::cos(1.0), 1e-15);
  EXPECT_NEAR(pe.at(r * 8 + 4), std::sin(2.0), 1e-15);
  EXPECT_NEAR(pe.at(r * 8 + 5), std::cos(2.0), 1e-15);
  EXPECT_NEAR(pe.at(r * 8 + 2), std::sin(1.0 / 100.0), 1e-15);
  EXPECT_THROW(positional_encoding_2d(2, 2, 6), ConfigError);
}

TEST(QFormer, ParameterCountMatchesFormula) {
  for (std::size_t d : {8u, 16u, 32u}) {
    LrQFormer model({.num_queries = 12, .blocks = 2, .dim = d, .grid_h = 4, .grid_w = 4}, 1);
    EXPECT_EQ(model.param_count(), LrQFormer::param_count_formula(12, d, 2));
    EXPECT_EQ(model.param_count(), 12 * d + 2 * 8 * d * d);
  }
}

TEST(QFormer, ParameterNames) {
  LrQFormer model({.num_queries = 2, .blocks = 2, .dim = 4, .grid_h = 1, .grid_w = 4}, 1);
  EXPECT_EQ(model.params()[0].name, "qformer.queries");
  EXPECT_EQ(model.params()[1].name, "qformer.block0.sa.wq");
  EXPECT_EQ(model.params()[16].name, "qformer.block1.ca.wo");
}

TEST(Similarity, SelfIsOneAndOrthogonalIsZero) {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, -1, 0.5, 2});
  EXPECT_NEAR(prototype_similarity(a, a).item(), 1.0, 1e-12);
  Tensor x = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor y = Tensor::from({2, 2}, {0, 3, 2, 0});
  EXPECT_NEAR(prototype_similarity(x, y).item(), 0.0, 1e-15);
}

TEST(Similarity, MatchesBruteForceAndIsSymmetricAndScaleInvariant) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix a = oracle::random_matrix(12, 8, rng), b = oracle::random_matrix(12, 8, rng);
    Tensor ta = oracle::to_tensor(a), tb = oracle::to_tensor(b);
    const double s = prototype_similarity(ta, tb).item();
    EXPECT_NEAR(s, oracle::set_similarity(a, b), 1e-12);
    EXPECT_EQ(s, prototype_similarity(tb, ta).item());
    EXPECT_NEAR(prototype_similarity(ops::scale(ta, 3.5), ops::scale(tb, 0.2)).item(), s, 1e-12);
  }
}

TEST(Similarity, ZeroRowsInBothSetsAreNumericalError) {
  Tensor a = Tensor::from({2, 2}, {0, 0, 1, 1});
  EXPECT_THROW(prototype_similarity(a, a), NumericalError);
  Tensor b = Tensor::from({2, 2}, {1, 0, 1, 1});
  EXPECT_NO_THROW(prototype_similarity(a, b));
}

TEST(Contrastive, SingleClassIsExactlyZero) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> w{oracle::to_tensor(oracle::random_matrix(3, 4, rng))};
    std::vector<Tensor> n{oracle::to_tensor(oracle::random_matrix(3, 4, rng))};
    EXPECT_EQ(class_contrastive_loss(w, n).item(), 0.0);
  }
}

TEST(Contrastive, FourIdenticalSetsGiveLogThree) {
  Tensor s = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  std::vector<Tensor> w{s, s}, n{s, s};
  // Enumerated: each of the 4 anchors has ratio e / (3e).
  Matrix m = oracle::to_matrix(s);
  const double enumerated = oracle::contrastive({m, m}, {m, m}, false);
  EXPECT_NEAR(enumerated, std::log(3.0), 1e-15);
  EXPECT_NEAR(class_contrastive_loss(w, n).item(), enumerated, 1e-12);
}

TEST(Contrastive, MatchesEnumerationOnRandomSets) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t classes = 2 + trial % 3;
    std::vector<Matrix> wm, nm;
    std::vector<Tensor> wt, nt;
    for (std::size_t c = 0; c < classes; ++c) {
      wm.push_back(oracle::random_matrix(4, 6, rng));
      nm.push_back(oracle::random_matrix(4, 6, rng));
      wt.push_back(oracle::to_tensor(wm.back()));
      nt.push_back(oracle::to_tensor(nm.back()));
    }
    for (bool ex : {false, true}) {
      EXPECT_NEAR(class_contrastive_loss(wt, nt, ex).item(), oracle::contrastive(wm, nm, ex), 1e-10);
    }
  }
}

TEST(Contrastive, MismatchedModalitiesAreDataError) {
  Tensor s = Tensor::from({1, 2}, {1, 2});
  std::vector<Tensor> w{s, s}, n{s};
  EXPECT_THROW(class_contrastive_loss(w, n), DataError);
  std::vector<Tensor> none;
  EXPECT_THROW(class_contrastive_loss(none, none), DataError);
}

TEST(Contrastive, GradientDescentApproachesEnumeratedMinimum) {
  // Two classes of single-query sets in 2-D. At the minimum same-class sets
  // coincide and the classes are antipodal: each anchor sees S_pos = 1 and
  // both other-class sets at -1.
  std::mt19937_64 rng(4);
  std::vector<Tensor> params;
  for (int i = 0; i < 4; ++i) params.push_back(oracle::to_tensor(oracle::random_matrix(1, 2, rng), true));
  std::vector<NamedParam> named;
  for (int i = 0; i < 4; ++i) named.push_back({"s" + std::to_string(i), params[i]});
  AdamState adam({.lr = 0.05, .weight_decay = 0.0});
  const double minimum = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0 * std::exp(-1.0)));
  double previous = 1e9;
  std::size_t increases = 0;
  for (int step = 0; step < 50; ++step) {
    GradTape tape;
    double value;
    {
      TapeScope scope(tape);
      std::vector<Tensor> w{params[0], params[2]}, n{params[1], params[3]};
      Tensor loss = class_contrastive_loss(w, n);
      value = loss.item();
      tape.backward(loss);
    }
    if (value > previous + 1e-12) ++increases;
    previous = value;
    adam.step(named);
  }
  EXPECT_EQ(increases, 0u);
  EXPECT_LT(previous - minimum, 0.05);
  EXPECT_GE(previous, minimum - 1e-12);
}

TEST(Pooled, MeanOfPositions) {
  Tensor g = Tensor::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor p = pooled_prototype(g);
  ASSERT_EQ(p.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(p.at(0), 4.0);
  EXPECT_DOUBLE_EQ(p.at(1), 5.0);
}

}  // namespace
