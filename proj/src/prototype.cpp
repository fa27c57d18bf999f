#include "pagkd/prototype.hpp"

#include <cmath>
#include <random>
#include <string>

#include "pagkd/error.hpp"
#include "pagkd/ops.hpp"

namespace pagkd::pro {
namespace {

constexpr std::size_t kMatricesPerBlock = 8;
constexpr const char* kSlotNames[kMatricesPerBlock] = {"sa.wq", "sa.wk", "sa.wv", "sa.wo",
                                                       "ca.wq", "ca.wk", "ca.wv", "ca.wo"};
constexpr double kNormEps = 1e-12;
// Small query init keeps early prototypes driven by the group rather than the queries.
constexpr double kQueryInitStd = 0.02;

Tensor attention(const Tensor& queries, const Tensor& keys_values, const Tensor& wq, const Tensor& wk,
                 const Tensor& wv, const Tensor& wo) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(queries.dim(1)));
  Tensor q = ops::matmul(queries, wq);
  Tensor k = ops::matmul(keys_values, wk);
  Tensor v = ops::matmul(keys_values, wv);
  Tensor logits = ops::scale(ops::matmul(q, ops::transpose(k)), scale);
  Tensor attn = ops::masked_softmax(logits);
  return ops::matmul(ops::matmul(attn, v), wo);
}

}  // namespace

Tensor positional_encoding_2d(std::size_t h, std::size_t w, std::size_t d) {
  if (d % 4 != 0) throw ConfigError("positional encoding needs d divisible by 4, got " + std::to_string(d));
  const std::size_t half = d / 2;
  std::vector<double> table(h * w * d);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* row = table.data() + (y * w + x) * d;
      for (std::size_t i = 0; i < half / 2; ++i) {
        const double freq = 1.0 / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(half));
        row[2 * i] = std::sin(static_cast<double>(y) * freq);
        row[2 * i + 1] = std::cos(static_cast<double>(y) * freq);
        row[half + 2 * i] = std::sin(static_cast<double>(x) * freq);
        row[half + 2 * i + 1] = std::cos(static_cast<double>(x) * freq);
      }
    }
  }
  return Tensor::from({h * w, d}, std::move(table));
}

LrQFormer::LrQFormer(QFormerConfig config, std::uint64_t seed) : config_(config) {
  if (config_.num_queries == 0 || config_.dim == 0) throw ConfigError("query transformer needs N_q >= 1 and d >= 1");
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.dim;
  std::normal_distribution<double> qdist(0.0, kQueryInitStd);
  std::vector<double> q(config_.num_queries * d);
  for (auto& v : q) v = qdist(rng);
  params_.push_back({"qformer.queries", Tensor::from({config_.num_queries, d}, std::move(q), true)});
  std::normal_distribution<double> wdist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (std::size_t t = 0; t < config_.blocks; ++t) {
    for (const char* slot : kSlotNames) {
      std::vector<double> w(d * d);
      for (auto& v : w) v = wdist(rng);
      params_.push_back({"qformer.block" + std::to_string(t) + "." + slot, Tensor::from({d, d}, std::move(w), true)});
    }
  }
  for (auto& p : params_) p.tensor.set_name(p.name);
  positional_ = positional_encoding_2d(config_.grid_h, config_.grid_w, d);
}

const Tensor& LrQFormer::weight(std::size_t block, std::size_t slot) const {
  return params_[1 + block * kMatricesPerBlock + slot].tensor;
}

Tensor LrQFormer::forward(const Tensor& group) const {
  const std::size_t hw = config_.grid_h * config_.grid_w;
  if (group.rank() != 2 || group.dim(1) != config_.dim) {
    throw DimensionError("query transformer expects [L," + std::to_string(config_.dim) + "] group, got " +
                         shape_str(group.shape()));
  }
  const std::size_t length = group.dim(0);
  if (length <= config_.num_queries) {
    throw ConfigError("group length L=" + std::to_string(length) + " must exceed the " +
                      std::to_string(config_.num_queries) + " lesion queries");
  }
  if (length % hw != 0) {
    throw DimensionError("group length " + std::to_string(length) + " is not a whole number of " +
                         std::to_string(hw) + "-position images");
  }
  Tensor q = queries();
  if (config_.blocks == 0) return q;

  std::vector<double> tiled;
  tiled.reserve(length * config_.dim);
  for (std::size_t i = 0; i < length / hw; ++i) {
    tiled.insert(tiled.end(), positional_.data().begin(), positional_.data().end());
  }
  const Tensor memory = ops::add(group, Tensor::from({length, config_.dim}, std::move(tiled)));

  for (std::size_t t = 0; t < config_.blocks; ++t) {
    q = ops::layer_norm(ops::add(q, attention(q, q, weight(t, 0), weight(t, 1), weight(t, 2), weight(t, 3))));
    q = ops::layer_norm(
        ops::add(q, attention(q, memory, weight(t, 4), weight(t, 5), weight(t, 6), weight(t, 7))));
  }
  return q;
}

std::size_t LrQFormer::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::size_t LrQFormer::param_count_formula(std::size_t num_queries, std::size_t dim, std::size_t blocks) {
  return num_queries * dim + blocks * kMatricesPerBlock * dim * dim;
}

Tensor pooled_prototype(const Tensor& group) {
  if (group.rank() != 2) throw DimensionError("pooled_prototype expects [L,d], got " + shape_str(group.shape()));
  const std::size_t length = group.dim(0);
  Tensor avg = Tensor::full({1, length}, 1.0 / static_cast<double>(length));
  return ops::matmul(avg, group);
}

Tensor prototype_similarity(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError("prototype_similarity: query sets " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
  const std::size_t n = a.dim(0), d = a.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      na += a.at(i * d + j) * a.at(i * d + j);
      nb += b.at(i * d + j) * b.at(i * d + j);
    }
    if (std::sqrt(na) < kNormEps && std::sqrt(nb) < kNormEps) {
      throw NumericalError("prototype_similarity: query " + std::to_string(i) + " has zero norm in both sets");
    }
  }
  Tensor prod = ops::mul(ops::l2_normalize_rows(a, kNormEps), ops::l2_normalize_rows(b, kNormEps));
  return ops::scale(ops::sum(prod), 1.0 / static_cast<double>(n));
}

Tensor contrastive_loss(std::span<const Tensor> sets, std::span<const std::size_t> partner, bool exclude_positive) {
  const std::size_t m = sets.size();
  if (m < 2 || partner.size() != m) {
    throw DataError("contrastive loss needs at least two sets and one partner per set");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (partner[i] >= m || partner[i] == i) {
      throw DataError("set " + std::to_string(i) + " has invalid partner " + std::to_string(partner[i]));
    }
  }
  // Normalise each set once and reuse it for every pair; S is symmetric, so
  // each unordered pair is evaluated once.
  std::vector<Tensor> unit;
  unit.reserve(m);
  for (const auto& s : sets) {
    if (s.shape() != sets[0].shape()) {
      throw DimensionError("contrastive loss: set shapes differ, " + shape_str(s.shape()) + " vs " +
                           shape_str(sets[0].shape()));
    }
    unit.push_back(ops::l2_normalize_rows(s, kNormEps));
  }
  const double inv_rows = 1.0 / static_cast<double>(sets[0].dim(0));
  std::vector<std::vector<Tensor>> sim(m, std::vector<Tensor>(m));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      sim[i][j] = ops::scale(ops::sum(ops::mul(unit[i], unit[j])), inv_rows);
      sim[j][i] = sim[i][j];
    }
  }

  std::vector<Tensor> per_anchor;
  per_anchor.reserve(m);
  for (std::size_t a = 0; a < m; ++a) {
    std::vector<Tensor> row;
    std::size_t target = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == a) continue;
      if (exclude_positive && j == partner[a]) continue;
      if (j == partner[a]) target = row.size();
      row.push_back(sim[a][j]);
    }
    if (exclude_positive) {
      if (row.empty()) throw DataError("no negatives left for anchor " + std::to_string(a));
      // -S_pos + log sum_{negatives} exp(S)
      Tensor logits = ops::reshape(ops::concat(row), {1, row.size()});
      const std::size_t zero = 0;
      Tensor lse = ops::add(ops::cross_entropy(logits, std::span<const std::size_t>(&zero, 1)), row[0]);
      per_anchor.push_back(ops::sub(lse, sim[a][partner[a]]));
    } else {
      Tensor logits = ops::reshape(ops::concat(row), {1, row.size()});
      per_anchor.push_back(ops::cross_entropy(logits, std::span<const std::size_t>(&target, 1)));
    }
  }
  return ops::mean(ops::concat(per_anchor));
}

Tensor class_contrastive_loss(std::span<const Tensor> wli_sets, std::span<const Tensor> nbi_sets,
                              bool exclude_positive) {
  if (wli_sets.size() != nbi_sets.size() || wli_sets.empty()) {
    throw DataError("every class needs both a WLI and an NBI prototype set (got " +
                    std::to_string(wli_sets.size()) + " WLI, " + std::to_string(nbi_sets.size()) + " NBI)");
  }
  std::vector<Tensor> sets;
  std::vector<std::size_t> partner;
  for (std::size_t c = 0; c < wli_sets.size(); ++c) {
    sets.push_back(wli_sets[c]);
    sets.push_back(nbi_sets[c]);
    partner.push_back(2 * c + 1);
    partner.push_back(2 * c);
  }
  return contrastive_loss(sets, partner, exclude_positive);
}

}  // namespace pagkd::pro
