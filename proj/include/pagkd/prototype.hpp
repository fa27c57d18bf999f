#pragma once

// Group-level prototype distillation: shared lesion queries refined against
// each group's features, compared across modalities by a symmetric
// contrastive loss.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pagkd/tensor.hpp"

namespace pagkd::pro {

struct QFormerConfig {
  std::size_t num_queries = 12;
  std::size_t blocks = 2;
  std::size_t dim = 64;
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
};

// Fixed 2-D sinusoidal table [h*w, d]: the first d/2 channels encode the row
// index, the rest the column index, each as interleaved sin/cos pairs.
Tensor positional_encoding_2d(std::size_t h, std::size_t w, std::size_t d);

// Stack of single-head blocks. Each block runs self-attention over the
// queries and then cross-attention from the queries to group + E_pos, each
// followed by a residual connection and a non-affine layer norm:
//   Q' = LN(Q + SA(Q)),  Q'' = LN(Q' + CA(Q', F + E_pos)).
// SA and CA each own W_q, W_k, W_v, W_o in R^{d x d}.
class LrQFormer {
 public:
  LrQFormer(QFormerConfig config, std::uint64_t seed);

  // Refines the shared queries against `group` [L, d]; L must be a multiple
  // of h*w and larger than the number of queries.
  Tensor forward(const Tensor& group) const;

  const QFormerConfig& config() const { return config_; }
  const Tensor& queries() const { return params_.front().tensor; }
  const Tensor& positional() const { return positional_; }
  std::span<NamedParam> params() { return params_; }
  std::span<const NamedParam> params() const { return params_; }
  std::size_t param_count() const;

  // N_q * d + T * 8 * d^2.
  static std::size_t param_count_formula(std::size_t num_queries, std::size_t dim, std::size_t blocks);

 private:
  const Tensor& weight(std::size_t block, std::size_t slot) const;

  QFormerConfig config_;
  std::vector<NamedParam> params_;  // queries first, then 8 matrices per block
  Tensor positional_;
};

// Mean over positions of a group [L, d] -> [1, d]; equals the mean of the
// members' global-average-pooled vectors. Stand-in prototype when the
// query transformer is ablated.
Tensor pooled_prototype(const Tensor& group);

// (1/N_q) * sum_i cos(a_i, b_i) with eps 1e-12 added to each norm. Throws
// NumericalError if a row pair has both norms below eps.
Tensor prototype_similarity(const Tensor& a, const Tensor& b);

// Symmetric contrastive loss over M prototype sets. partner[i] is the
// positive of set i. For each anchor the denominator sums exp(S) over every
// other set (and also drops the positive when `exclude_positive`). The
// result is the mean over anchors of -log(exp(S_pos) / denominator).
Tensor contrastive_loss(std::span<const Tensor> sets, std::span<const std::size_t> partner,
                        bool exclude_positive = false);

// Class-structured form: sets are arranged [WLI_0, NBI_0, WLI_1, NBI_1, ...]
// with each modality the partner of the other, giving -(1/2C) * sum over the
// 2C anchors. Throws DataError if the two lists differ in length.
Tensor class_contrastive_loss(std::span<const Tensor> wli_sets, std::span<const Tensor> nbi_sets,
                              bool exclude_positive = false);

}  // namespace pagkd::pro
