#pragma once

// Group-level dense distillation: CAM refinement and tri-thresholding,
// cross-modal relation masks, relation-guided cross-attention and the
// bidirectional consistency loss.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "pagkd/tensor.hpp"

namespace pagkd::den {

struct RefineOptions {
  std::size_t iterations = 10;
  double sigma_color = 0.1;
  double sigma_spatial = 1.0;
  bool identity = false;  // skip refinement entirely
};

// Guide images [N, ch, H, W] block-averaged to [N, ch, h, w].
Tensor downsample_guide(const Tensor& images, std::size_t h, std::size_t w);

// Local affinity smoothing of normalised CAMs [N, h, w]. Each iteration
// replaces every pixel with a weighted average of its 8 neighbours (fewer at
// borders); the weights are a softmax over neighbours of
// -(|colour difference| / sigma_color + |offset| / sigma_spatial), taken from
// `guide` [N, ch, h, w]. Output is clamped to [0, 1] after each iteration.
Tensor refine_cam(const Tensor& cam, const Tensor& guide, const RefineOptions& options = {});

// Sum of absolute differences between horizontally and vertically adjacent
// pixels, over all images.
double total_variation(const Tensor& cam);

enum class CamLabel : std::uint8_t { kBackground = 0, kForeground = 1, kAmbiguous = 2 };

// v < tau1 -> background, v > tau2 -> foreground, otherwise ambiguous.
// Throws ConfigError unless tau1 < tau2.
std::vector<CamLabel> tri_threshold(std::span<const double> values, double tau1, double tau2);

struct LabelCounts {
  std::size_t background = 0;
  std::size_t foreground = 0;
  std::size_t ambiguous = 0;
};
LabelCounts count_labels(std::span<const CamLabel> labels);

struct RelationStats {
  double fg_frac_dst = 0.0;
  double fg_frac_src = 0.0;
  double amb_frac = 0.0;      // ambiguous positions over both sides
  double matched_frac = 0.0;  // unmasked entries over all entries
  std::size_t all_masked_rows = 0;
};

// Additive bias [rows x cols]: 0 where both positions carry the same
// confident label, kMaskedBias elsewhere. Rows index the attending side.
class RelationMatrix {
 public:
  RelationMatrix() = default;
  RelationMatrix(std::size_t rows, std::size_t cols, std::vector<double> bias, RelationStats stats);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> bias() const { return bias_; }
  double at(std::size_t r, std::size_t c) const { return bias_.at(r * cols_ + c); }
  bool row_all_masked(std::size_t r) const;
  const RelationStats& stats() const { return stats_; }

  RelationMatrix transposed() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> bias_;
  RelationStats stats_;
};

RelationMatrix build_relation(std::span<const CamLabel> rows, std::span<const CamLabel> cols);

// Violations seen while checking attention matrices against their masks.
struct AttentionAudit {
  std::size_t matrices = 0;
  std::size_t rows = 0;
  std::size_t masked_entries = 0;
  std::size_t violations = 0;
  double max_row_sum_error = 0.0;

  void check(const Tensor& attention, std::span<const double> bias);
};

// Relation-guided cross-attention with one weight set shared by both
// directions: W_q, W_k [d x d/4], W_v [d x d].
class Srca {
 public:
  Srca(std::size_t dim, std::uint64_t seed);

  // A = softmax(R + (F_dst W_q)(F_src W_k)^T / sqrt(d/4)). Rows of R that are
  // fully masked fall back to a zero bias. `relation` may be null (plain
  // cross-attention); otherwise it must be [L_dst x L_src].
  Tensor attention(const Tensor& src, const Tensor& dst, const RelationMatrix* relation,
                   AttentionAudit* audit = nullptr) const;

  // A (F_src W_v) -> [L_dst, d]: src features rebuilt in dst coordinates.
  Tensor reconstruct(const Tensor& src, const Tensor& dst, const RelationMatrix* relation,
                     AttentionAudit* audit = nullptr) const;

  std::size_t dim() const { return dim_; }
  const Tensor& wq() const { return params_[0].tensor; }
  const Tensor& wk() const { return params_[1].tensor; }
  const Tensor& wv() const { return params_[2].tensor; }
  std::span<NamedParam> params() { return params_; }
  std::span<const NamedParam> params() const { return params_; }
  std::size_t param_count() const;

  // 2 * d * (d/4) + d^2.
  static std::size_t param_count_formula(std::size_t dim);

 private:
  std::size_t dim_;
  std::vector<NamedParam> params_;
};

// Effective bias after the all-masked-row fallback.
std::vector<double> effective_bias(const RelationMatrix& relation);

enum class NormMode { kMean, kPaper };
std::string_view norm_mode_name(NormMode mode);
NormMode parse_norm_mode(std::string_view text);

// One class's features and reconstructions. `wli_to_nbi` may be left
// undefined when only the WLI-side term is used.
struct DenseTerms {
  Tensor wli;         // [L_wli, d]
  Tensor nbi;         // [L_nbi, d]
  Tensor nbi_to_wli;  // [L_wli, d]
  Tensor wli_to_nbi;  // [L_nbi, d]
};

// mean:  (1/2C) sum_c ( mean_p |f_p^W - f_p^{N->W}| + mean_q |f_q^N - f_q^{W->N}| )
// paper: sum_c 1/(C L_c^2) ( sum_p ... + sum_q ... ), L_c the WLI-side length.
// With `bidirectional` false the second term is dropped; the prefactors stay.
Tensor dense_loss(std::span<const DenseTerms> classes, NormMode mode, bool bidirectional = true);

}  // namespace pagkd::den
