#include "pagkd/dense.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "pagkd/error.hpp"
#include "pagkd/ops.hpp"

namespace pagkd::den {
namespace {

constexpr double kRowSumTolerance = 1e-9;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

}  // namespace

Tensor downsample_guide(const Tensor& images, std::size_t h, std::size_t w) {
  require_rank(images, 4, "guide images");
  const std::size_t n = images.dim(0), ch = images.dim(1), big_h = images.dim(2), big_w = images.dim(3);
  if (h == 0 || w == 0 || big_h % h != 0 || big_w % w != 0) {
    throw DimensionError("guide " + shape_str(images.shape()) + " does not block-average to " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t bh = big_h / h, bw = big_w / w;
  const double inv = 1.0 / static_cast<double>(bh * bw);
  std::vector<double> out(n * ch * h * w, 0.0);
  const auto src = images.data();
  for (std::size_t i = 0; i < n * ch; ++i) {
    for (std::size_t y = 0; y < big_h; ++y) {
      for (std::size_t x = 0; x < big_w; ++x) {
        out[(i * h + y / bh) * w + x / bw] += src[(i * big_h + y) * big_w + x] * inv;
      }
    }
  }
  return Tensor::from({n, ch, h, w}, std::move(out));
}

Tensor refine_cam(const Tensor& cam, const Tensor& guide, const RefineOptions& options) {
  require_rank(cam, 3, "cam");
  if (options.identity || options.iterations == 0) return cam.detach();
  require_rank(guide, 4, "guide");
  const std::size_t n = cam.dim(0), h = cam.dim(1), w = cam.dim(2), ch = guide.dim(1);
  if (guide.dim(0) != n || guide.dim(2) != h || guide.dim(3) != w) {
    throw DimensionError("guide " + shape_str(guide.shape()) + " does not match cam " + shape_str(cam.shape()));
  }
  if (options.sigma_color <= 0.0 || options.sigma_spatial <= 0.0) {
    throw ConfigError("refinement sigmas must be positive");
  }

  // Neighbour weights depend only on the guide, so they are computed once.
  constexpr std::array<std::array<int, 2>, 8> kOffsets{
      {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};
  const std::size_t hw = h * w;
  std::vector<double> weights(n * hw * 8, 0.0);
  const auto g = guide.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        std::array<double, 8> logit{};
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < 8; ++k) {
          const long ny = static_cast<long>(y) + kOffsets[k][0];
          const long nx = static_cast<long>(x) + kOffsets[k][1];
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) {
            logit[k] = -std::numeric_limits<double>::infinity();
            continue;
          }
          double color = 0.0;
          for (std::size_t c = 0; c < ch; ++c) {
            const double diff = g[((i * ch + c) * h + y) * w + x] -
                                g[((i * ch + c) * h + static_cast<std::size_t>(ny)) * w + static_cast<std::size_t>(nx)];
            color += diff * diff;
          }
          const double spatial = std::hypot(kOffsets[k][0], kOffsets[k][1]);
          logit[k] = -(std::sqrt(color) / options.sigma_color + spatial / options.sigma_spatial);
          best = std::max(best, logit[k]);
        }
        double total = 0.0;
        double* wrow = weights.data() + ((i * hw) + y * w + x) * 8;
        for (std::size_t k = 0; k < 8; ++k) {
          wrow[k] = std::isinf(logit[k]) ? 0.0 : std::exp(logit[k] - best);
          total += wrow[k];
        }
        for (std::size_t k = 0; k < 8; ++k) wrow[k] /= total;
      }
    }
  }

  std::vector<double> cur(cam.data().begin(), cam.data().end());
  std::vector<double> next(cur.size());
  for (std::size_t it = 0; it < options.iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double* wrow = weights.data() + ((i * hw) + y * w + x) * 8;
          double v = 0.0;
          for (std::size_t k = 0; k < 8; ++k) {
            if (wrow[k] == 0.0) continue;
            const std::size_t ny = static_cast<std::size_t>(static_cast<long>(y) + kOffsets[k][0]);
            const std::size_t nx = static_cast<std::size_t>(static_cast<long>(x) + kOffsets[k][1]);
            v += wrow[k] * cur[i * hw + ny * w + nx];
          }
          next[i * hw + y * w + x] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    cur.swap(next);
  }
  return Tensor::from(cam.shape(), std::move(cur));
}

double total_variation(const Tensor& cam) {
  require_rank(cam, 3, "cam");
  const std::size_t n = cam.dim(0), h = cam.dim(1), w = cam.dim(2);
  const auto v = cam.data();
  double tv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double here = v[(i * h + y) * w + x];
        if (x + 1 < w) tv += std::abs(here - v[(i * h + y) * w + x + 1]);
        if (y + 1 < h) tv += std::abs(here - v[(i * h + y + 1) * w + x]);
      }
    }
  }
  return tv;
}

std::vector<CamLabel> tri_threshold(std::span<const double> values, double tau1, double tau2) {
  if (!(tau1 < tau2)) {
    throw ConfigError("tri-threshold needs tau1 < tau2, got tau1=" + std::to_string(tau1) +
                      " tau2=" + std::to_string(tau2));
  }
  std::vector<CamLabel> labels(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    labels[i] = v < tau1 ? CamLabel::kBackground : v > tau2 ? CamLabel::kForeground : CamLabel::kAmbiguous;
  }
  return labels;
}

LabelCounts count_labels(std::span<const CamLabel> labels) {
  LabelCounts counts;
  for (auto l : labels) {
    switch (l) {
      case CamLabel::kBackground: ++counts.background; break;
      case CamLabel::kForeground: ++counts.foreground; break;
      case CamLabel::kAmbiguous: ++counts.ambiguous; break;
    }
  }
  return counts;
}

RelationMatrix::RelationMatrix(std::size_t rows, std::size_t cols, std::vector<double> bias, RelationStats stats)
    : rows_(rows), cols_(cols), bias_(std::move(bias)), stats_(stats) {
  if (bias_.size() != rows_ * cols_) throw DimensionError("relation bias size does not match its shape");
}

bool RelationMatrix::row_all_masked(std::size_t r) const {
  for (std::size_t c = 0; c < cols_; ++c) {
    if (bias_[r * cols_ + c] != kMaskedBias) return false;
  }
  return true;
}

RelationMatrix RelationMatrix::transposed() const {
  std::vector<double> t(bias_.size());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) t[c * rows_ + r] = bias_[r * cols_ + c];
  }
  RelationStats s = stats_;
  std::swap(s.fg_frac_dst, s.fg_frac_src);
  s.all_masked_rows = 0;
  RelationMatrix out(cols_, rows_, std::move(t), s);
  for (std::size_t r = 0; r < out.rows(); ++r) out.stats_.all_masked_rows += out.row_all_masked(r) ? 1 : 0;
  return out;
}

RelationMatrix build_relation(std::span<const CamLabel> rows, std::span<const CamLabel> cols) {
  std::vector<double> bias(rows.size() * cols.size(), kMaskedBias);
  std::size_t matched = 0;
  RelationStats stats;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    bool any = false;
    if (rows[r] != CamLabel::kAmbiguous) {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (cols[c] == rows[r]) {
          bias[r * cols.size() + c] = 0.0;
          ++matched;
          any = true;
        }
      }
    }
    if (!any) ++stats.all_masked_rows;
  }
  const auto rc = count_labels(rows);
  const auto cc = count_labels(cols);
  if (!rows.empty()) stats.fg_frac_dst = static_cast<double>(rc.foreground) / static_cast<double>(rows.size());
  if (!cols.empty()) stats.fg_frac_src = static_cast<double>(cc.foreground) / static_cast<double>(cols.size());
  if (!rows.empty() || !cols.empty()) {
    stats.amb_frac = static_cast<double>(rc.ambiguous + cc.ambiguous) / static_cast<double>(rows.size() + cols.size());
  }
  if (!bias.empty()) stats.matched_frac = static_cast<double>(matched) / static_cast<double>(bias.size());
  return RelationMatrix(rows.size(), cols.size(), std::move(bias), stats);
}

void AttentionAudit::check(const Tensor& attention, std::span<const double> bias) {
  const std::size_t r = attention.dim(0), c = attention.dim(1);
  const auto a = attention.data();
  ++matrices;
  for (std::size_t i = 0; i < r; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = a[i * c + j];
      if (!bias.empty() && bias[i * c + j] == kMaskedBias) {
        ++masked_entries;
        if (v != 0.0) ++violations;
      }
      total += v;
    }
    const double err = std::abs(total - 1.0);
    max_row_sum_error = std::max(max_row_sum_error, err);
    if (err > kRowSumTolerance) ++violations;
    ++rows;
  }
}

Srca::Srca(std::size_t dim, std::uint64_t seed) : dim_(dim) {
  if (dim == 0 || dim % 4 != 0) {
    throw ConfigError("relation-guided cross-attention needs d divisible by 4, got " + std::to_string(dim));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  auto make = [&](const char* name, std::size_t cols) {
    std::vector<double> v(dim * cols);
    for (auto& x : v) x = dist(rng);
    Tensor t = Tensor::from({dim, cols}, std::move(v), true);
    t.set_name(name);
    params_.push_back({name, t});
  };
  make("srca.wq", dim / 4);
  make("srca.wk", dim / 4);
  make("srca.wv", dim);
}

std::vector<double> effective_bias(const RelationMatrix& relation) {
  std::vector<double> bias(relation.bias().begin(), relation.bias().end());
  for (std::size_t r = 0; r < relation.rows(); ++r) {
    if (relation.row_all_masked(r)) {
      std::fill(bias.begin() + static_cast<std::ptrdiff_t>(r * relation.cols()),
                bias.begin() + static_cast<std::ptrdiff_t>((r + 1) * relation.cols()), 0.0);
    }
  }
  return bias;
}

Tensor Srca::attention(const Tensor& src, const Tensor& dst, const RelationMatrix* relation,
                       AttentionAudit* audit) const {
  require_rank(src, 2, "source group");
  require_rank(dst, 2, "target group");
  if (src.dim(1) != dim_ || dst.dim(1) != dim_) {
    throw DimensionError("cross-attention expects width " + std::to_string(dim_) + ", got " +
                         shape_str(src.shape()) + " and " + shape_str(dst.shape()));
  }
  std::vector<double> bias;
  if (relation != nullptr) {
    if (relation->rows() != dst.dim(0) || relation->cols() != src.dim(0)) {
      throw DimensionError("relation matrix [" + std::to_string(relation->rows()) + "x" +
                           std::to_string(relation->cols()) + "] does not match target " +
                           shape_str(dst.shape()) + " and source " + shape_str(src.shape()));
    }
    bias = effective_bias(*relation);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_ / 4));
  Tensor q = ops::matmul(dst, wq());
  Tensor k = ops::matmul(src, wk());
  Tensor a = ops::masked_softmax(ops::scale(ops::matmul(q, ops::transpose(k)), scale), bias);
  if (audit != nullptr) audit->check(a, bias);
  return a;
}

Tensor Srca::reconstruct(const Tensor& src, const Tensor& dst, const RelationMatrix* relation,
                         AttentionAudit* audit) const {
  Tensor a = attention(src, dst, relation, audit);
  return ops::matmul(a, ops::matmul(src, wv()));
}

std::size_t Srca::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::size_t Srca::param_count_formula(std::size_t dim) { return 2 * dim * (dim / 4) + dim * dim; }

std::string_view norm_mode_name(NormMode mode) { return mode == NormMode::kMean ? "mean" : "paper"; }

NormMode parse_norm_mode(std::string_view text) {
  if (text == "mean") return NormMode::kMean;
  if (text == "paper") return NormMode::kPaper;
  throw ConfigError("unknown norm_mode '" + std::string(text) + "' (expected mean|paper)");
}

namespace {

Tensor distance_sum(const Tensor& original, const Tensor& rebuilt, const char* what) {
  if (!rebuilt.defined() || original.shape() != rebuilt.shape()) {
    throw DimensionError(std::string(what) + ": reconstruction " +
                         (rebuilt.defined() ? shape_str(rebuilt.shape()) : std::string("<missing>")) +
                         " does not match features " + shape_str(original.shape()));
  }
  return ops::sum(ops::row_norm(ops::sub(original, rebuilt)));
}

}  // namespace

Tensor dense_loss(std::span<const DenseTerms> classes, NormMode mode, bool bidirectional) {
  if (classes.empty()) throw DataError("dense loss needs at least one class");
  const double num_classes = static_cast<double>(classes.size());
  std::vector<Tensor> parts;
  for (const auto& t : classes) {
    const double l_wli = static_cast<double>(t.wli.dim(0));
    const double l_nbi = static_cast<double>(t.nbi.dim(0));
    Tensor fwd = distance_sum(t.wli, t.nbi_to_wli, "NBI->WLI");
    if (mode == NormMode::kMean) {
      parts.push_back(ops::scale(fwd, 1.0 / (2.0 * num_classes * l_wli)));
    } else {
      parts.push_back(ops::scale(fwd, 1.0 / (num_classes * l_wli * l_wli)));
    }
    if (!bidirectional) continue;
    Tensor rev = distance_sum(t.nbi, t.wli_to_nbi, "WLI->NBI");
    if (mode == NormMode::kMean) {
      parts.push_back(ops::scale(rev, 1.0 / (2.0 * num_classes * l_nbi)));
    } else {
      parts.push_back(ops::scale(rev, 1.0 / (num_classes * l_wli * l_wli)));
    }
  }
  return ops::sum(ops::concat(parts));
}

}  // namespace pagkd::den
