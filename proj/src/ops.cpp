#include "pagkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#include "pagkd/error.hpp"
#include "pagkd/simd/kernels.hpp"

namespace pagkd::ops {
namespace {

// Creates the output tensor and, when recording, registers the backward.
// The backward may take (grad) or (grad, output).
template <typename Backward>
Tensor emit(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
            Backward&& backward) {
  const bool rec =
      active_tape() != nullptr &&
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  Tensor out = Tensor::from(std::move(shape), std::move(data), rec);
  if (rec) {
    if constexpr (std::is_invocable_v<Backward, std::span<const double>, const Tensor&>) {
      active_tape()->record(op, std::move(inputs), out,
                            [bw = std::forward<Backward>(backward), out](std::span<const double> g) mutable {
                              bw(g, out);
                            });
    } else {
      active_tape()->record(op, std::move(inputs), out, std::forward<Backward>(backward));
    }
  }
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void accumulate(Tensor t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  auto dst = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

// Unfolds one image [C, H, W] into columns [C*K*K, H*W] with zero padding.
void im2col(const double* img, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t ksize, double* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ksize / 2);
  const std::size_t hw = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < ksize; ++ky) {
      for (std::size_t kx = 0; kx < ksize; ++kx) {
        double* row = cols + ((c * ksize + ky) * ksize + kx) * hw;
        for (std::size_t y = 0; y < height; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          for (std::size_t x = 0; x < width; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
            const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(height) && sx >= 0 &&
                                sx < static_cast<std::ptrdiff_t>(width);
            row[y * width + x] = inside ? img[(c * height + sy) * width + sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t ksize, double* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ksize / 2);
  const std::size_t hw = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < ksize; ++ky) {
      for (std::size_t kx = 0; kx < ksize; ++kx) {
        const double* row = cols + ((c * ksize + ky) * ksize + kx) * hw;
        for (std::size_t y = 0; y < height; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t x = 0; x < width; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) continue;
            img[(c * height + sy) * width + sx] += row[y * width + x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  simd::gemm_nn(m, n, k, a.data(), b.data(), out);
  return emit("matmul", {m, n}, std::move(out), {a, b},
              [a, b, m, n, k](std::span<const double> g) mutable {
                if (a.requires_grad()) simd::gemm_nt(m, k, n, g, b.data(), a.mutable_grad());
                if (b.requires_grad()) simd::gemm_tn(k, n, m, a.data(), g, b.mutable_grad());
              });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  auto src = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return emit("transpose", {c, r}, std::move(out), {a}, [a, r, c](std::span<const double> g) mutable {
    auto dst = a.mutable_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return emit("reshape", std::move(shape), std::move(out), {a},
              [a](std::span<const double> g) { accumulate(a, g); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return emit("add", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    accumulate(a, g);
    accumulate(b, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return emit("sub", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
    accumulate(a, g);
    if (b.requires_grad()) {
      auto dst = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return emit("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      auto dst = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto dst = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return emit("scale", a.shape(), std::move(out), {a}, [a, factor](std::span<const double> g) mutable {
    auto dst = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  });
}

Tensor masked_softmax(const Tensor& logits, std::span<const double> bias) {
  require_rank(logits, 2, "masked_softmax");
  const std::size_t r = logits.dim(0), c = logits.dim(1);
  if (!bias.empty() && bias.size() != r * c) {
    throw DimensionError("masked_softmax: bias holds " + std::to_string(bias.size()) +
                         " entries for logits " + shape_str(logits.shape()));
  }
  auto x = logits.data();
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    const double* bi = bias.empty() ? nullptr : bias.data() + i * c;
    double* yi = out.data() + i * c;
    double mx = 0.0;
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (bi && bi[j] == kMaskedBias) continue;
      const double v = xi[j] + (bi ? bi[j] : 0.0);
      if (!any || v > mx) mx = v;
      any = true;
    }
    if (!any) {
      throw DegenerateRowError("masked_softmax: row " + std::to_string(i) +
                               " is fully masked; apply the all-masked fallback first");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (bi && bi[j] == kMaskedBias) continue;
      yi[j] = std::exp(xi[j] + (bi ? bi[j] : 0.0) - mx);
      total += yi[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < c; ++j) yi[j] *= inv;
  }
  return emit("masked_softmax", {r, c}, std::move(out), {logits},
              [logits, r, c](std::span<const double> g, const Tensor& y) mutable {
                auto dst = logits.mutable_grad();
                auto yv = y.data();
                for (std::size_t i = 0; i < r; ++i) {
                  const double* yi = yv.data() + i * c;
                  const double* gi = g.data() + i * c;
                  double s = 0.0;
                  for (std::size_t j = 0; j < c; ++j) s += yi[j] * gi[j];
                  for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += yi[j] * (gi[j] - s);
                }
              });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k || k % 2 == 0 || bias.dim(0) != cout) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  }
  const std::size_t hw = h * w, ckk = cin * k * k;
  std::vector<double> cols(n * ckk * hw);
  std::vector<double> out(n * cout * hw);
  auto xd = x.data(), wd = weight.data(), bd = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = cols.data() + i * ckk * hw;
    im2col(xd.data() + i * cin * hw, cin, h, w, k, ci);
    double* oi = out.data() + i * cout * hw;
    for (std::size_t co = 0; co < cout; ++co) std::fill(oi + co * hw, oi + (co + 1) * hw, bd[co]);
    simd::active().gemm_nn(cout, hw, ckk, wd.data(), ci, oi);
  }
  return emit("conv2d", {n, cout, h, w}, std::move(out), {x, weight, bias},
              [x, weight, bias, cols = std::move(cols), n, cin, h, w, cout, k, hw,
               ckk](std::span<const double> g) mutable {
                const auto& kt = simd::active();
                std::vector<double> dcols;
                if (x.requires_grad()) dcols.resize(ckk * hw);
                for (std::size_t i = 0; i < n; ++i) {
                  const double* gi = g.data() + i * cout * hw;
                  if (weight.requires_grad()) {
                    kt.gemm_nt(cout, ckk, hw, gi, cols.data() + i * ckk * hw,
                               weight.mutable_grad().data());
                  }
                  if (bias.requires_grad()) {
                    auto db = bias.mutable_grad();
                    for (std::size_t co = 0; co < cout; ++co) {
                      double s = 0.0;
                      for (std::size_t p = 0; p < hw; ++p) s += gi[co * hw + p];
                      db[co] += s;
                    }
                  }
                  if (x.requires_grad()) {
                    std::fill(dcols.begin(), dcols.end(), 0.0);
                    kt.gemm_tn(ckk, hw, cout, weight.data().data(), gi, dcols.data());
                    col2im_add(dcols.data(), cin, h, w, k, x.mutable_grad().data() + i * cin * hw);
                  }
                }
              });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return emit("relu", x.shape(), std::move(out), {x}, [x](std::span<const double> g) mutable {
    auto dst = x.mutable_grad();
    auto xv = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) dst[i] += g[i];
    }
  });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank(x, 4, "avg_pool2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("avg_pool2: spatial size must be even, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(n * c * oh * ow);
  auto xv = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* s = src + 2 * y * w + 2 * xx;
        dst[y * ow + xx] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
  }
  return emit("avg_pool2", {n, c, oh, ow}, std::move(out), {x},
              [x, n, c, h, w, oh, ow](std::span<const double> g) mutable {
                auto dx = x.mutable_grad();
                for (std::size_t p = 0; p < n * c; ++p) {
                  double* d = dx.data() + p * h * w;
                  const double* gp = g.data() + p * oh * ow;
                  for (std::size_t y = 0; y < oh; ++y)
                    for (std::size_t xx = 0; xx < ow; ++xx) {
                      const double v = 0.25 * gp[y * ow + xx];
                      double* s = d + 2 * y * w + 2 * xx;
                      s[0] += v;
                      s[1] += v;
                      s[w] += v;
                      s[w + 1] += v;
                    }
                }
              });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(n * c);
  auto xv = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t q = 0; q < hw; ++q) s += xv[p * hw + q];
    out[p] = s / static_cast<double>(hw);
  }
  return emit("global_avg_pool", {n, c}, std::move(out), {x}, [x, n, c, hw](std::span<const double> g) mutable {
    auto dx = x.mutable_grad();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t q = 0; q < hw; ++q) dx[p * hw + q] += g[p] * inv;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  const std::size_t n = x.dim(0), d = x.dim(1), c = weight.dim(0);
  if (weight.dim(1) != d || bias.dim(0) != c) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = bias.data()[j];
  simd::gemm_nt(n, c, d, x.data(), weight.data(), out);
  return emit("linear", {n, c}, std::move(out), {x, weight, bias},
              [x, weight, bias, n, d, c](std::span<const double> g) mutable {
                if (x.requires_grad()) simd::gemm_nn(n, d, c, g, weight.data(), x.mutable_grad());
                if (weight.requires_grad()) simd::gemm_tn(c, d, n, g, x.data(), weight.mutable_grad());
                if (bias.requires_grad()) {
                  auto db = bias.mutable_grad();
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
                }
              });
}

Tensor layer_norm(const Tensor& x, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  std::vector<double> inv_std(r);
  auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = xv.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xi[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (xi[j] - mu) * inv_std[i];
  }
  return emit("layer_norm", {r, c}, std::move(out), {x},
              [x, r, c, inv_std = std::move(inv_std)](std::span<const double> g, const Tensor& y) mutable {
                auto dx = x.mutable_grad();
                auto yv = y.data();
                const double invc = 1.0 / static_cast<double>(c);
                for (std::size_t i = 0; i < r; ++i) {
                  const double* gi = g.data() + i * c;
                  const double* yi = yv.data() + i * c;
                  double gm = 0.0, gy = 0.0;
                  for (std::size_t j = 0; j < c; ++j) {
                    gm += gi[j];
                    gy += gi[j] * yi[j];
                  }
                  gm *= invc;
                  gy *= invc;
                  for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += inv_std[i] * (gi[j] - gm - yi[j] * gy);
                }
              });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> norms(r);
  std::vector<double> out(r * c);
  auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    norms[i] = std::sqrt(s);
    const double inv = 1.0 / (norms[i] + eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * inv;
  }
  return emit("l2_normalize_rows", {r, c}, std::move(out), {x},
              [x, r, c, eps, norms = std::move(norms)](std::span<const double> g) mutable {
                auto dx = x.mutable_grad();
                auto xv = x.data();
                for (std::size_t i = 0; i < r; ++i) {
                  const double n = norms[i];
                  const double s = n + eps;
                  const double* xi = xv.data() + i * c;
                  const double* gi = g.data() + i * c;
                  double gx = 0.0;
                  for (std::size_t j = 0; j < c; ++j) gx += gi[j] * xi[j];
                  const double k = n > 0.0 ? gx / (n * s * s) : 0.0;
                  for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += gi[j] / s - k * xi[j];
                }
              });
}

Tensor row_norm(const Tensor& x) {
  require_rank(x, 2, "row_norm");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r);
  auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    out[i] = std::sqrt(s);
  }
  return emit("row_norm", {r}, std::move(out), {x}, [x, r, c](std::span<const double> g, const Tensor& y) mutable {
    auto dx = x.mutable_grad();
    auto xv = x.data();
    auto yv = y.data();
    for (std::size_t i = 0; i < r; ++i) {
      if (yv[i] == 0.0) continue;
      const double k = g[i] / yv[i];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += k * xv[i * c + j];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  std::vector<double> probs(n * c);
  std::vector<double> out(n);
  auto xv = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " outside [0," +
                       std::to_string(c) + ")");
    }
    const double* xi = xv.data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(xi[j] - mx);
      total += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= total;
    out[i] = std::log(total) + mx - xi[targets[i]];
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return emit("cross_entropy", {n}, std::move(out), {logits},
              [logits, n, c, probs = std::move(probs), tgt = std::move(tgt)](std::span<const double> g) mutable {
                auto dx = logits.mutable_grad();
                for (std::size_t i = 0; i < n; ++i) {
                  for (std::size_t j = 0; j < c; ++j) {
                    const double onehot = j == tgt[i] ? 1.0 : 0.0;
                    dx[i * c + j] += g[i] * (probs[i * c + j] - onehot);
                  }
                }
              });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return emit("sum", {1}, {s}, {x}, [x](std::span<const double> g) mutable {
    auto dx = x.mutable_grad();
    for (auto& v : dx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return emit("mean", {1}, {s * inv}, {x}, [x, inv](std::span<const double> g) mutable {
    auto dx = x.mutable_grad();
    for (auto& v : dx) v += g[0] * inv;
  });
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         shape_str(x.shape()));
  }
  double s = 0.0;
  auto xv = x.data();
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * xv[i];
  std::vector<double> w(weights.begin(), weights.end());
  return emit("weighted_sum", {1}, {s}, {x}, [x, w = std::move(w)](std::span<const double> g) mutable {
    auto dx = x.mutable_grad();
    for (std::size_t i = 0; i < w.size(); ++i) dx[i] += g[0] * w[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " does not match " + shape_str(shape) +
                           " beyond axis 0");
    }
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return emit("concat", std::move(shape), std::move(out), parts, [parts](std::span<const double> g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      accumulate(p, g.subspan(offset, p.numel()));
      offset += p.numel();
    }
  });
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.dim(0)) {
    throw IndexError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t stride = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> out(x.data().begin() + begin * stride, x.data().begin() + end * stride);
  return emit("slice", std::move(shape), std::move(out), {x}, [x, begin, stride](std::span<const double> g) mutable {
    auto dx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[begin * stride + i] += g[i];
  });
}

Tensor to_positions(const Tensor& x) {
  require_rank(x, 4, "to_positions");
  const std::size_t n = x.dim(0), d = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(n * hw * d);
  auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t p = 0; p < hw; ++p) out[(i * hw + p) * d + c] = xv[(i * d + c) * hw + p];
  return emit("to_positions", {n * hw, d}, std::move(out), {x}, [x, n, d, hw](std::span<const double> g) mutable {
    auto dx = x.mutable_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c)
        for (std::size_t p = 0; p < hw; ++p) dx[(i * d + c) * hw + p] += g[(i * hw + p) * d + c];
  });
}

}  // namespace pagkd::ops
