#pragma once

// Differentiable ops. Each op records itself on the active GradTape when one
// is in scope and at least one input requires grad; otherwise it only
// computes values. Every op here has a finite-difference test.

#include <cstddef>
#include <span>
#include <vector>

#include "pagkd/tensor.hpp"

namespace pagkd {

// Additive-mask value meaning "exclude this entry". Kept finite so masked
// arithmetic never produces NaN; masked_softmax compares against it exactly.
inline constexpr double kMaskedBias = -1.0e30;

}  // namespace pagkd

namespace pagkd::ops {

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Row-wise softmax of logits + bias over a 2-D tensor. Entries whose bias
// equals kMaskedBias get exactly zero probability; any other bias value is
// added to the logit. An empty bias means no mask. Throws DegenerateRowError
// for a row with no unmasked entry.
Tensor masked_softmax(const Tensor& logits, std::span<const double> bias = {});

// x [N, Cin, H, W], weight [Cout, Cin, K, K] with K odd, bias [Cout].
// Stride 1, zero padding K/2 ("same" output size).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor relu(const Tensor& x);
// 2x2 average pooling with stride 2; H and W must be even.
Tensor avg_pool2(const Tensor& x);
// [N, C, H, W] -> [N, C]
Tensor global_avg_pool(const Tensor& x);
// x [N x d], weight [C x d], bias [C] -> x * weight^T + bias
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Per-row standardisation over the last axis of a 2-D tensor (no affine).
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
// Each row divided by (its Euclidean norm + eps).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);
// [r x c] -> [r], Euclidean norm of each row. The gradient at a zero row is 0.
Tensor row_norm(const Tensor& x);

// logits [N x C] -> per-sample loss [N].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// sum_i weights[i] * x[i] -> [1]
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

// Concatenation and slicing along axis 0.
Tensor concat(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, std::size_t begin, std::size_t end);

// [N, d, h, w] -> [N*h*w, d]; row i*h*w + p holds image i at spatial index p.
Tensor to_positions(const Tensor& x);

}  // namespace pagkd::ops
