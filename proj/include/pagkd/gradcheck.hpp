#pragma once

// Central finite-difference gradient checking against the tape.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pagkd/tensor.hpp"

namespace pagkd {

struct GradCheckOptions {
  double step = 1e-5;
  // Per-element relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  double tolerance = 1e-4;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
  bool passed = true;
  std::string worst;  // "<input index>[<flat index>]" of the worst element
};

// `loss` must build a scalar from `inputs` using ops; each input should have
// requires_grad set. Inputs are perturbed in place and restored.
GradCheckResult check_gradients(const std::function<Tensor()>& loss, std::span<Tensor> inputs,
                                const GradCheckOptions& options = {});

}  // namespace pagkd
