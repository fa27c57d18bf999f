#include "pagkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pagkd/error.hpp"

namespace pagkd {

GradCheckResult check_gradients(const std::function<Tensor()>& loss, std::span<Tensor> inputs,
                                const GradCheckOptions& options) {
  for (auto& in : inputs) in.clear_grad();
  {
    GradTape tape;
    TapeScope scope(tape);
    Tensor out = loss();
    tape.backward(out);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    analytic.emplace_back(in.grad().begin(), in.grad().end());
    if (analytic.back().empty()) analytic.back().assign(in.numel(), 0.0);
    in.clear_grad();
  }

  GradCheckResult result;
  NoGradScope no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + options.step;
      const double up = loss().item();
      values[i] = orig - options.step;
      const double down = loss().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[t][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      result.max_abs_err = std::max(result.max_abs_err, abs_err);
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst = std::to_string(t) + "[" + std::to_string(i) + "]";
      }
      ++result.checked;
    }
  }
  result.passed = result.max_rel_err < options.tolerance && std::isfinite(result.max_rel_err);
  return result;
}

}  // namespace pagkd
