#include "pagkd/adam.hpp"

#include <cmath>

#include "pagkd/error.hpp"

namespace pagkd {

void AdamState::step(std::span<NamedParam> params) {
  for (const auto& p : params) {
    if (p.tensor.requires_grad() && !p.tensor.has_grad()) {
      throw OptimizerError("parameter '" + p.name + "' has no gradient; run backward first");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);

  for (auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    auto& mom = moments_[p.name];
    const std::size_t n = p.tensor.numel();
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    } else if (mom.m.size() != n) {
      throw OptimizerError("parameter '" + p.name + "' changed size between steps");
    }
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < n; ++i) {
      mom.m[i] = options_.beta1 * mom.m[i] + (1.0 - options_.beta1) * g[i];
      mom.v[i] = options_.beta2 * mom.v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      w[i] -= options_.lr * (mhat / (std::sqrt(vhat) + options_.eps) + options_.weight_decay * w[i]);
    }
    p.tensor.clear_grad();
  }
}

}  // namespace pagkd
