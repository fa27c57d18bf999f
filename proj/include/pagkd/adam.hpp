#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pagkd/tensor.hpp"

namespace pagkd {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-8;  // decoupled (applied to the weights, not the gradient)
};

// Per-parameter moment buffers keyed by parameter name.
class AdamState {
 public:
  explicit AdamState(AdamOptions options = {}) : options_(options) {}

  const AdamOptions& options() const { return options_; }
  std::size_t step_count() const { return step_; }

  // One update over every parameter that requires grad; frozen parameters are
  // skipped untouched. Gradients are cleared afterwards. Throws
  // OptimizerError if a trainable parameter has no gradient.
  void step(std::span<NamedParam> params);

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamOptions options_;
  std::size_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace pagkd
