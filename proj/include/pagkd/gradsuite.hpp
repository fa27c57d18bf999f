#pragma once

// Randomised finite-difference sweep over every differentiable op and both
// distillation heads. Shared by the test suite, the acceptance binary and the
// `gradcheck` CLI command.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pagkd/gradcheck.hpp"

namespace pagkd::gradsuite {

struct CaseReport {
  std::string name;
  std::size_t seeds = 0;
  std::size_t checked = 0;  // gradient elements compared, summed over seeds
  double max_rel_err = 0.0;
  std::uint64_t worst_seed = 0;
  std::string worst;
  bool passed = true;
};

struct SuiteOptions {
  std::size_t seeds = 100;
  std::uint64_t base_seed = 0;
  GradCheckOptions check{};
  // Restrict to cases whose name contains this substring (empty = all).
  std::string filter;
};

// Names of all cases in run order.
std::vector<std::string> case_names();

std::vector<CaseReport> run(const SuiteOptions& options);

}  // namespace pagkd::gradsuite
