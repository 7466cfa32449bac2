#pragma once

#include "wr2l/core.hpp"

#include <functional>
#include <string>
#include <vector>

namespace wr2l {

struct SelftestCase {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

using ClosedFormFn = std::function<ClosedForm(const Vec&, const Mat&,
                                              const ParamVector&, double)>;

struct SelftestOptions {
  // Reduced budgets: fewer fuzz cases and Monte-Carlo samples.
  bool quick = false;
  // Minimizer under test; swapping it lets a mutated version be checked.
  ClosedFormFn closed_form;
};

// Oracle suite: finite-difference checks of the PPO and zero-order
// gradients, exact OT against brute-force enumeration, the 1-D fast path,
// and closed-form/KKT fuzzing. Never throws; failures land in the cases.
std::vector<SelftestCase> run_selftest(const SelftestOptions& options = {});

}  // namespace wr2l
