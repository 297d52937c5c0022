#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hbmcn/tensor.hpp"

namespace hbmcn {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double epsilon = 1e-5;  // central-difference step
  uint64_t seed = 0;
  // Test-harness hook: flip the sign of the analytic conv weight gradient so
  // the checker's failure path can be exercised.
  bool inject_conv_weight_sign_error = false;
};

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
  bool passed(double tol) const { return max_rel_err <= tol; }
};

/// Central-difference oracle: perturbs each listed coordinate of `target` by
/// +/- epsilon, re-evaluates `loss`, and returns the worst
/// |analytic - fd| / max(1, |fd|) against the provided analytic gradients.
/// The oracle only ever calls the forward path.
///
/// When refine_below > 0, a coordinate whose error exceeds it is re-estimated
/// at epsilon/10 and epsilon/100 and the best estimate kept: a +/- epsilon
/// step that straddles a ReLU or max-pool kink produces a spurious mismatch
/// that collapses as the step shrinks, while a wrong analytic gradient stays
/// wrong at every step size.
double finite_diff_max_rel_err(Tensor<double>& target, const std::vector<int64_t>& coords,
                               const std::vector<double>& analytic,
                               const std::function<double()>& loss, double epsilon,
                               double refine_below = 0.0);

/// 64-bit checks for every op plus the composed SE block, bottleneck,
/// SE-Res module, and the joint loss of a full nano-scale model (sampled
/// coordinates for the latter). Deterministic given options.seed.
std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options = {});

bool all_checks_pass(const std::vector<GradCheckResult>& results, double tolerance);

}  // namespace hbmcn
