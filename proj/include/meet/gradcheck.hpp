#pragma once

#include <functional>
#include <vector>

#include "meet/tensor.hpp"

namespace meet {

struct GradCheckOptions {
  double step = 1e-4;
  // Test hook: added to the first analytic gradient entry to simulate a broken backward.
  double corrupt_analytic = 0.0;
  // Keeps exactly-zero gradients (e.g. a bias feeding batch norm) from
  // turning finite-difference round-off into a large relative error.
  double denominator_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Compares backward() against central differences for every coordinate of
// every tensor in `inputs`. `f` must rebuild the scalar from the inputs on
// each call. Per coordinate the error is
//   |analytic - numeric| / max(floor, |analytic| + |numeric|).
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace meet

#include <cstdint>
#include <string>
#include <string_view>

#include "meet/config.hpp"

namespace meet {

struct OpCheck {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

// B=2, S=8, D_in=3, N_v=2, V_d=4 with small widths.
ModelConfig gradcheck_toy_config();

// Checks every differentiable op once, then the composed model loss for the
// full and ablated encoders. `fault_op` names one check whose analytic
// gradient is deliberately corrupted (fault-injection hook).
std::vector<OpCheck> run_gradcheck_suite(const ModelConfig& toy, double tolerance = 1e-4,
                                         std::string_view fault_op = {}, std::uint64_t seed = 7);

}  // namespace meet
