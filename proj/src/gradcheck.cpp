#include "meet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace meet {

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  std::vector<bool> saved_flags;
  for (auto& t : inputs) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = f();
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
    t.zero_grad();
  }
  if (!analytic.empty() && !analytic[0].empty()) analytic[0][0] += options.corrupt_analytic;

  GradCheckResult result;
  const double h = options.step;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data_mut();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = f().item();
      values[i] = orig - h;
      const double down = f().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(options.denominator_floor, std::abs(a) + std::abs(numeric));
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.coordinates;
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].set_requires_grad(saved_flags[k]);
    inputs[k].zero_grad();
  }
  return result;
}

}  // namespace meet
