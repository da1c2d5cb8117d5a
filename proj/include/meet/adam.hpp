#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "meet/tensor.hpp"

namespace meet {

struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_size(std::size_t n, double learning_rate);
};

// One bias-corrected Adam update in place. Throws NumericalError naming
// `name` when any gradient entry is non-finite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::string_view name = "parameter");

// Per-tensor Adam states keyed by position in the tensor list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, std::vector<std::string> names, double learning_rate);

  // Updates the tensors selected by `mask` (all when empty) using their grads;
  // tensors without a grad are treated as having zero gradient.
  void step(const std::vector<bool>& mask = {});
  void zero_grad();

  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::vector<AdamState> states_;
};

}  // namespace meet
