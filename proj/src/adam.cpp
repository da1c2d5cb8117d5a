#include "meet/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "meet/errors.hpp"

namespace meet {

AdamState AdamState::for_size(std::size_t n, double learning_rate) {
  AdamState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, std::string_view name) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: length mismatch for " + std::string(name));
  }
  if (!(state.beta1 > 0.0 && state.beta1 < 1.0 && state.beta2 > 0.0 && state.beta2 < 1.0 && state.epsilon > 0.0)) {
    throw std::invalid_argument("adam_step: hyperparameters out of range");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericalError("non-finite gradient in " + std::string(name));
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
    params[i] -= state.learning_rate * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
  }
}

Adam::Adam(std::vector<Tensor> params, std::vector<std::string> names, double learning_rate)
    : params_(std::move(params)), names_(std::move(names)) {
  if (names_.size() != params_.size()) throw std::invalid_argument("Adam: one name per parameter required");
  states_.reserve(params_.size());
  for (const auto& p : params_) states_.push_back(AdamState::for_size(p.numel(), learning_rate));
}

void Adam::step(const std::vector<bool>& mask) {
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    Tensor& p = params_[i];
    if (p.has_grad()) {
      adam_step(p.data_mut(), p.grad(), states_[i], names_[i]);
    } else {
      zeros.assign(p.numel(), 0.0);
      adam_step(p.data_mut(), zeros, states_[i], names_[i]);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace meet
