#pragma once

#include <string>
#include <vector>

#include "meet/ops.hpp"
#include "meet/rng.hpp"
#include "meet/tensor.hpp"

namespace meet {

// Which optimizer phase may touch a parameter.
enum class ParamGroup { encoder, decoder, head };

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool is_weight;  // counted by the l2 penalty (kernels and matrices, not biases or norm affine)
  ParamGroup group;
};

struct NamedState {
  std::string name;
  BatchNormState* state;
};

// Uniform on ±bound, drawn in row-major order.
inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace meet
