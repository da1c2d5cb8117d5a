#pragma once

#include <cstdint>
#include <vector>

#include "meet/config.hpp"
#include "meet/param.hpp"

namespace meet {

// Multi-endogenous-view generator: N_v independent conv → batchnorm → GELU
// branches over the input features, stacked along a view axis.
struct MereLayer {
  std::size_t d_in = 0;
  std::size_t n_views = 0;
  std::size_t view_dim = 0;
  std::size_t kernel = 0;
  MereGrouping grouping = MereGrouping::full_width;

  std::vector<Tensor> kernels;  // n_views × (view_dim × C × kernel); C = d_in, or 1 per channel group
  std::vector<Tensor> biases;
  std::vector<Tensor> gammas;
  std::vector<Tensor> betas;
  std::vector<BatchNormState> norms;

  // Kernels ~ U(±√(1/(C·k))), biases zero, gamma one, beta zero.
  static MereLayer init(const ModelConfig& config, std::uint64_t seed);

  // The input channel view g reads under per-channel grouping.
  std::size_t channel_of(std::size_t view) const { return view % d_in; }

  void collect(std::vector<NamedParam>& params, std::vector<NamedState>& states, const std::string& prefix);
};

// x: B×D_in×S  ->  B×N_v×S×V_d.
Tensor mere_forward(MereLayer& layer, const Tensor& x, Mode mode);

// Raw features as one view: B×D_in×S -> B×1×S×D_in.
Tensor mere_bypass(const Tensor& x);

}  // namespace meet
