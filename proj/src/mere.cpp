#include "meet/mere.hpp"

#include <cmath>

#include "meet/errors.hpp"

namespace meet {

MereLayer MereLayer::init(const ModelConfig& config, std::uint64_t seed) {
  if (config.k % 2 == 0) throw ConfigError("k", "must be odd for same padding");
  MereLayer layer;
  layer.d_in = config.d_in;
  layer.n_views = config.n_views;
  layer.view_dim = config.view_dim;
  layer.kernel = config.k;
  layer.grouping = config.mere_grouping;
  const std::size_t channels = layer.grouping == MereGrouping::full_width ? config.d_in : 1;
  const double bound = std::sqrt(1.0 / static_cast<double>(channels * config.k));
  Rng rng(seed);
  for (std::size_t g = 0; g < config.n_views; ++g) {
    layer.kernels.push_back(uniform_tensor({config.view_dim, channels, config.k}, bound, rng));
    layer.biases.push_back(Tensor::zeros({config.view_dim}, true));
    layer.gammas.push_back(Tensor::full({config.view_dim}, 1.0, true));
    layer.betas.push_back(Tensor::zeros({config.view_dim}, true));
    layer.norms.emplace_back();
  }
  return layer;
}

void MereLayer::collect(std::vector<NamedParam>& params, std::vector<NamedState>& states, const std::string& prefix) {
  for (std::size_t g = 0; g < n_views; ++g) {
    const std::string p = prefix + "view" + std::to_string(g) + ".";
    params.push_back({p + "kernel", kernels[g], true, ParamGroup::encoder});
    params.push_back({p + "bias", biases[g], false, ParamGroup::encoder});
    params.push_back({p + "bn.gamma", gammas[g], false, ParamGroup::encoder});
    params.push_back({p + "bn.beta", betas[g], false, ParamGroup::encoder});
    states.push_back({p + "bn", &norms[g]});
  }
}

Tensor mere_forward(MereLayer& layer, const Tensor& x, Mode mode) {
  if (x.rank() != 3) throw DimensionError("mere_forward expects B×D_in×S, got " + shape_str(x.shape()));
  if (x.dim(1) != layer.d_in) {
    throw DimensionError("mere_forward: input has " + std::to_string(x.dim(1)) + " features, layer expects " +
                         std::to_string(layer.d_in));
  }
  const std::size_t B = x.dim(0), S = x.dim(2);
  std::vector<Tensor> views;
  views.reserve(layer.n_views);
  for (std::size_t g = 0; g < layer.n_views; ++g) {
    Tensor input = x;
    if (layer.grouping == MereGrouping::per_channel) {
      input = reshape(select(x, 1, layer.channel_of(g)), {B, 1, S});
    }
    Tensor h = conv1d(input, layer.kernels[g], layer.biases[g], Padding::same);
    h = batchnorm1d(h, layer.gammas[g], layer.betas[g], mode, layer.norms[g]);
    views.push_back(gelu(h));  // B×V_d×S
  }
  // B×N_v×V_d×S -> B×N_v×S×V_d
  return permute(stack(views, 1), {0, 1, 3, 2});
}

Tensor mere_bypass(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("mere_bypass expects B×D_in×S, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), D = x.dim(1), S = x.dim(2);
  return reshape(permute(x, {0, 2, 1}), {B, 1, S, D});
}

}  // namespace meet
