#include "meet/cdta.hpp"

#include <cmath>

#include "meet/errors.hpp"

namespace meet {

CdtaLayer CdtaLayer::init(std::size_t n_views, std::size_t view_dim, const ModelConfig& config, Rng& rng) {
  if (config.k1 % 2 == 0) throw ConfigError("k1", "must be odd for same padding");
  if (config.k2 % 2 == 0) throw ConfigError("k2", "must be odd for same padding");
  if (!(config.k2 < config.k1)) throw ConfigError("k2", "short kernel must be smaller than long kernel k1");
  if (config.heads == 0 || config.f_short % config.heads != 0) throw ConfigError("heads", "must divide f_short");
  CdtaLayer l;
  l.n_views = n_views;
  l.view_dim = view_dim;
  l.k1 = config.k1;
  l.k2 = config.k2;
  l.pool_stride = config.pool_stride;
  l.f_long = config.f_long;
  l.f_short = config.f_short;
  l.heads = config.heads;
  l.d_proj = config.d_proj;
  auto fan = [](std::size_t n) { return std::sqrt(1.0 / static_cast<double>(n)); };
  l.long_w = uniform_tensor({l.f_long, view_dim, l.k1}, fan(view_dim * l.k1), rng);
  l.long_b = Tensor::zeros({l.f_long}, true);
  l.short_w = uniform_tensor({l.f_short, l.f_long, l.k2}, fan(l.f_long * l.k2), rng);
  l.short_b = Tensor::zeros({l.f_short}, true);
  l.wq = uniform_tensor({l.f_short, l.f_short}, fan(l.f_short), rng);
  l.wk = uniform_tensor({l.f_short, l.f_short}, fan(l.f_short), rng);
  l.wv = uniform_tensor({l.f_short, l.f_short}, fan(l.f_short), rng);
  l.fuse_w = uniform_tensor({n_views * l.f_short, l.d_proj}, fan(n_views * l.f_short), rng);
  l.fuse_b = Tensor::zeros({l.d_proj}, true);
  return l;
}

void CdtaLayer::collect(std::vector<NamedParam>& params, const std::string& prefix) {
  params.push_back({prefix + "long.kernel", long_w, true, ParamGroup::encoder});
  params.push_back({prefix + "long.bias", long_b, false, ParamGroup::encoder});
  params.push_back({prefix + "short.kernel", short_w, true, ParamGroup::encoder});
  params.push_back({prefix + "short.bias", short_b, false, ParamGroup::encoder});
  params.push_back({prefix + "attn.wq", wq, true, ParamGroup::encoder});
  params.push_back({prefix + "attn.wk", wk, true, ParamGroup::encoder});
  params.push_back({prefix + "attn.wv", wv, true, ParamGroup::encoder});
  params.push_back({prefix + "fuse.weight", fuse_w, true, ParamGroup::encoder});
  params.push_back({prefix + "fuse.bias", fuse_b, false, ParamGroup::encoder});
}

ViewEncoding cdta_encode_view(const CdtaLayer& layer, const Tensor& view) {
  if (view.rank() != 3 || view.dim(2) != layer.view_dim) {
    throw DimensionError("cdta_encode_view expects B×S×" + std::to_string(layer.view_dim) + ", got " +
                         shape_str(view.shape()));
  }
  if (view.dim(1) < layer.pool_stride) throw DimensionError("sequence shorter than pool stride");
  Tensor h = permute(view, {0, 2, 1});  // B×V_d×S
  Tensor c_long = maxpool1d(gelu(conv1d(h, layer.long_w, layer.long_b, Padding::same)), layer.pool_stride,
                            layer.pool_stride);
  Tensor c_short = adaptive_avg_pool(gelu(conv1d(c_long, layer.short_w, layer.short_b, Padding::same)));
  return {c_long, c_short};
}

Tensor cdta_attend(const CdtaLayer& layer, const std::vector<Tensor>& shorts, std::vector<double>* probs) {
  if (shorts.size() != layer.n_views) {
    throw DimensionError("cdta_attend: expected " + std::to_string(layer.n_views) + " views, got " +
                         std::to_string(shorts.size()));
  }
  for (const auto& s : shorts) {
    if (!s.defined()) throw DimensionError("cdta_attend: missing view");
  }
  Tensor tokens = stack(shorts, 1);  // B×N_v×F_s
  return add(tokens, multihead_self_attention(tokens, layer.wq, layer.wk, layer.wv, layer.heads, probs));
}

FusedRepresentation cdta_fuse(const CdtaLayer& layer, const Tensor& attended) {
  if (attended.rank() != 3 || attended.dim(1) * attended.dim(2) != layer.fuse_w.dim(0)) {
    throw DimensionError("cdta_fuse: width of " + shape_str(attended.shape()) + " does not match fusion weights " +
                         shape_str(layer.fuse_w.shape()));
  }
  const std::size_t B = attended.dim(0);
  Tensor a = reshape(attended, {B, attended.dim(1) * attended.dim(2)});
  return {a, linear(a, layer.fuse_w, layer.fuse_b)};
}

FusedRepresentation cdta_forward(const CdtaLayer& layer, const Tensor& views) {
  if (views.rank() != 4 || views.dim(1) != layer.n_views) {
    throw DimensionError("cdta_forward expects B×" + std::to_string(layer.n_views) + "×S×V_d, got " +
                         shape_str(views.shape()));
  }
  std::vector<Tensor> shorts;
  shorts.reserve(layer.n_views);
  for (std::size_t i = 0; i < layer.n_views; ++i) {
    shorts.push_back(cdta_encode_view(layer, select(views, 1, i)).c_short);
  }
  return cdta_fuse(layer, cdta_attend(layer, shorts));
}

CdtaBypass CdtaBypass::init(std::size_t n_views, std::size_t view_dim, std::size_t d_proj, Rng& rng) {
  CdtaBypass b;
  b.w = uniform_tensor({n_views * view_dim, d_proj}, std::sqrt(1.0 / static_cast<double>(n_views * view_dim)), rng);
  b.b = Tensor::zeros({d_proj}, true);
  return b;
}

void CdtaBypass::collect(std::vector<NamedParam>& params, const std::string& prefix) {
  params.push_back({prefix + "weight", w, true, ParamGroup::encoder});
  params.push_back({prefix + "bias", b, false, ParamGroup::encoder});
}

FusedRepresentation cdta_bypass(const CdtaBypass& bypass, const Tensor& views) {
  if (views.rank() != 4) throw DimensionError("cdta_bypass expects B×N_v×S×V_d, got " + shape_str(views.shape()));
  const std::size_t B = views.dim(0);
  Tensor pooled = reshape(mean_axis(views, 2), {B, views.dim(1) * views.dim(3)});
  return {pooled, linear(pooled, bypass.w, bypass.b)};
}

}  // namespace meet
