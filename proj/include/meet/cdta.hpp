#pragma once

#include <cstdint>
#include <vector>

#include "meet/config.hpp"
#include "meet/param.hpp"

namespace meet {

struct ViewEncoding {
  Tensor c_long;   // B×F_l×⌊S/p⌋
  Tensor c_short;  // B×F_s
};

struct FusedRepresentation {
  Tensor attended;  // B×(N_v·F_s); the pooled B×(N_v·V_d) input for the bypass
  Tensor z;         // B×D_proj
};

// Cascaded long/short temporal convolutions shared by all views, self-attention
// across the view tokens, and a linear fusion to D_proj.
struct CdtaLayer {
  std::size_t n_views = 0;
  std::size_t view_dim = 0;
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  std::size_t pool_stride = 0;
  std::size_t f_long = 0;
  std::size_t f_short = 0;
  std::size_t heads = 0;
  std::size_t d_proj = 0;

  Tensor long_w, long_b;    // F_l×V_d×k1
  Tensor short_w, short_b;  // F_s×F_l×k2
  Tensor wq, wk, wv;        // F_s×F_s
  Tensor fuse_w, fuse_b;    // (N_v·F_s)×D_proj

  // Rejects k2 ≥ k1, heads not dividing F_s, even kernels.
  static CdtaLayer init(std::size_t n_views, std::size_t view_dim, const ModelConfig& config, Rng& rng);

  void collect(std::vector<NamedParam>& params, const std::string& prefix);
};

// view: B×S×V_d.
ViewEncoding cdta_encode_view(const CdtaLayer& layer, const Tensor& view);

// shorts: N_v tensors of B×F_s -> B×N_v×F_s (attention over views plus residual).
Tensor cdta_attend(const CdtaLayer& layer, const std::vector<Tensor>& shorts,
                   std::vector<double>* probs = nullptr);

// attended: B×N_v×F_s, flattened view-major.
FusedRepresentation cdta_fuse(const CdtaLayer& layer, const Tensor& attended);

// Full encode → attend → fuse over B×N_v×S×V_d views.
FusedRepresentation cdta_forward(const CdtaLayer& layer, const Tensor& views);

// Time-mean per view, flattened, one linear map to D_proj.
struct CdtaBypass {
  Tensor w, b;  // (N_v·V_d)×D_proj
  static CdtaBypass init(std::size_t n_views, std::size_t view_dim, std::size_t d_proj, Rng& rng);
  void collect(std::vector<NamedParam>& params, const std::string& prefix);
};

FusedRepresentation cdta_bypass(const CdtaBypass& bypass, const Tensor& views);

}  // namespace meet
