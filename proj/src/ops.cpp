#include "meet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "meet/errors.hpp"

namespace meet {

namespace {

using detail::Node;

// Parent gradient buffer, or nullptr when that parent is not tracked.
std::vector<double>* grad_of(Node& out, std::size_t i) {
  Node& p = *out.parents[i];
  if (!p.requires_grad) return nullptr;
  return &p.ensure_grad();
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = grad_of(n, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    const auto& x = n.parents[0]->data;
    const auto& y = n.parents[1]->data;
    if (auto* g = grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * y[i];
    }
    if (auto* g = grad_of(n, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](Node& n) {
    if (auto* g = grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * n.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result({1}, {s}, {a}, [](Node& n) {
    if (auto* g = grad_of(n, 0)) {
      for (auto& v : *g) v += n.grad[0];
    }
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("mean_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t t = 0; t < len; ++t) {
      const double* src = d.data() + (o * len + t) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(len);
  for (auto& v : out) v *= inv;
  return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [outer, inner, len, inv](Node& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t t = 0; t < len; ++t) {
        double* dst = g->data() + (o * len + t) * inner;
        const double* src = n.grad.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& n) {
    if (auto* g = grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    }
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  if (perm.size() != s.size()) throw DimensionError("permute: rank mismatch for " + shape_str(s));
  std::vector<bool> used(s.size(), false);
  for (auto p : perm) {
    if (p >= s.size() || used[p]) throw DimensionError("permute: invalid axis order");
    used[p] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[perm[i]];
  const auto in_strides = strides_of(s);
  // Source offset for every destination element, in destination order.
  std::vector<std::size_t> src_index(x.numel());
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < src_index.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < s.size(); ++i) off += idx[i] * in_strides[perm[i]];
    src_index[flat] = off;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  auto d = x.data();
  std::vector<double> out(src_index.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[src_index[i]];
  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [src_index = std::move(src_index)](Node& n) {
                               auto* g = grad_of(n, 0);
                               if (!g) return;
                               for (std::size_t i = 0; i < src_index.size(); ++i) (*g)[src_index[i]] += n.grad[i];
                             });
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
  const Shape& s = x.shape();
  if (axis >= s.size() || index >= s[axis]) {
    throw DimensionError("select: index " + std::to_string(index) + " on axis " + std::to_string(axis) +
                         " out of range for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  auto d = x.data();
  std::vector<double> out(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(d.data() + (o * len + index) * inner, inner, out.data() + o * inner);
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [outer, inner, len, index](Node& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      double* dst = g->data() + (o * len + index) * inner;
      const double* src = n.grad.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("stack: no tensors given");
  const Shape& s = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != s) throw DimensionError("stack: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s));
  }
  if (axis > s.size()) throw DimensionError("stack: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis; i < s.size(); ++i) inner *= s[i];
  const std::size_t count = parts.size();
  Shape out_shape = s;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  std::vector<double> out(outer * count * inner);
  for (std::size_t k = 0; k < count; ++k) {
    auto d = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(d.data() + o * inner, inner, out.data() + (o * count + k) * inner);
    }
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), parts, [outer, inner, count](Node& n) {
    for (std::size_t k = 0; k < count; ++k) {
      auto* g = grad_of(n, k);
      if (!g) continue;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = n.grad.data() + (o * count + k) * inner;
        double* dst = g->data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Padding padding) {
  require_rank(x, 3, "conv1d input");
  require_rank(w, 3, "conv1d kernel");
  require_rank(b, 1, "conv1d bias");
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.dim(2);
  const std::size_t O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C) {
    throw DimensionError("conv1d: input has " + std::to_string(C) + " channels but kernel expects " +
                         std::to_string(w.dim(1)));
  }
  if (b.dim(0) != O) throw DimensionError("conv1d: bias length does not match output channels");
  std::size_t pad = 0;
  if (padding == Padding::same) {
    if (k % 2 == 0) throw DimensionError("conv1d: same padding requires an odd kernel, got k=" + std::to_string(k));
    pad = k / 2;
  }
  if (k > S + 2 * pad) throw DimensionError("conv1d: kernel longer than padded sequence");
  const std::size_t T = S + 2 * pad - k + 1;

  auto xd = x.data(), wd = w.data(), bd = b.data();
  std::vector<double> y(B * O * T);
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t o = 0; o < O; ++o) {
      double* yr = y.data() + (bi * O + o) * T;
      std::fill_n(yr, T, bd[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const double* xr = xd.data() + (bi * C + c) * S;
        const double* wr = wd.data() + (o * C + c) * k;
        for (std::size_t j = 0; j < k; ++j) {
          const double wv = wr[j];
          // input index = t + j - pad must lie in [0, S)
          const std::size_t t0 = j < pad ? pad - j : 0;
          const std::size_t t1 = std::min(T, S + pad - j);
          for (std::size_t t = t0; t < t1; ++t) yr[t] += wv * xr[t + j - pad];
        }
      }
    }
  }
  return Tensor::make_result({B, O, T}, std::move(y), {x, w, b}, [B, C, S, O, k, T, pad](Node& n) {
    const auto& xv = n.parents[0]->data;
    const auto& wv = n.parents[1]->data;
    auto* gx = grad_of(n, 0);
    auto* gw = grad_of(n, 1);
    auto* gb = grad_of(n, 2);
    for (std::size_t bi = 0; bi < B; ++bi) {
      for (std::size_t o = 0; o < O; ++o) {
        const double* gy = n.grad.data() + (bi * O + o) * T;
        if (gb) {
          double s = 0.0;
          for (std::size_t t = 0; t < T; ++t) s += gy[t];
          (*gb)[o] += s;
        }
        for (std::size_t c = 0; c < C; ++c) {
          const double* xr = xv.data() + (bi * C + c) * S;
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t t0 = j < pad ? pad - j : 0;
            const std::size_t t1 = std::min(T, S + pad - j);
            if (gw) {
              double s = 0.0;
              for (std::size_t t = t0; t < t1; ++t) s += gy[t] * xr[t + j - pad];
              (*gw)[(o * C + c) * k + j] += s;
            }
            if (gx) {
              const double w = wv[(o * C + c) * k + j];
              double* gxr = gx->data() + (bi * C + c) * S;
              for (std::size_t t = t0; t < t1; ++t) gxr[t + j - pad] += w * gy[t];
            }
          }
        }
      }
    }
  });
}

BatchNormState BatchNormState::neutral(std::size_t channels) {
  BatchNormState s;
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  s.initialized = true;
  return s;
}

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Mode mode, BatchNormState& state) {
  require_rank(x, 3, "batchnorm1d input");
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.dim(2);
  if (gamma.numel() != C || beta.numel() != C) {
    throw DimensionError("batchnorm1d: gamma/beta length does not match " + std::to_string(C) + " channels");
  }
  const std::size_t N = B * S;
  auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  std::vector<double> mean(C, 0.0), invstd(C, 0.0);

  if (mode == Mode::train) {
    if (N < 2) throw DimensionError("batchnorm1d: train mode needs at least two values per channel");
    if (!state.initialized) {
      state.running_mean.assign(C, 0.0);
      state.running_var.assign(C, 1.0);
      state.initialized = true;
    }
    if (state.running_mean.size() != C) throw DimensionError("batchnorm1d: running statistics width mismatch");
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t bi = 0; bi < B; ++bi) {
        const double* r = xd.data() + (bi * C + c) * S;
        for (std::size_t t = 0; t < S; ++t) m += r[t];
      }
      m /= static_cast<double>(N);
      double v = 0.0;
      for (std::size_t bi = 0; bi < B; ++bi) {
        const double* r = xd.data() + (bi * C + c) * S;
        for (std::size_t t = 0; t < S; ++t) v += (r[t] - m) * (r[t] - m);
      }
      v /= static_cast<double>(N);
      mean[c] = m;
      invstd[c] = 1.0 / std::sqrt(v + state.eps);
      const double unbiased = v * static_cast<double>(N) / static_cast<double>(N - 1);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  } else {
    if (!state.initialized) throw std::logic_error("batchnorm1d: uninitialized running statistics");
    if (state.running_mean.size() != C) throw DimensionError("batchnorm1d: running statistics width mismatch");
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  std::vector<double> xhat(x.numel()), y(x.numel());
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (bi * C + c) * S;
      for (std::size_t t = 0; t < S; ++t) {
        xhat[base + t] = (xd[base + t] - mean[c]) * invstd[c];
        y[base + t] = gd[c] * xhat[base + t] + bd[c];
      }
    }
  }
  const bool batch_stats = mode == Mode::train;
  return Tensor::make_result(x.shape(), std::move(y), {x, gamma, beta},
                             [B, C, S, N, batch_stats, xhat = std::move(xhat), invstd = std::move(invstd)](Node& n) {
                               const auto& g = n.parents[1]->data;
                               auto* gx = grad_of(n, 0);
                               auto* gg = grad_of(n, 1);
                               auto* gbeta = grad_of(n, 2);
                               for (std::size_t c = 0; c < C; ++c) {
                                 double sum_dy = 0.0, sum_dy_xhat = 0.0;
                                 for (std::size_t bi = 0; bi < B; ++bi) {
                                   const std::size_t base = (bi * C + c) * S;
                                   for (std::size_t t = 0; t < S; ++t) {
                                     sum_dy += n.grad[base + t];
                                     sum_dy_xhat += n.grad[base + t] * xhat[base + t];
                                   }
                                 }
                                 if (gg) (*gg)[c] += sum_dy_xhat;
                                 if (gbeta) (*gbeta)[c] += sum_dy;
                                 if (!gx) continue;
                                 const double k = g[c] * invstd[c];
                                 const double inv_n = 1.0 / static_cast<double>(N);
                                 for (std::size_t bi = 0; bi < B; ++bi) {
                                   const std::size_t base = (bi * C + c) * S;
                                   for (std::size_t t = 0; t < S; ++t) {
                                     const double dy = n.grad[base + t];
                                     if (batch_stats) {
                                       (*gx)[base + t] += k * (dy - inv_n * sum_dy - xhat[base + t] * inv_n * sum_dy_xhat);
                                     } else {
                                       (*gx)[base + t] += k * dy;
                                     }
                                   }
                                 }
                               }
                             });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  auto d = x.data();
  std::vector<double> y(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) y[i] = d[i] * 0.5 * (1.0 + std::erf(d[i] * inv_sqrt2));
  return Tensor::make_result(x.shape(), std::move(y), {x}, [inv_sqrt_2pi](Node& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    const auto& xv = n.parents[0]->data;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*g)[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor maxpool1d(const Tensor& x, std::size_t width, std::size_t stride) {
  require_rank(x, 3, "maxpool1d input");
  if (width < 1 || stride < 1) throw DimensionError("maxpool1d: width and stride must be at least 1");
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.dim(2);
  if (width > S) throw DimensionError("maxpool1d: window wider than sequence");
  const std::size_t T = (S - width) / stride + 1;
  auto d = x.data();
  std::vector<double> y(B * C * T);
  std::vector<std::size_t> argmax(B * C * T);
  for (std::size_t r = 0; r < B * C; ++r) {
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t best = r * S + t * stride;
      for (std::size_t j = 1; j < width; ++j) {
        const std::size_t cand = r * S + t * stride + j;
        if (d[cand] > d[best]) best = cand;
      }
      y[r * T + t] = d[best];
      argmax[r * T + t] = best;
    }
  }
  return Tensor::make_result({B, C, T}, std::move(y), {x}, [argmax = std::move(argmax)](Node& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    for (std::size_t i = 0; i < argmax.size(); ++i) (*g)[argmax[i]] += n.grad[i];
  });
}

Tensor adaptive_avg_pool(const Tensor& x) {
  require_rank(x, 3, "adaptive_avg_pool input");
  return mean_axis(x, 2);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t B = x.dim(0), I = x.dim(1), O = w.dim(1);
  if (w.dim(0) != I) {
    throw DimensionError("linear: input width " + std::to_string(I) + " does not match weight " + shape_str(w.shape()));
  }
  if (b.numel() != O) throw DimensionError("linear: bias length does not match output width");
  auto xd = x.data(), wd = w.data(), bd = b.data();
  std::vector<double> y(B * O);
  for (std::size_t bi = 0; bi < B; ++bi) {
    double* yr = y.data() + bi * O;
    std::copy(bd.begin(), bd.end(), yr);
    for (std::size_t i = 0; i < I; ++i) {
      const double xv = xd[bi * I + i];
      const double* wr = wd.data() + i * O;
      for (std::size_t o = 0; o < O; ++o) yr[o] += xv * wr[o];
    }
  }
  return Tensor::make_result({B, O}, std::move(y), {x, w, b}, [B, I, O](Node& n) {
    const auto& xv = n.parents[0]->data;
    const auto& wv = n.parents[1]->data;
    auto* gx = grad_of(n, 0);
    auto* gw = grad_of(n, 1);
    auto* gb = grad_of(n, 2);
    for (std::size_t bi = 0; bi < B; ++bi) {
      const double* gy = n.grad.data() + bi * O;
      if (gb) {
        for (std::size_t o = 0; o < O; ++o) (*gb)[o] += gy[o];
      }
      for (std::size_t i = 0; i < I; ++i) {
        const double* wr = wv.data() + i * O;
        if (gx) {
          double s = 0.0;
          for (std::size_t o = 0; o < O; ++o) s += gy[o] * wr[o];
          (*gx)[bi * I + i] += s;
        }
        if (gw) {
          const double xi = xv[bi * I + i];
          double* gwr = gw->data() + i * O;
          for (std::size_t o = 0; o < O; ++o) gwr[o] += xi * gy[o];
        }
      }
    }
  });
}

namespace {

// rows×inner times inner×cols, row-major.
void matmul_acc(const double* a, const double* b, double* out, std::size_t rows, std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < inner; ++i) {
      const double av = a[r * inner + i];
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += av * b[i * cols + c];
    }
  }
}

}  // namespace

Tensor multihead_self_attention(const Tensor& tokens, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                                std::size_t heads, std::vector<double>* probs) {
  require_rank(tokens, 3, "attention tokens");
  const std::size_t B = tokens.dim(0), T = tokens.dim(1), d = tokens.dim(2);
  for (const Tensor* w : {&wq, &wk, &wv}) {
    if (w->shape() != Shape{d, d}) throw DimensionError("attention: projection must be " + shape_str({d, d}));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  const std::size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto xd = tokens.data();
  std::vector<double> q(B * T * d, 0.0), k(B * T * d, 0.0), v(B * T * d, 0.0);
  matmul_acc(xd.data(), wq.data().data(), q.data(), B * T, d, d);
  matmul_acc(xd.data(), wk.data().data(), k.data(), B * T, d, d);
  matmul_acc(xd.data(), wv.data().data(), v.data(), B * T, d, d);

  std::vector<double> p(B * heads * T * T);
  std::vector<double> out(B * T * d, 0.0);
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* ph = p.data() + (bi * heads + h) * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += q[(bi * T + i) * d + h * dh + e] * k[(bi * T + j) * d + h * dh + e];
          ph[i * T + j] = s * inv_scale;
          mx = std::max(mx, ph[i * T + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          ph[i * T + j] = std::exp(ph[i * T + j] - mx);
          z += ph[i * T + j];
        }
        for (std::size_t j = 0; j < T; ++j) ph[i * T + j] /= z;
        for (std::size_t j = 0; j < T; ++j) {
          const double pij = ph[i * T + j];
          for (std::size_t e = 0; e < dh; ++e) out[(bi * T + i) * d + h * dh + e] += pij * v[(bi * T + j) * d + h * dh + e];
        }
      }
    }
  }
  if (probs) *probs = p;

  return Tensor::make_result(
      {B, T, d}, std::move(out), {tokens, wq, wk, wv},
      [B, T, d, heads, dh, inv_scale, q = std::move(q), k = std::move(k), v = std::move(v), p = std::move(p)](Node& n) {
        const auto& x = n.parents[0]->data;
        std::vector<double> dq(B * T * d, 0.0), dk(B * T * d, 0.0), dv(B * T * d, 0.0);
        std::vector<double> dp(T);
        for (std::size_t bi = 0; bi < B; ++bi) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* ph = p.data() + (bi * heads + h) * T * T;
            for (std::size_t i = 0; i < T; ++i) {
              const double* go = n.grad.data() + (bi * T + i) * d + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < T; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e) s += go[e] * v[(bi * T + j) * d + h * dh + e];
                dp[j] = s;
                dot += s * ph[i * T + j];
                for (std::size_t e = 0; e < dh; ++e) dv[(bi * T + j) * d + h * dh + e] += ph[i * T + j] * go[e];
              }
              for (std::size_t j = 0; j < T; ++j) {
                const double ds = ph[i * T + j] * (dp[j] - dot) * inv_scale;
                for (std::size_t e = 0; e < dh; ++e) {
                  dq[(bi * T + i) * d + h * dh + e] += ds * k[(bi * T + j) * d + h * dh + e];
                  dk[(bi * T + j) * d + h * dh + e] += ds * q[(bi * T + i) * d + h * dh + e];
                }
              }
            }
          }
        }
        const std::vector<double>* dproj[3] = {&dq, &dk, &dv};
        auto* gx = grad_of(n, 0);
        for (std::size_t m = 0; m < 3; ++m) {
          const auto& dm = *dproj[m];
          const auto& w = n.parents[m + 1]->data;
          if (gx) {
            // dX += dM · Wᵀ
            for (std::size_t r = 0; r < B * T; ++r) {
              for (std::size_t i = 0; i < d; ++i) {
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += dm[r * d + c] * w[i * d + c];
                (*gx)[r * d + i] += s;
              }
            }
          }
          if (auto* gw = grad_of(n, m + 1)) {
            // dW += Xᵀ · dM
            for (std::size_t r = 0; r < B * T; ++r) {
              for (std::size_t i = 0; i < d; ++i) {
                const double xv = x[r * d + i];
                for (std::size_t c = 0; c < d; ++c) (*gw)[i * d + c] += xv * dm[r * d + c];
              }
            }
          }
        }
      });
}

std::vector<double> softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols) {
  if (logits.size() != rows * cols) throw DimensionError("softmax_rows: size mismatch");
  std::vector<double> out(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = logits.data() + r * cols;
    const double mx = *std::max_element(l, l + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (out[r * cols + c] = std::exp(l[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B) throw DimensionError("softmax_cross_entropy: label count does not match batch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= K) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) + " outside [0," +
                              std::to_string(K) + ")");
    }
  }
  auto ld = logits.data();
  std::vector<double> probs = softmax_rows(ld, B, K);
  double loss = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    const double* l = ld.data() + r * K;
    const double mx = *std::max_element(l, l + K);
    double z = 0.0;
    for (std::size_t c = 0; c < K; ++c) z += std::exp(l[c] - mx);
    loss += (mx + std::log(z)) - l[labels[r]];
  }
  loss /= static_cast<double>(B);
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor::make_result({1}, {loss}, {logits}, [B, K, probs = std::move(probs), lab = std::move(lab)](Node& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    const double s = n.grad[0] / static_cast<double>(B);
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < K; ++c) {
        const double target = static_cast<int>(c) == lab[r] ? 1.0 : 0.0;
        (*g)[r * K + c] += s * (probs[r * K + c] - target);
      }
    }
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto da = a.data(), db = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) s += (da[i] - db[i]) * (da[i] - db[i]);
  const double inv = 1.0 / static_cast<double>(da.size());
  return Tensor::make_result({1}, {s * inv}, {a, b}, [inv](Node& n) {
    const auto& x = n.parents[0]->data;
    const auto& y = n.parents[1]->data;
    const double c = 2.0 * inv * n.grad[0];
    if (auto* g = grad_of(n, 0)) {
      for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += c * (x[i] - y[i]);
    }
    if (auto* g = grad_of(n, 1)) {
      for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] -= c * (x[i] - y[i]);
    }
  });
}

Tensor l2_penalty(std::span<const Tensor> weights) {
  double s = 0.0;
  for (const auto& w : weights) {
    for (double v : w.data()) s += v * v;
  }
  std::vector<Tensor> parents(weights.begin(), weights.end());
  return Tensor::make_result({1}, {s}, std::move(parents), [](Node& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      auto* g = grad_of(n, k);
      if (!g) continue;
      const auto& w = n.parents[k]->data;
      for (std::size_t i = 0; i < w.size(); ++i) (*g)[i] += 2.0 * n.grad[0] * w[i];
    }
  });
}

}  // namespace meet
