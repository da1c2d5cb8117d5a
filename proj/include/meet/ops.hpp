#pragma once

#include <span>
#include <vector>

#include "meet/tensor.hpp"

namespace meet {

enum class Mode { train, eval };
enum class Padding { same, valid };

// Elementwise and structural ops. All are differentiable.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
// Removes `axis`, keeping slice `index`.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
// Inserts a new axis at `axis`; all parts must share one shape.
Tensor stack(const std::vector<Tensor>& parts, std::size_t axis);

// Cross-correlation. x: B×C_in×S, w: C_out×C_in×k, b: C_out.
// `same` needs odd k and pads floor(k/2) zeros on each side.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Padding padding);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
  double momentum = 0.1;
  double eps = 1e-5;

  // Zero mean, unit variance, marked initialized.
  static BatchNormState neutral(std::size_t channels);
};

// Per-channel normalization over batch and time (biased variance). Train mode
// refreshes running statistics; eval mode consumes them.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Mode mode,
                   BatchNormState& state);

// x·Φ(x) with the erf-based normal CDF.
Tensor gelu(const Tensor& x);

// Windows that do not fit are dropped. Ties route gradient to the first maximum.
Tensor maxpool1d(const Tensor& x, std::size_t width, std::size_t stride);

// B×C×S -> B×C, mean over time.
Tensor adaptive_avg_pool(const Tensor& x);

// x: B×D_in, w: D_in×D_out, b: D_out.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// tokens: B×T×d, projections d×d. Per head of width d/heads computes
// softmax(QKᵀ/√(d/heads))V; heads are concatenated along the feature axis.
// When `probs` is given it receives the attention rows, laid out B×heads×T×T.
Tensor multihead_self_attention(const Tensor& tokens, const Tensor& wq, const Tensor& wk,
                                const Tensor& wv, std::size_t heads,
                                std::vector<double>* probs = nullptr);

// Mean negative log-likelihood of `labels` under softmax(logits), logits B×K.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor mse(const Tensor& a, const Tensor& b);

// Sum of squared entries over all given tensors.
Tensor l2_penalty(std::span<const Tensor> weights);

// Row-wise softmax of a B×K matrix (no gradient).
std::vector<double> softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols);

}  // namespace meet
