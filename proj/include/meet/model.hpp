#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "meet/cdta.hpp"
#include "meet/config.hpp"
#include "meet/mere.hpp"
#include "meet/param.hpp"

namespace meet {

// N dense windows stacked as N×D_in×S plus labels.
struct LabeledSet {
  std::size_t d_in = 0;
  std::size_t seq_len = 0;
  std::vector<double> values;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  // Rows `indices` as a B×D_in×S tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

struct LossBreakdown {
  double l_mse = 0.0;
  double l_reg = 0.0;
  double l_pred = 0.0;
  double total = 0.0;
};

struct ModelOutput {
  FusedRepresentation fused;
  Tensor logits;  // B×K
  Tensor recon;   // B×D_in×S
};

// MERE (or its bypass) → CDTA (or its bypass) → Z, with a linear decoder
// Z → D_in·S for reconstruction and a linear softmax head Z → K as the
// differentiable stand-in for the tree ensemble. The no_both variant carries
// no network.
class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  bool has_network() const { return config_.ablation != Variant::no_both; }

  ModelOutput forward(const Tensor& x, Mode mode);
  // Z only, in eval mode, for the N windows of `set` (batched).
  std::vector<double> encode(const LabeledSet& set, std::size_t batch_size = 64);

  // Declaration order; rebuilt on each call.
  std::vector<NamedParam> parameters();
  std::vector<NamedState> norm_states();
  std::size_t parameter_count();

  // Effective view count / width seen by CDTA.
  std::size_t cdta_views() const;
  std::size_t cdta_view_dim() const;

 private:
  ModelConfig config_;
  std::optional<MereLayer> mere_;
  std::optional<CdtaLayer> cdta_;
  std::optional<CdtaBypass> bypass_;
  Tensor dec_w_, dec_b_;
  Tensor head_w_, head_b_;
};

// Closed-form parameter count for a config (independent of Model).
std::size_t expected_parameter_count(const ModelConfig& config);

struct LossTerms {
  Tensor mse;
  Tensor reg;
  Tensor pred;
  LossBreakdown values;
};

// mse(recon, x), Σ squared weights, softmax cross-entropy, and
// total = l_mse + α·l_reg + β·l_pred.
LossTerms model_loss(Model& model, const Tensor& x, std::span<const int> labels, Mode mode);

struct TrainHistory {
  std::vector<LossBreakdown> epochs;      // batch-size weighted means per epoch
  std::vector<double> valid_accuracy;     // surrogate-head accuracy; NaN without a validation set
  std::vector<LossBreakdown> steps;       // every optimizer step
};

struct TrainOptions {
  // Test hook: weight on l_mse in reconstruction steps.
  double recon_weight = 1.0;
  // Called after every step with (global step, breakdown).
  std::function<void(std::size_t, const LossBreakdown&)> on_step;
};

// Alternating Adam training. Odd global steps minimise l_mse + α·l_reg over
// encoder+decoder; even steps minimise β·l_pred over encoder+head. Batch order
// is a fresh seeded permutation each epoch. Throws NumericalError on a
// non-finite loss.
TrainHistory train_alternating(Model& model, const LabeledSet& train, const LabeledSet* valid,
                               const TrainOptions& options = {});

// Argmax of the surrogate head on `set`.
double surrogate_accuracy(Model& model, const LabeledSet& set);

}  // namespace meet
