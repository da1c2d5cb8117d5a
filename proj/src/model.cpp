#include "meet/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "meet/adam.hpp"
#include "meet/errors.hpp"

namespace meet {

Tensor LabeledSet::batch(std::span<const std::size_t> indices) const {
  const std::size_t row = d_in * seq_len;
  std::vector<double> out(indices.size() * row);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  return Tensor::from({indices.size(), d_in, seq_len}, std::move(out));
}

std::vector<int> LabeledSet::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  if (!has_network()) return;
  const bool use_mere = config_.ablation == Variant::full || config_.ablation == Variant::no_cdta;
  const bool use_cdta = config_.ablation == Variant::full || config_.ablation == Variant::no_mere;
  if (use_mere) mere_ = MereLayer::init(config_, derive_seed(config_.seed, "init", 0));
  Rng rng(derive_seed(config_.seed, "init", 1));
  if (use_cdta) {
    cdta_ = CdtaLayer::init(cdta_views(), cdta_view_dim(), config_, rng);
  } else {
    bypass_ = CdtaBypass::init(cdta_views(), cdta_view_dim(), config_.d_proj, rng);
  }
  Rng head_rng(derive_seed(config_.seed, "init", 2));
  const double bound = std::sqrt(1.0 / static_cast<double>(config_.d_proj));
  const std::size_t flat = config_.d_in * config_.seq_len;
  dec_w_ = uniform_tensor({config_.d_proj, flat}, bound, head_rng);
  dec_b_ = Tensor::zeros({flat}, true);
  head_w_ = uniform_tensor({config_.d_proj, config_.n_classes}, bound, head_rng);
  head_b_ = Tensor::zeros({config_.n_classes}, true);
}

std::size_t Model::cdta_views() const { return config_.ablation == Variant::no_mere ? 1 : config_.n_views; }

std::size_t Model::cdta_view_dim() const {
  return config_.ablation == Variant::no_mere ? config_.d_in : config_.view_dim;
}

std::vector<NamedParam> Model::parameters() {
  std::vector<NamedParam> params;
  std::vector<NamedState> states;
  if (!has_network()) return params;
  if (mere_) mere_->collect(params, states, "mere.");
  if (cdta_) cdta_->collect(params, "cdta.");
  if (bypass_) bypass_->collect(params, "cdta_bypass.");
  params.push_back({"decoder.weight", dec_w_, true, ParamGroup::decoder});
  params.push_back({"decoder.bias", dec_b_, false, ParamGroup::decoder});
  params.push_back({"head.weight", head_w_, true, ParamGroup::head});
  params.push_back({"head.bias", head_b_, false, ParamGroup::head});
  return params;
}

std::vector<NamedState> Model::norm_states() {
  std::vector<NamedParam> params;
  std::vector<NamedState> states;
  if (mere_) mere_->collect(params, states, "mere.");
  return states;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  if (c.ablation == Variant::no_both) return 0;
  const bool use_mere = c.ablation == Variant::full || c.ablation == Variant::no_cdta;
  const bool use_cdta = c.ablation == Variant::full || c.ablation == Variant::no_mere;
  const std::size_t views = use_mere ? c.n_views : 1;
  const std::size_t vdim = use_mere ? c.view_dim : c.d_in;
  std::size_t n = 0;
  if (use_mere) {
    const std::size_t channels = c.mere_grouping == MereGrouping::full_width ? c.d_in : 1;
    n += c.n_views * (c.view_dim * channels * c.k + 3 * c.view_dim);
  }
  if (use_cdta) {
    n += c.f_long * vdim * c.k1 + c.f_long;
    n += c.f_short * c.f_long * c.k2 + c.f_short;
    n += 3 * c.f_short * c.f_short;
    n += views * c.f_short * c.d_proj + c.d_proj;
  } else {
    n += views * vdim * c.d_proj + c.d_proj;
  }
  n += c.d_proj * c.d_in * c.seq_len + c.d_in * c.seq_len;
  n += c.d_proj * c.n_classes + c.n_classes;
  return n;
}

ModelOutput Model::forward(const Tensor& x, Mode mode) {
  if (!has_network()) throw std::logic_error("no_both variant has no network to run");
  if (x.rank() != 3 || x.dim(1) != config_.d_in || x.dim(2) != config_.seq_len) {
    throw DimensionError("model expects B×" + std::to_string(config_.d_in) + "×" + std::to_string(config_.seq_len) +
                         ", got " + shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0);
  Tensor views = mere_ ? mere_forward(*mere_, x, mode) : mere_bypass(x);
  FusedRepresentation fused = cdta_ ? cdta_forward(*cdta_, views) : cdta_bypass(*bypass_, views);
  Tensor logits = linear(fused.z, head_w_, head_b_);
  Tensor recon = reshape(linear(fused.z, dec_w_, dec_b_), {B, config_.d_in, config_.seq_len});
  return {std::move(fused), std::move(logits), std::move(recon)};
}

std::vector<double> Model::encode(const LabeledSet& set, std::size_t batch_size) {
  std::vector<double> z;
  z.reserve(set.size() * config_.d_proj);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) idx.push_back(i);
    auto out = forward(set.batch(idx), Mode::eval);
    auto d = out.fused.z.data();
    z.insert(z.end(), d.begin(), d.end());
  }
  return z;
}

LossTerms model_loss(Model& model, const Tensor& x, std::span<const int> labels, Mode mode) {
  const auto& cfg = model.config();
  ModelOutput out = model.forward(x, mode);
  std::vector<Tensor> weights;
  for (const auto& p : model.parameters()) {
    if (p.is_weight) weights.push_back(p.tensor);
  }
  LossTerms t;
  t.mse = mse(out.recon, x);
  t.reg = l2_penalty(weights);
  t.pred = softmax_cross_entropy(out.logits, labels);
  t.values.l_mse = t.mse.item();
  t.values.l_reg = t.reg.item();
  t.values.l_pred = t.pred.item();
  t.values.total = t.values.l_mse + cfg.alpha * t.values.l_reg + cfg.beta * t.values.l_pred;
  return t;
}

double surrogate_accuracy(Model& model, const LabeledSet& set) {
  if (set.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t K = model.config().n_classes;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += 64) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + 64); ++i) idx.push_back(i);
    auto out = model.forward(set.batch(idx), Mode::eval);
    auto l = out.logits.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = l.subspan(r * K, K);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == set.labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

TrainHistory train_alternating(Model& model, const LabeledSet& train, const LabeledSet* valid,
                               const TrainOptions& options) {
  if (!model.has_network()) throw std::logic_error("train_alternating: no_both variant has no network");
  if (train.size() == 0) throw std::invalid_argument("train_alternating: empty training set");
  const auto& cfg = model.config();
  if (train.d_in != cfg.d_in || train.seq_len != cfg.seq_len) {
    throw DimensionError("train_alternating: data shape does not match model config");
  }
  auto params = model.parameters();
  std::vector<Tensor> tensors;
  std::vector<std::string> names;
  std::vector<bool> recon_mask, pred_mask;
  for (const auto& p : params) {
    tensors.push_back(p.tensor);
    names.push_back(p.name);
    recon_mask.push_back(p.group != ParamGroup::head);
    pred_mask.push_back(p.group != ParamGroup::decoder);
  }
  Adam adam(tensors, names, cfg.learning_rate);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));

  TrainHistory history;
  std::size_t step = 0;
  const std::size_t N = train.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffle_rng.permutation(N);
    LossBreakdown acc;
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      ++step;
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, N - start));
      const Tensor x = train.batch(idx);
      const auto labels = train.batch_labels(idx);
      LossTerms terms = model_loss(model, x, labels, Mode::train);
      if (!std::isfinite(terms.values.total)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch + 1 << ", step " << step;
        throw NumericalError(os.str());
      }
      const bool recon_step = step % 2 == 1;
      Tensor objective = recon_step ? add(scale(terms.mse, options.recon_weight), scale(terms.reg, cfg.alpha))
                                    : scale(terms.pred, cfg.beta);
      adam.zero_grad();
      objective.backward();
      adam.step(recon_step ? recon_mask : pred_mask);

      const double w = static_cast<double>(idx.size()) / static_cast<double>(N);
      acc.l_mse += w * terms.values.l_mse;
      acc.l_reg += w * terms.values.l_reg;
      acc.l_pred += w * terms.values.l_pred;
      history.steps.push_back(terms.values);
      if (options.on_step) options.on_step(step, terms.values);
    }
    adam.zero_grad();
    acc.total = acc.l_mse + cfg.alpha * acc.l_reg + cfg.beta * acc.l_pred;
    history.epochs.push_back(acc);
    history.valid_accuracy.push_back(valid ? surrogate_accuracy(model, *valid)
                                           : std::numeric_limits<double>::quiet_NaN());
  }
  return history;
}

}  // namespace meet
