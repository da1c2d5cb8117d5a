#include <cmath>
#include <numeric>

#include "meet/gradcheck.hpp"
#include "meet/model.hpp"
#include "meet/ops.hpp"
#include "meet/rng.hpp"

namespace meet {

ModelConfig gradcheck_toy_config() {
  ModelConfig c;
  c.d_in = 3;
  c.seq_len = 8;
  c.n_views = 2;
  c.view_dim = 4;
  c.k = 3;
  c.k1 = 5;
  c.k2 = 3;
  c.pool_stride = 2;
  c.f_long = 4;
  c.f_short = 4;
  c.heads = 2;
  c.d_proj = 4;
  c.n_classes = 3;
  c.alpha = 1e-2;
  c.beta = 1.0;
  c.batch_size = 2;
  return c;
}

namespace {

Tensor randn(Shape shape, Rng& rng, double sd = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sd * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Contracts an op output with a fixed random tensor so every output entry
// contributes a distinct weight to the checked scalar.
Tensor project(const Tensor& y, const Tensor& r) { return sum(mul(y, r)); }

}  // namespace

std::vector<OpCheck> run_gradcheck_suite(const ModelConfig& toy, double tolerance, std::string_view fault_op,
                                         std::uint64_t seed) {
  toy.validate();
  Rng rng(seed);
  std::vector<OpCheck> out;
  auto check = [&](std::string name, const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
    GradCheckOptions opts;
    if (fault_op == name) opts.corrupt_analytic = 1.0;
    const auto r = grad_check(f, std::move(inputs), opts);
    out.push_back({std::move(name), r.max_rel_error, r.coordinates, r.max_rel_error < tolerance});
  };

  const std::size_t B = 2, S = toy.seq_len, C = toy.d_in;
  {
    Tensor a = randn({B, C, S}, rng), b = randn({B, C, S}, rng), r = randn({B, C, S}, rng, 1.0);
    r.set_requires_grad(false);
    check("add", [&] { return project(add(a, b), r); }, {a, b});
    check("mul", [&] { return project(mul(a, b), r); }, {a, b});
    check("scale", [&] { return project(scale(a, -1.7), r); }, {a});
    check("sum", [&] { return sum(mul(a, a)); }, {a});
    Tensor r2 = randn({B, S}, rng);
    r2.set_requires_grad(false);
    check("mean_axis", [&] { return project(mean_axis(a, 1), r2); }, {a});
    Tensor r3 = randn({B * C, S}, rng);
    r3.set_requires_grad(false);
    check("reshape", [&] { return project(reshape(a, {B * C, S}), r3); }, {a});
    Tensor r4 = randn({S, B, C}, rng);
    r4.set_requires_grad(false);
    check("permute", [&] { return project(permute(a, {2, 0, 1}), r4); }, {a});
    Tensor r5 = randn({B, S}, rng);
    r5.set_requires_grad(false);
    check("select", [&] { return project(select(a, 1, 1), r5); }, {a});
    Tensor r6 = randn({B, 2, C, S}, rng);
    r6.set_requires_grad(false);
    check("stack", [&] { return project(stack({a, b}, 1), r6); }, {a, b});
  }
  {
    const std::size_t O = 4, k = 3;
    Tensor x = randn({B, C, S}, rng), w = randn({O, C, k}, rng), bias = randn({O}, rng);
    Tensor rs = randn({B, O, S}, rng), rv = randn({B, O, S - k + 1}, rng);
    rs.set_requires_grad(false);
    rv.set_requires_grad(false);
    check("conv1d.same", [&] { return project(conv1d(x, w, bias, Padding::same), rs); }, {x, w, bias});
    check("conv1d.valid", [&] { return project(conv1d(x, w, bias, Padding::valid), rv); }, {x, w, bias});
  }
  {
    Tensor x = randn({B, C, S}, rng), gamma = randn({C}, rng), beta = randn({C}, rng), r = randn({B, C, S}, rng);
    r.set_requires_grad(false);
    BatchNormState st;
    check("batchnorm1d.train", [&] { return project(batchnorm1d(x, gamma, beta, Mode::train, st), r); },
          {x, gamma, beta});
    check("batchnorm1d.eval", [&] { return project(batchnorm1d(x, gamma, beta, Mode::eval, st), r); },
          {x, gamma, beta});
    check("gelu", [&] { return project(gelu(x), r); }, {x});
    Tensor rp = randn({B, C, S / 2}, rng);
    rp.set_requires_grad(false);
    check("maxpool1d", [&] { return project(maxpool1d(x, 2, 2), rp); }, {x});
    Tensor ra = randn({B, C}, rng);
    ra.set_requires_grad(false);
    check("adaptive_avg_pool", [&] { return project(adaptive_avg_pool(x), ra); }, {x});
  }
  {
    const std::size_t I = 5, O = 3;
    Tensor x = randn({B, I}, rng), w = randn({I, O}, rng), b = randn({O}, rng), r = randn({B, O}, rng);
    r.set_requires_grad(false);
    check("linear", [&] { return project(linear(x, w, b), r); }, {x, w, b});
    const std::vector<int> labels{2, 0};
    check("softmax_cross_entropy", [&] { return softmax_cross_entropy(linear(x, w, b), labels); }, {x, w, b});
    Tensor t = randn({B, O}, rng);
    check("mse", [&] { return mse(linear(x, w, b), t); }, {x, w, b, t});
    check("l2_penalty", [&] { return l2_penalty(std::vector<Tensor>{w, b}); }, {w, b});
  }
  {
    const std::size_t T = 3, d = 4, heads = 2;
    Tensor tok = randn({B, T, d}, rng), wq = randn({d, d}, rng, 0.5), wk = randn({d, d}, rng, 0.5),
           wv = randn({d, d}, rng, 0.5), r = randn({B, T, d}, rng);
    r.set_requires_grad(false);
    check("multihead_self_attention",
          [&] { return project(multihead_self_attention(tok, wq, wk, wv, heads), r); }, {tok, wq, wk, wv});
  }

  Tensor x = randn({B, C, S}, rng);
  x.set_requires_grad(false);
  const std::vector<int> labels{1, 2};
  for (Variant v : {Variant::full, Variant::no_mere, Variant::no_cdta}) {
    ModelConfig cfg = toy;
    cfg.ablation = v;
    cfg.seed = seed;
    Model model(cfg);
    std::vector<Tensor> inputs;
    for (auto& p : model.parameters()) inputs.push_back(p.tensor);
    inputs.push_back(x);
    auto total = [&] {
      LossTerms t = model_loss(model, x, labels, Mode::train);
      return add(add(t.mse, scale(t.reg, cfg.alpha)), scale(t.pred, cfg.beta));
    };
    check("model." + std::string(to_string(v)), total, inputs);
  }
  return out;
}

}  // namespace meet
