#include <cmath>
#include <algorithm>
#include <numeric>
#include <set>

#include "doctest.h"
#include "meet/adam.hpp"
#include "meet/errors.hpp"
#include "meet/gradcheck.hpp"
#include "meet/ops.hpp"
#include "test_support.hpp"

using namespace meet;
using testing::random_tensor;

TEST_SUITE("numerics") {

TEST_CASE("tensor construction and invariants") {
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), DimensionError);
  auto c = t.clone();
  c.data_mut()[0] = 9;
  CHECK(t.data()[0] == 1);
  auto alias = t;
  CHECK(alias.same_storage(t));
}

TEST_CASE("backward of sum is all ones and accumulates") {
  auto x = Tensor::from({3}, {1, -2, 5}, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  sum(scale(x, 2.0)).backward();
  for (double g : x.grad()) CHECK(g == 3.0);
}

TEST_CASE("backward rejects non-scalars and replays") {
  auto x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(mul(x, x).backward(), DimensionError);
  auto loss = sum(mul(x, x));
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), std::logic_error);
}

TEST_CASE("shared parameter sums both paths") {
  Rng rng(3);
  auto w = random_tensor({2, 2}, rng, true);
  auto x = random_tensor({3, 2}, rng);
  auto b = Tensor::zeros({2});
  auto f = [&] { return add(sum(linear(x, w, b)), sum(mul(linear(x, w, b), linear(x, w, b)))); };
  CHECK(grad_check(f, {w}).max_rel_error < 1e-6);
}

TEST_CASE("conv1d hand examples") {
  auto x = Tensor::from({1, 1, 3}, {1, 2, 3});
  auto w = Tensor::from({1, 1, 3}, {1, 0, -1});
  auto y = conv1d(x, w, Tensor::zeros({1}), Padding::same);
  CHECK(y.data()[0] == doctest::Approx(-2));
  CHECK(y.data()[1] == doctest::Approx(-2));
  CHECK(y.data()[2] == doctest::Approx(2));

  auto ones = Tensor::full({1, 1, 4}, 1.0);
  auto y2 = conv1d(ones, Tensor::from({1, 1, 2}, {1, 1}), Tensor::zeros({1}), Padding::valid);
  REQUIRE(y2.shape() == Shape{1, 1, 3});
  for (double v : y2.data()) CHECK(v == 2.0);

  Rng rng(1);
  auto r = random_tensor({2, 1, 7}, rng);
  auto id = conv1d(r, Tensor::from({1, 1, 5}, {0, 0, 1, 0, 0}), Tensor::zeros({1}), Padding::same);
  CHECK(testing::max_abs_diff(id.data(), r.data()) == 0.0);
}

TEST_CASE("conv1d errors") {
  auto x = Tensor::zeros({1, 2, 5});
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 3, 3}), Tensor::zeros({1}), Padding::same), DimensionError);
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 2, 2}), Tensor::zeros({1}), Padding::same), DimensionError);
}

TEST_CASE("conv1d matches triple-loop oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + rng.below(3), C = 1 + rng.below(4), O = 1 + rng.below(4), S = 3 + rng.below(6);
    const bool same = trial % 2 == 0;
    std::size_t k = 1 + rng.below(std::min<std::size_t>(S, 7));
    if (same && k % 2 == 0) k -= 1;
    auto x = random_tensor({B, C, S}, rng), w = random_tensor({O, C, k}, rng), b = random_tensor({O}, rng);
    auto y = conv1d(x, w, b, same ? Padding::same : Padding::valid);
    const std::vector<double> xv(x.data().begin(), x.data().end()), wv(w.data().begin(), w.data().end()),
        bv(b.data().begin(), b.data().end());
    CHECK(testing::max_abs_diff(y.data(), testing::conv_oracle(xv, wv, bv, B, C, S, O, k, same)) < 1e-10);
  }
}

TEST_CASE("batchnorm hand example and properties") {
  BatchNormState st;
  st.eps = 0.0;
  auto x = Tensor::from({1, 1, 3}, {1, 3, 5});
  auto y = batchnorm1d(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), Mode::train, st);
  CHECK(y.data()[0] == doctest::Approx(-1.224745).epsilon(1e-6));
  CHECK(y.data()[1] == doctest::Approx(0.0));
  CHECK(y.data()[2] == doctest::Approx(1.224745).epsilon(1e-6));
  CHECK(st.running_mean[0] == doctest::Approx(0.3));
  CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * 4.0));  // unbiased batch variance 4

  BatchNormState st2;
  auto zero = batchnorm1d(x, Tensor::zeros({1}), Tensor::zeros({1}), Mode::train, st2);
  for (double v : zero.data()) CHECK(v == 0.0);

  BatchNormState st3;
  auto c = batchnorm1d(Tensor::full({2, 1, 4}, 7.0), Tensor::full({1}, 1.0), Tensor::full({1}, 0.25), Mode::train, st3);
  for (double v : c.data()) CHECK(std::abs(v - 0.25) < 1e-3);

  Rng rng(5);
  BatchNormState st4;
  auto r = batchnorm1d(random_tensor({4, 3, 6}, rng, false, 3.0), Tensor::full({3}, 1.0), Tensor::zeros({3}),
                       Mode::train, st4);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t t = 0; t < 6; ++t) m += r.at({b, ch, t});
    m /= 24;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t t = 0; t < 6; ++t) v += std::pow(r.at({b, ch, t}) - m, 2);
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v / 24 - 1.0) < 1e-4);
  }

  BatchNormState fresh;
  CHECK_THROWS_WITH_AS(batchnorm1d(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), Mode::eval, fresh),
                       doctest::Contains("uninitialized running statistics"), std::logic_error);
}

TEST_CASE("gelu values") {
  auto y = gelu(Tensor::from({3}, {0.0, 1.0, -10.0}));
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == doctest::Approx(0.5 * (1 + std::erf(1 / std::sqrt(2.0)))).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(0.841345).epsilon(1e-6));
  CHECK(std::abs(y.data()[2]) < 1e-6);
}

TEST_CASE("maxpool values and tie routing") {
  auto y = maxpool1d(Tensor::from({1, 1, 4}, {1, 4, 2, 3}), 2, 2);
  CHECK(y.data()[0] == 4);
  CHECK(y.data()[1] == 3);
  auto c = maxpool1d(Tensor::full({1, 2, 6}, 2.5), 2, 2);
  for (double v : c.data()) CHECK(v == 2.5);
  auto t = Tensor::from({1, 1, 2}, {5, 5}, true);
  sum(maxpool1d(t, 2, 2)).backward();
  CHECK(t.grad()[0] == 1.0);
  CHECK(t.grad()[1] == 0.0);
  // perturbed copy confirms the first entry is the one that moves the output
  auto up = maxpool1d(Tensor::from({1, 1, 2}, {5 + 1e-6, 5}), 2, 2);
  CHECK(up.data()[0] == doctest::Approx(5 + 1e-6));
  CHECK_THROWS_AS(maxpool1d(t, 0, 1), DimensionError);
  CHECK_THROWS_AS(maxpool1d(t, 1, 0), DimensionError);
}

TEST_CASE("adaptive average pool") {
  auto y = adaptive_avg_pool(Tensor::from({1, 1, 3}, {2, 4, 6}));
  CHECK(y.data()[0] == doctest::Approx(4));
  auto one = Tensor::from({2, 2, 1}, {1, 2, 3, 4});
  CHECK(testing::max_abs_diff(adaptive_avg_pool(one).data(), one.data()) == 0.0);
  auto x = Tensor::from({1, 1, 4}, {1, 7, -2, 3}, true);
  sum(adaptive_avg_pool(x)).backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("linear examples") {
  auto y = linear(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {1, 1}), Tensor::from({1}, {3}));
  CHECK(y.item() == 6);
  Rng rng(2);
  auto x = random_tensor({3, 2}, rng);
  auto id = linear(x, Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}));
  CHECK(testing::max_abs_diff(id.data(), x.data()) == 0.0);
  auto b = Tensor::zeros({2}, true);
  auto up = random_tensor({3, 2}, rng);
  sum(mul(linear(x, Tensor::from({2, 2}, {1, 0, 0, 1}), b), up)).backward();
  CHECK(b.grad()[0] == doctest::Approx(up.at({0, 0}) + up.at({1, 0}) + up.at({2, 0})));
  CHECK(b.grad()[1] == doctest::Approx(up.at({0, 1}) + up.at({1, 1}) + up.at({2, 1})));
  CHECK_THROWS_AS(linear(x, Tensor::zeros({3, 2}), Tensor::zeros({2})), DimensionError);
}

TEST_CASE("attention degenerate cases and row sums") {
  Rng rng(8);
  auto tok = random_tensor({2, 1, 4}, rng);
  auto wq = random_tensor({4, 4}, rng), wk = random_tensor({4, 4}, rng), wv = random_tensor({4, 4}, rng);
  auto y = multihead_self_attention(tok, wq, wk, wv, 2);
  auto direct = linear(reshape(tok, {2, 4}), wv, Tensor::zeros({4}));
  CHECK(testing::max_abs_diff(y.data(), direct.data()) < 1e-12);

  auto row = random_tensor({1, 1, 4}, rng);
  auto same = multihead_self_attention(stack({select(row, 1, 0), select(row, 1, 0)}, 1), wq, wk, wv, 2);
  for (std::size_t j = 0; j < 4; ++j) CHECK(same.at({0, 0, j}) == same.at({0, 1, j}));

  std::vector<double> probs;
  multihead_self_attention(random_tensor({3, 5, 4}, rng), wq, wk, wv, 2, &probs);
  REQUIRE(probs.size() == 3 * 2 * 5 * 5);
  for (std::size_t r = 0; r < probs.size() / 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(probs[r * 5 + c] >= 0.0);
      s += probs[r * 5 + c];
    }
    CHECK(std::abs(s - 1.0) < 1e-8);
  }
  CHECK_THROWS_AS(multihead_self_attention(tok, wq, wk, wv, 3), DimensionError);
}

TEST_CASE("attention 2x2 hand oracle") {
  // tokens [1,0],[0,1]; Q = K = tokens, V = 2·tokens.
  auto tok = Tensor::from({1, 2, 2}, {1, 0, 0, 1});
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto y = multihead_self_attention(tok, eye, eye, Tensor::from({2, 2}, {2, 0, 0, 2}), 1);
  const double hi = std::exp(1 / std::sqrt(2.0)), p = hi / (hi + 1.0);
  CHECK(y.at({0, 0, 0}) == doctest::Approx(2 * p));
  CHECK(y.at({0, 0, 1}) == doctest::Approx(2 * (1 - p)));
  CHECK(y.at({0, 1, 0}) == doctest::Approx(2 * (1 - p)));
  CHECK(y.at({0, 1, 1}) == doctest::Approx(2 * p));
}

TEST_CASE("cross entropy") {
  auto l = softmax_cross_entropy(Tensor::from({1, 3}, {1, 2, 3}), std::vector<int>{2});
  CHECK(l.item() == doctest::Approx(0.407606).epsilon(1e-6));
  auto u = softmax_cross_entropy(Tensor::zeros({2, 5}), std::vector<int>{0, 4});
  CHECK(u.item() == doctest::Approx(std::log(5.0)));
  auto gap = softmax_cross_entropy(Tensor::from({1, 2}, {800, 0}), std::vector<int>{0});
  CHECK(gap.item() < 1e-12);
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor::zeros({1, 2}), std::vector<int>{2}), std::out_of_range);
}

TEST_CASE("mse and l2") {
  auto x = Tensor::from({2}, {3, 4});
  CHECK(mse(x, x).item() == 0.0);
  CHECK(mse(Tensor::zeros({2}), Tensor::full({2}, 1.0)).item() == 1.0);
  std::vector<Tensor> w{Tensor::from({2}, {1, -2})};
  CHECK(l2_penalty(w).item() == 5.0);
  CHECK_THROWS_AS(mse(x, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("gradcheck properties") {
  Rng rng(4);
  auto x = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
  CHECK(grad_check([&] { return sum(linear(x, w, b)); }, {x, w, b}).max_rel_error < 1e-7);
  auto c = Tensor::from({2}, {1, 2});
  auto constant = [&] { return sum(scale(c, 0.0)); };
  CHECK(grad_check(constant, {c}).max_rel_error == 0.0);
  auto target = random_tensor({1, 2, 6}, rng);
  auto xi = random_tensor({1, 3, 6}, rng), wi = random_tensor({2, 3, 3}, rng), bi = random_tensor({2}, rng);
  CHECK(grad_check([&] { return mse(conv1d(xi, wi, bi, Padding::same), target); }, {xi, wi, bi}).max_rel_error <
        1e-4);
  GradCheckOptions bad;
  bad.corrupt_analytic = 0.5;
  CHECK(grad_check([&] { return sum(linear(x, w, b)); }, {x, w, b}, bad).max_rel_error > 1e-2);
}

TEST_CASE("every op passes the gradcheck suite") {
  const auto checks = run_gradcheck_suite(gradcheck_toy_config());
  std::set<std::string> names;
  for (const auto& c : checks) {
    INFO(c.op);
    CHECK(c.passed);
    CHECK(names.insert(c.op).second);
  }
  for (const char* op : {"conv1d.same", "batchnorm1d.train", "gelu", "maxpool1d", "adaptive_avg_pool", "linear",
                         "multihead_self_attention", "softmax_cross_entropy", "mse", "l2_penalty", "model.full"}) {
    CHECK(names.count(op) == 1);
  }
  const auto broken = run_gradcheck_suite(gradcheck_toy_config(), 1e-4, "gelu");
  for (const auto& c : broken) CHECK(c.passed == (c.op != "gelu"));
}

TEST_CASE("ops are deterministic") {
  Rng a(9), b(9);
  auto x1 = random_tensor({2, 3, 5}, a), x2 = random_tensor({2, 3, 5}, b);
  auto w1 = random_tensor({4, 3, 3}, a), w2 = random_tensor({4, 3, 3}, b);
  auto y1 = gelu(conv1d(x1, w1, Tensor::zeros({4}), Padding::same));
  auto y2 = gelu(conv1d(x2, w2, Tensor::zeros({4}), Padding::same));
  CHECK(testing::max_abs_diff(y1.data(), y2.data()) == 0.0);
}

TEST_CASE("adam") {
  AdamState st = AdamState::for_size(3, 0.001);
  std::vector<double> p{0.5, -1.0, 2.0};
  const std::vector<double> g{0.01, -3.0, 0.002};
  adam_step(p, g, st);
  CHECK(st.step_count == 1);
  CHECK(p[0] == doctest::Approx(0.5 - 0.001).epsilon(1e-6));
  CHECK(std::abs(p[1] - (-1.0 + 0.001)) < 1e-6);
  CHECK(std::abs(p[2] - (2.0 - 0.001)) < 1e-6);

  AdamState z = AdamState::for_size(2, 0.01);
  std::vector<double> q{1.0, -4.0};
  for (int i = 0; i < 20; ++i) adam_step(q, std::vector<double>{0, 0}, z);
  CHECK(q[0] == 1.0);
  CHECK(q[1] == -4.0);

  AdamState s = AdamState::for_size(1, 0.05);
  std::vector<double> x{1.0};
  for (int i = 0; i < 500; ++i) adam_step(x, std::vector<double>{2 * x[0]}, s);
  CHECK(std::abs(x[0]) < 1e-2);

  std::vector<double> bad{1.0};
  AdamState sb = AdamState::for_size(1, 0.1);
  CHECK_THROWS_WITH_AS(adam_step(bad, std::vector<double>{NAN}, sb, "head.weight"), doctest::Contains("head.weight"),
                       NumericalError);
}

TEST_CASE("rng streams are stable and independent") {
  CHECK(derive_seed(0, "init") == derive_seed(0, "init"));
  CHECK(derive_seed(0, "init") != derive_seed(0, "shuffle"));
  CHECK(derive_seed(0, "init", 0) != derive_seed(0, "init", 1));
  Rng r(42);
  auto p = r.permutation(10);
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
  double m = 0;
  Rng n(1);
  for (int i = 0; i < 10000; ++i) m += n.uniform();
  CHECK(std::abs(m / 10000 - 0.5) < 0.02);
}

}  // TEST_SUITE
