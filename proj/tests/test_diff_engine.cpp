#include <cmath>
#include <cstring>

#include "doctest.h"
#include "oracles.hpp"
#include "reconformer/gradcheck.hpp"
#include "reconformer/ops.hpp"
#include "reconformer/params.hpp"
#include "reconformer/rng.hpp"
#include "test_util.hpp"

using namespace reconformer;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Weighted sum against fixed random coefficients; catches permutation and
// sign errors that a plain sum would miss.
Tensor64 weighted_sum(const Tensor64& t, std::uint64_t seed) {
  Tensor64 w = random_tensor<double>(t.shape(), seed);
  return sum_all(mul(t, w));
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  auto x = random_tensor<float>(Shape{1, 5, 5, 2}, 1);
  std::vector<float> w = {1, 0, 0, 1};  // [1,1,2,2] identity over channels
  auto weight = Tensor::from_data(Shape{1, 1, 2, 2}, w);
  auto y = conv2d(x, weight, Tensor(), 1, Padding::Same);
  CHECK(max_abs_diff(y.value(), x.value()) == 0.0);
}

TEST_CASE("conv2d: all-ones 3x3 kernel computes box counts") {
  auto x = Tensor::full(Shape{1, 5, 5, 1}, 1.0f);
  auto weight = Tensor::full(Shape{3, 3, 1, 1}, 1.0f);
  auto y = conv2d(x, weight, Tensor(), 1, Padding::Same);
  CHECK(y.value()[2 * 5 + 2] == 9.0f);  // interior
  CHECK(y.value()[0] == 4.0f);          // corner
  CHECK(y.value()[1] == 6.0f);          // edge
}

TEST_CASE("conv2d matches the six-loop oracle in float64") {
  auto x = random_tensor<double>(Shape{1, 4, 4, 2}, 2);
  auto w = random_tensor<double>(Shape{3, 3, 2, 3}, 3);
  auto b = random_tensor<double>(Shape{3}, 4);
  for (int stride : {1, 2}) {
    auto y = conv2d(x, w, b, stride, Padding::Same);
    auto expected = oracles::conv2d_naive(x.value(), 1, 4, 4, 2, w.value(), 3, 3, b.value(), stride);
    CHECK(max_abs_diff(y.value(), expected) < 1e-10);
  }
}

TEST_CASE("conv2d: transposed stride-2 doubles the extent and is the adjoint") {
  auto x = random_tensor<double>(Shape{1, 4, 4, 3}, 5);
  auto w = random_tensor<double>(Shape{3, 3, 3, 2}, 6);
  auto y = conv2d(x, w, Tensor64(), 2, Padding::Same, /*transposed=*/true);
  CHECK(y.shape() == Shape{1, 8, 8, 2});

  // Adjoint identity: <conv(u), x> == <u, tconv(x)> with tied weights.
  auto u = random_tensor<double>(Shape{1, 8, 8, 2}, 7);
  std::vector<double> wt(w.size());  // [3,3,2,3] with channel axes swapped
  for (int t = 0; t < 9; ++t)
    for (int a = 0; a < 3; ++a)
      for (int bch = 0; bch < 2; ++bch)
        wt[(t * 2 + bch) * 3 + a] = w.value()[(t * 3 + a) * 2 + bch];
  auto conv_u = conv2d(u, Tensor64::from_data(Shape{3, 3, 2, 3}, wt), Tensor64(), 2, Padding::Same);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < conv_u.size(); ++i) lhs += conv_u.value()[i] * x.value()[i];
  for (std::size_t i = 0; i < y.size(); ++i) rhs += y.value()[i] * u.value()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv2d validates geometry") {
  auto x = random_tensor<float>(Shape{1, 4, 4, 2}, 8);
  CHECK_THROWS_AS(conv2d(x, random_tensor<float>(Shape{3, 3, 3, 2}, 9), Tensor(), 1, Padding::Same),
                  Error);
  CHECK_THROWS_AS(conv2d(x, random_tensor<float>(Shape{3, 3, 2, 2}, 9), Tensor(), 3, Padding::Same),
                  Error);
}

TEST_CASE("layer_norm: constant channels collapse to beta") {
  auto x = Tensor::full(Shape{2, 2, 4}, 3.25f);
  auto gamma = Tensor::full(Shape{4}, 1.0f);
  std::vector<float> beta_v = {0.5f, -1.0f, 0.0f, 2.0f};
  auto beta = Tensor::from_data(Shape{4}, beta_v);
  auto y = layer_norm(x, gamma, beta);
  for (int pos = 0; pos < 4; ++pos)
    for (int c = 0; c < 4; ++c)
      CHECK(y.value()[pos * 4 + c] == doctest::Approx(beta_v[c]).epsilon(1e-4));
}

TEST_CASE("layer_norm: two-point standardization") {
  auto x = Tensor::from_data(Shape{1, 2}, {1.0f, 3.0f});
  auto y = layer_norm(x, Tensor::full(Shape{2}, 1.0f), Tensor::full(Shape{2}, 0.0f));
  CHECK(y.value()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.value()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm: per-position statistics on random input") {
  auto x = random_tensor<double>(Shape{3, 5, 8}, 10, -2.0, 2.0);
  auto y = layer_norm(x, Tensor64::full(Shape{8}, 1.0), Tensor64::full(Shape{8}, 0.0), 1e-12);
  for (int pos = 0; pos < 15; ++pos) {
    double mean = 0, var = 0;
    for (int c = 0; c < 8; ++c) mean += y.value()[pos * 8 + c];
    mean /= 8;
    for (int c = 0; c < 8; ++c) {
      double d = y.value()[pos * 8 + c] - mean;
      var += d * d;
    }
    var /= 8;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("softmax: uniform rows, stabilization, finite-difference Jacobian") {
  auto u = softmax(Tensor::full(Shape{1, 6}, 2.5f), 1);
  for (float v : u.value()) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-6));

  auto big = softmax(Tensor::from_data(Shape{1, 2}, {1000.0f, 0.0f}), 1);
  CHECK(big.value()[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(big.value()[1] == doctest::Approx(0.0).epsilon(1e-6));

  auto x = random_tensor<double>(Shape{1, 7}, 11);
  double err = finite_diff_gradcheck(
      [](const Tensor64& t) { return weighted_sum(softmax(t, 1), 12); }, x, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("matmul: identity, hand case, and triple-loop oracle") {
  auto a = Tensor::from_data(Shape{2, 2}, {1, 2, 3, 4});
  auto eye = Tensor::from_data(Shape{2, 2}, {1, 0, 0, 1});
  auto y = matmul(a, eye);
  CHECK(max_abs_diff(y.value(), a.value()) == 0.0);

  auto m = random_tensor<double>(Shape{3, 4}, 13);
  auto n = random_tensor<double>(Shape{4, 2}, 14);
  auto prod = matmul(m, n);
  auto expected = oracles::matmul_naive(m.value(), n.value(), 3, 4, 2);
  CHECK(max_abs_diff(prod.value(), expected) < 1e-12);

  CHECK_THROWS_AS(matmul(m, random_tensor<double>(Shape{3, 2}, 15)), Error);
}

TEST_CASE("matmul: rank-2 rhs broadcasts over leading axes") {
  auto a = random_tensor<double>(Shape{4, 3, 5}, 16);
  auto b = random_tensor<double>(Shape{5, 2}, 17);
  auto y = matmul(a, b);
  CHECK(y.shape() == Shape{4, 3, 2});
  for (int t = 0; t < 4; ++t) {
    std::vector<double> slice(a.value().begin() + t * 15, a.value().begin() + (t + 1) * 15);
    auto expected = oracles::matmul_naive(slice, b.value(), 3, 5, 2);
    for (int i = 0; i < 6; ++i) CHECK(y.value()[t * 6 + i] == doctest::Approx(expected[i]));
  }
}

TEST_CASE("elementwise: add identity, relu clamps, gelu derivative") {
  auto x = random_tensor<float>(Shape{3, 3}, 18);
  auto y = add(x, Tensor::full(Shape{1}, 0.0f));
  CHECK(max_abs_diff(y.value(), x.value()) == 0.0);

  auto r = relu(Tensor::from_data(Shape{2}, {-1.0f, 2.0f}));
  CHECK(r.value()[0] == 0.0f);
  CHECK(r.value()[1] == 2.0f);

  // 100 random scalars, gradient vs central differences
  Rng rng(19);
  for (int i = 0; i < 100; ++i) {
    auto s = Tensor64::from_data(Shape{1}, {rng.next_range(-3.0, 3.0)});
    double err = finite_diff_gradcheck([](const Tensor64& t) { return sum_all(gelu(t)); }, s, 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("concat_channels: identity, slice recovery, gradient split") {
  auto a = random_tensor<float>(Shape{2, 2, 2}, 20);
  auto single = concat_channels<float>({a});
  CHECK(max_abs_diff(single.value(), a.value()) == 0.0);

  auto b = random_tensor<float>(Shape{2, 2, 2}, 21, -1.0, 1.0, true);
  auto a2 = random_tensor<float>(Shape{2, 2, 2}, 22, -1.0, 1.0, true);
  auto cat = concat_channels<float>({a2, b});
  CHECK(cat.shape() == Shape{2, 2, 4});
  for (int pos = 0; pos < 4; ++pos)
    for (int c = 0; c < 2; ++c) {
      CHECK(cat.value()[pos * 4 + c] == a2.value()[pos * 2 + c]);
      CHECK(cat.value()[pos * 4 + 2 + c] == b.value()[pos * 2 + c]);
    }

  sum_all(cat).backward();
  for (float g : a2.grad()) CHECK(g == 1.0f);
  for (float g : b.grad()) CHECK(g == 1.0f);
}

TEST_CASE("l1_loss: zero at equality, |c| at constant offset, sign gradient") {
  auto p = random_tensor<float>(Shape{4, 4}, 23);
  CHECK(l1_loss(p, p).item() == 0.0f);

  auto q = add(p, Tensor::full(Shape{1}, -0.75f));
  CHECK(l1_loss(q, p).item() == doctest::Approx(0.75).epsilon(1e-6));

  // gradient = sign(p - t)/N away from ties
  auto pred = Tensor64::from_data(Shape{4}, {1.0, -2.0, 3.0, 0.5}, true);
  auto target = Tensor64::from_data(Shape{4}, {0.0, 1.0, 5.0, 0.25});
  l1_loss(pred, target).backward();
  std::vector<double> expected = {0.25, -0.25, -0.25, 0.25};
  CHECK(max_abs_diff(pred.grad(), expected) < 1e-12);

  double err = finite_diff_gradcheck(
      [&](const Tensor64& t) { return l1_loss(t, target); },
      random_tensor<double>(Shape{4}, 24, 2.0, 3.0), 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("backward: scalar leaf, product rule, usage errors") {
  auto x = Tensor64::from_data(Shape{1}, {2.5}, true);
  auto y = scale(x, 1.0);
  y.backward();
  CHECK(x.grad()[0] == 1.0);

  auto a = random_tensor<double>(Shape{3}, 25, -1, 1, true);
  auto b = random_tensor<double>(Shape{3}, 26, -1, 1, true);
  auto loss = sum_all(mul(a, b));
  loss.backward();
  CHECK(max_abs_diff(a.grad(), b.value()) < 1e-15);
  CHECK(max_abs_diff(b.grad(), a.value()) < 1e-15);

  CHECK_THROWS_AS(loss.backward(), Error);              // second backward
  CHECK_THROWS_AS(random_tensor<double>(Shape{3}, 27, -1, 1, true).backward(), Error);  // non-scalar
}

TEST_CASE("backward: reusing a freed interior node is rejected") {
  auto a = Tensor64::from_data(Shape{2}, {1.0, 2.0}, true);
  auto mid = scale(a, 2.0);
  sum_all(mid).backward();
  CHECK_THROWS_AS(sum_all(mid).backward(), Error);
}

TEST_CASE("backward: linearity of gradient accumulation") {
  const double alpha = 0.37;
  auto make_leaf = [] { return random_tensor<double>(Shape{4, 4}, 28, -1, 1, true); };

  auto x1 = make_leaf();
  weighted_sum(relu(x1), 29).backward();
  auto g1 = x1.grad();

  auto x2 = make_leaf();
  weighted_sum(gelu(x2), 30).backward();
  auto g2 = x2.grad();

  auto x3 = make_leaf();
  add(scale(weighted_sum(relu(x3), 29), alpha), weighted_sum(gelu(x3), 30)).backward();
  std::vector<double> combined(g1.size());
  for (std::size_t i = 0; i < g1.size(); ++i) combined[i] = alpha * g1[i] + g2[i];
  CHECK(max_abs_diff(x3.grad(), combined) < 1e-10);
}

TEST_CASE("determinism: identical seeds give bit-identical forward and backward") {
  auto run = [] {
    auto x = random_tensor<float>(Shape{2, 8, 8, 3}, 31, -1, 1, true);
    auto w = random_tensor<float>(Shape{3, 3, 3, 4}, 32, -1, 1, true);
    auto y = conv2d(x, w, Tensor(), 2, Padding::Same);
    auto loss = sum_all(mul(y, y));
    loss.backward();
    return std::make_tuple(loss.item(), x.grad(), w.grad());
  };
  auto [l1v, gx1, gw1] = run();
  auto [l2v, gx2, gw2] = run();
  CHECK(l1v == l2v);
  CHECK(std::memcmp(gx1.data(), gx2.data(), gx1.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(gw1.data(), gw2.data(), gw1.size() * sizeof(float)) == 0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore store(0);
  auto w = create_param_const(store, "w", Shape{3}, 1.5f);
  AdamState state = make_adam_state(store);
  w.node()->grad.assign(3, 0.0f);
  for (int i = 0; i < 5; ++i) adam_step(store, state);
  for (float v : w.value()) CHECK(v == 1.5f);
}

TEST_CASE("adam: first step moves by about lr in the gradient direction") {
  ParamStore store(0);
  auto w = create_param_const(store, "w", Shape{2}, 0.0f);
  AdamState state = make_adam_state(store, 2e-4);
  w.node()->grad = {0.3f, -0.7f};
  adam_step(store, state);
  CHECK(w.value()[0] == doctest::Approx(-2e-4).epsilon(1e-3));
  CHECK(w.value()[1] == doctest::Approx(2e-4).epsilon(1e-3));
}

TEST_CASE("adam: trajectory on f(w) = w^2 matches a scripted recurrence") {
  ParamStoreT<double> store(0);
  auto w = create_param_const(store, "w", Shape{1}, 1.0);
  AdamStateT<double> state = make_adam_state(store, 0.1);

  double rw = 1.0, rm = 0.0, rv = 0.0;
  for (int t = 1; t <= 3; ++t) {
    double g = 2.0 * w.value()[0];
    w.node()->grad = {g};
    adam_step(store, state);

    double rg = 2.0 * rw;
    rm = 0.9 * rm + 0.1 * rg;
    rv = 0.999 * rv + 0.001 * rg * rg;
    double mhat = rm / (1.0 - std::pow(0.9, t));
    double vhat = rv / (1.0 - std::pow(0.999, t));
    rw -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(std::fabs(w.value()[0] - rw) < 1e-10);
  }
}

TEST_CASE("adam: missing gradient is a usage error") {
  ParamStore store(0);
  create_param_const(store, "w", Shape{2}, 0.0f);
  AdamState state = make_adam_state(store);
  CHECK_THROWS_AS(adam_step(store, state), Error);
}

TEST_CASE("param store: counts, names, duplicate rejection") {
  ParamStore store(7);
  create_param_const(store, "a", Shape{3, 4}, 0.0f);
  create_param_const(store, "b", Shape{2}, 0.0f);
  CHECK(store.parameter_count() == 14);
  CHECK(store.names() == std::vector<std::string>{"a", "b"});
  CHECK_THROWS_AS(create_param_const(store, "a", Shape{1}, 0.0f), Error);
}

TEST_CASE("finite_diff_gradcheck: identity map has error at rounding level") {
  auto x = random_tensor<double>(Shape{5}, 33);
  double err = finite_diff_gradcheck([](const Tensor64& t) { return sum_all(t); }, x, 1e-5);
  CHECK(err < 1e-10);
}

TEST_CASE("finite_diff_gradcheck: softmax-matmul chain stays within 1e-4") {
  auto x = random_tensor<double>(Shape{3, 4}, 34);
  auto w = random_tensor<double>(Shape{4, 4}, 35);
  double err = finite_diff_gradcheck(
      [&](const Tensor64& t) { return weighted_sum(softmax(matmul(t, w), 1), 36); }, x, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("property: every differentiable op passes gradcheck on 10 random inputs") {
  struct Case {
    const char* name;
    std::function<Tensor64(const Tensor64&)> f;
    Shape shape;
  };
  auto b_fixed = random_tensor<double>(Shape{2, 3, 3}, 40);
  auto w_fixed = random_tensor<double>(Shape{3, 3, 2, 2}, 41);
  auto gamma = random_tensor<double>(Shape{4}, 42, 0.5, 1.5);
  auto beta = random_tensor<double>(Shape{4}, 43);

  std::vector<Case> cases = {
      {"add", [&](const Tensor64& t) { return weighted_sum(add(t, b_fixed), 50); }, Shape{2, 3, 3}},
      {"add_scalar",
       [&](const Tensor64& t) { return weighted_sum(add(b_fixed, t), 51); }, Shape{1}},
      {"add_bias",
       [&](const Tensor64& t) { return weighted_sum(add(b_fixed, t), 52); }, Shape{3}},
      {"sub", [&](const Tensor64& t) { return weighted_sum(sub(t, b_fixed), 53); }, Shape{2, 3, 3}},
      {"mul", [&](const Tensor64& t) { return weighted_sum(mul(t, b_fixed), 54); }, Shape{2, 3, 3}},
      {"mul_scalar",
       [&](const Tensor64& t) { return weighted_sum(mul(b_fixed, t), 55); }, Shape{1}},
      {"scale", [](const Tensor64& t) { return weighted_sum(scale(t, -1.7), 56); }, Shape{2, 4}},
      {"relu", [](const Tensor64& t) { return weighted_sum(relu(t), 57); }, Shape{3, 5}},
      {"gelu", [](const Tensor64& t) { return weighted_sum(gelu(t), 58); }, Shape{3, 5}},
      {"softmax", [](const Tensor64& t) { return weighted_sum(softmax(t, 1), 59); }, Shape{3, 5}},
      {"layer_norm",
       [&](const Tensor64& t) { return weighted_sum(layer_norm(t, gamma, beta), 60); },
       Shape{2, 3, 4}},
      {"layer_norm_gamma",
       [&](const Tensor64& t) {
         auto x = random_tensor<double>(Shape{2, 3, 4}, 61);
         return weighted_sum(layer_norm(x, t, beta), 62);
       },
       Shape{4}},
      {"matmul_a",
       [&](const Tensor64& t) {
         auto b = random_tensor<double>(Shape{2, 4, 3}, 63);
         return weighted_sum(matmul(t, b), 64);
       },
       Shape{2, 3, 4}},
      {"matmul_b",
       [&](const Tensor64& t) {
         auto a = random_tensor<double>(Shape{2, 3, 4}, 65);
         return weighted_sum(matmul(a, t), 66);
       },
       Shape{2, 4, 3}},
      {"matmul_broadcast",
       [&](const Tensor64& t) {
         auto a = random_tensor<double>(Shape{2, 3, 4}, 67);
         return weighted_sum(matmul(a, t), 68);
       },
       Shape{4, 3}},
      {"transpose_last2",
       [](const Tensor64& t) { return weighted_sum(transpose_last2(t), 69); }, Shape{2, 3, 4}},
      {"reshape",
       [](const Tensor64& t) { return weighted_sum(reshape(t, Shape{6, 2}), 70); }, Shape{3, 4}},
      {"concat",
       [&](const Tensor64& t) {
         auto other = random_tensor<double>(Shape{2, 2, 3}, 71);
         return weighted_sum(concat_channels<double>({t, other}), 72);
       },
       Shape{2, 2, 2}},
      {"l1",
       [&](const Tensor64& t) {
         auto target = random_tensor<double>(Shape{3, 3}, 73, 2.0, 3.0);
         return l1_loss(t, target);  // inputs in [-1,1]: no ties
       },
       Shape{3, 3}},
      {"conv",
       [&](const Tensor64& t) {
         return weighted_sum(conv2d(t, w_fixed, Tensor64(), 2, Padding::Same), 74);
       },
       Shape{1, 4, 4, 2}},
      {"conv_weight",
       [&](const Tensor64& t) {
         auto x = random_tensor<double>(Shape{1, 4, 4, 2}, 75);
         return weighted_sum(conv2d(x, t, Tensor64(), 1, Padding::Same), 76);
       },
       Shape{3, 3, 2, 2}},
      {"conv_valid",
       [&](const Tensor64& t) {
         return weighted_sum(conv2d(t, w_fixed, Tensor64(), 1, Padding::Valid), 77);
       },
       Shape{1, 5, 5, 2}},
      {"tconv",
       [&](const Tensor64& t) {
         return weighted_sum(conv2d(t, w_fixed, Tensor64(), 2, Padding::Same, true), 78);
       },
       Shape{1, 3, 3, 2}},
      {"tconv_weight",
       [&](const Tensor64& t) {
         auto x = random_tensor<double>(Shape{1, 3, 3, 2}, 79);
         return weighted_sum(conv2d(x, t, Tensor64(), 2, Padding::Same, true), 80);
       },
       Shape{3, 3, 2, 2}},
      {"conv_bias",
       [&](const Tensor64& t) {
         auto x = random_tensor<double>(Shape{1, 4, 4, 2}, 81);
         return weighted_sum(conv2d(x, w_fixed, t, 1, Padding::Same), 82);
       },
       Shape{2}},
      {"fft2c",
       [](const Tensor64& t) { return weighted_sum(fft2c_op(t), 83); }, Shape{4, 4, 2}},
      {"ifft2c",
       [](const Tensor64& t) { return weighted_sum(ifft2c_op(t), 84); }, Shape{4, 4, 2}},
      {"roll2d",
       [](const Tensor64& t) { return weighted_sum(roll2d(t, -1, 2), 85); }, Shape{4, 4, 3}},
      {"window_partition",
       [](const Tensor64& t) { return weighted_sum(window_partition_op(t, 2, 1), 86); },
       Shape{4, 4, 3}},
      {"window_merge",
       [](const Tensor64& t) { return weighted_sum(window_merge_op(t, 4, 4, 2, 1), 87); },
       Shape{4, 4, 3}},
      {"box_filter",
       [](const Tensor64& t) { return weighted_sum(box_filter_windows(t, 4, 3), 88); },
       Shape{2, 16, 3}},
      {"sum_all", [](const Tensor64& t) { return sum_all(mul(t, t)); }, Shape{4, 4}},
  };

  for (const auto& c : cases) {
    double worst = 0;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      auto x = random_tensor<double>(c.shape, 1000 + trial * 31);
      worst = std::max(worst, finite_diff_gradcheck(c.f, x, 1e-5));
    }
    INFO("op: " << c.name);
    CHECK(worst < 1e-4);
  }
}
