#include "doctest.h"
#include "fusionboost/tensor.hpp"

#include <cmath>
#include <cstring>

using namespace fb;

namespace {

// --- Finite-difference oracle (independent of the backward implementations).
// Numeric partial derivative of an arbitrary scalar function via central
// differences; used to validate every analytic gradient in this file.
template <typename F>
double numeric_partial(F&& loss, double* p, double h = 1e-5) {
  const double orig = *p;
  *p = orig + h;
  const double lp = loss();
  *p = orig - h;
  const double lm = loss();
  *p = orig;
  return (lp - lm) / (2.0 * h);
}

double rel_diff(double a, double b) {
  const double d = std::max({std::abs(a), std::abs(b), 1e-9});
  return std::abs(a - b) / d;
}

TensorT<double> random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  TensorT<double> t(n, c, h, w);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

ConvLayerT<double> random_conv(int cin, int cout, Rng& rng) {
  ConvLayerT<double> l;
  l.in_channels = cin;
  l.out_channels = cout;
  l.weight = random_tensor(cout, cin, 3, 3, rng, -0.5, 0.5);
  l.bias.resize(cout);
  for (auto& b : l.bias) b = rng.uniform(-0.2, 0.2);
  return l;
}

// Weighted sum of all elements; a scalar loss that probes every output.
double weighted_sum(const TensorT<double>& t, const TensorT<double>& r) {
  double acc = 0;
  for (std::int64_t i = 0; i < t.size(); ++i) acc += t.data[i] * r.data[i];
  return acc;
}

}  // namespace

TEST_CASE("conv2d_forward: all-ones 3x3 hand case") {
  Tensor4 x(1, 1, 3, 3);
  x.fill(1.0f);
  ConvLayer l;
  l.in_channels = l.out_channels = 1;
  l.weight = Tensor4(1, 1, 3, 3);
  l.weight.fill(1.0f);
  l.bias = {0.0f};

  Tensor4 y = conv2d_forward(x, l);
  REQUIRE(y.n == 1);
  REQUIRE(y.c == 1);
  REQUIRE(y.h == 3);
  REQUIRE(y.w == 3);
  // Zero padding: the window sum is the count of in-bounds ones.
  CHECK(y.at(0, 0, 1, 1) == 9.0f);
  CHECK(y.at(0, 0, 0, 1) == 6.0f);
  CHECK(y.at(0, 0, 1, 0) == 6.0f);
  CHECK(y.at(0, 0, 0, 0) == 4.0f);
  CHECK(y.at(0, 0, 2, 2) == 4.0f);
}

TEST_CASE("conv2d_forward: output shape and channel mismatch") {
  Rng rng(11);
  ConvLayer l = make_conv(3, 5, rng);
  Tensor4 x(2, 3, 7, 9);
  Tensor4 y = conv2d_forward(x, l);
  CHECK(y.n == 2);
  CHECK(y.c == 5);
  CHECK(y.h == 7);
  CHECK(y.w == 9);

  Tensor4 bad(2, 4, 7, 9);
  CHECK_THROWS_AS(conv2d_forward(bad, l), ContractError);
}

TEST_CASE("conv2d_backward: ones hand case") {
  Tensor4 x(1, 1, 3, 3);
  x.fill(1.0f);
  ConvLayer l;
  l.in_channels = l.out_channels = 1;
  l.weight = Tensor4(1, 1, 3, 3);
  l.weight.fill(1.0f);
  l.bias = {0.0f};
  Tensor4 gout(1, 1, 3, 3);
  gout.fill(1.0f);  // loss = sum of outputs

  ConvGradsT<float> g = conv2d_backward(gout, x, l);
  // dX mirrors the forward overlap counts.
  CHECK(g.input.at(0, 0, 1, 1) == 9.0f);
  CHECK(g.input.at(0, 0, 0, 1) == 6.0f);
  CHECK(g.input.at(0, 0, 0, 0) == 4.0f);
  // dW counts how often each tap saw an in-bounds pixel.
  const float expect_w[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (int k = 0; k < 9; ++k) CHECK(g.weight.data[k] == expect_w[k]);
  CHECK(g.bias[0] == 9.0f);
}

TEST_CASE("conv2d_backward matches the finite-difference oracle") {
  Rng rng(101);
  ConvLayerT<double> l = random_conv(3, 2, rng);
  TensorT<double> x = random_tensor(2, 3, 5, 4, rng);
  TensorT<double> y = conv2d_forward(x, l);
  TensorT<double> r = random_tensor(y.n, y.c, y.h, y.w, rng);

  ConvGradsT<double> g = conv2d_backward(r, x, l);
  const auto loss = [&]() { return weighted_sum(conv2d_forward(x, l), r); };

  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(rel_diff(g.input.data[i], numeric_partial(loss, &x.data[i])) < 1e-6);
  for (std::int64_t i = 0; i < l.weight.size(); ++i)
    CHECK(rel_diff(g.weight.data[i], numeric_partial(loss, &l.weight.data[i])) < 1e-6);
  for (std::size_t i = 0; i < l.bias.size(); ++i)
    CHECK(rel_diff(g.bias[i], numeric_partial(loss, &l.bias[i])) < 1e-6);
}

TEST_CASE("conv2d linearity in the input when bias is zero") {
  Rng rng(7);
  ConvLayer l = make_conv(2, 3, rng);
  l.bias.assign(l.bias.size(), 0.0f);
  Tensor4 x(1, 2, 6, 6);
  for (auto& v : x.data) v = float(rng.uniform(-1, 1));
  Tensor4 x2 = x;
  for (auto& v : x2.data) v *= 2.0f;

  Tensor4 y = conv2d_forward(x, l);
  Tensor4 y2 = conv2d_forward(x2, l);
  for (std::int64_t i = 0; i < y.size(); ++i)
    CHECK(rel_diff(2.0 * y.data[i], y2.data[i]) < 1e-6);
}

TEST_CASE("conv2d determinism: identical runs are bit-exact") {
  Rng rng(42);
  ConvLayer l = make_conv(4, 4, rng);
  Tensor4 x(1, 4, 16, 16);
  for (auto& v : x.data) v = float(rng.uniform(0, 1));
  Tensor4 a = conv2d_forward(x, l);
  Tensor4 b = conv2d_forward(x, l);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("leaky_relu forward/backward") {
  Tensor4 x(1, 1, 1, 4);
  x.data = {-1.0f, 0.0f, 2.0f, -0.5f};
  Tensor4 y = leaky_relu_forward(x, 0.2f);
  CHECK(y.data[0] == -0.2f);
  CHECK(y.data[1] == 0.0f);
  CHECK(y.data[2] == 2.0f);
  CHECK(y.data[3] == doctest::Approx(-0.1f));

  Tensor4 gout(1, 1, 1, 4);
  gout.fill(1.0f);
  Tensor4 g = leaky_relu_backward(gout, x, 0.2f);
  CHECK(g.data[0] == 0.2f);
  CHECK(g.data[2] == 1.0f);

  CHECK_THROWS_AS(leaky_relu_forward(x, 1.5f), ContractError);
}

TEST_CASE("leaky_relu backward matches the finite-difference oracle") {
  Rng rng(13);
  TensorT<double> x = random_tensor(1, 2, 4, 4, rng);
  // Keep inputs away from the kink where central differences are invalid.
  for (auto& v : x.data)
    if (std::abs(v) < 0.05) v = 0.1;
  TensorT<double> r = random_tensor(1, 2, 4, 4, rng);
  const double slope = 0.2;
  TensorT<double> g = leaky_relu_backward(r, x, slope);
  const auto loss = [&]() { return weighted_sum(leaky_relu_forward(x, slope), r); };
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(rel_diff(g.data[i], numeric_partial(loss, &x.data[i])) < 1e-6);
}

TEST_CASE("sigmoid forward: midpoint and saturation") {
  Tensor4 x(1, 1, 1, 3);
  x.data = {0.0f, 100.0f, -100.0f};
  Tensor4 y = sigmoid_forward(x);
  CHECK(y.data[0] == 0.5f);
  CHECK(y.data[1] == doctest::Approx(1.0f));
  CHECK(y.data[2] == doctest::Approx(0.0f));
  CHECK(std::isfinite(y.data[1]));
  CHECK(std::isfinite(y.data[2]));
}

TEST_CASE("sigmoid backward matches the finite-difference oracle") {
  Rng rng(17);
  TensorT<double> x = random_tensor(1, 1, 3, 5, rng, -3, 3);
  TensorT<double> r = random_tensor(1, 1, 3, 5, rng);
  TensorT<double> y = sigmoid_forward(x);
  TensorT<double> g = sigmoid_backward(r, y);
  const auto loss = [&]() { return weighted_sum(sigmoid_forward(x), r); };
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(rel_diff(g.data[i], numeric_partial(loss, &x.data[i])) < 1e-6);
}

TEST_CASE("l1_loss: value, subgradient and shape checks") {
  Tensor4 p(1, 1, 1, 2);
  p.data = {1.0f, 2.0f};
  Tensor4 t(1, 1, 1, 2);
  t.data = {0.0f, 0.0f};
  auto r = l1_loss(p, t);
  CHECK(r.loss == doctest::Approx(1.5f));
  CHECK(r.grad.data[0] == 0.5f);
  CHECK(r.grad.data[1] == 0.5f);

  Tensor4 eq(1, 1, 1, 2);
  eq.data = {1.0f, 2.0f};
  auto rz = l1_loss(p, eq);
  CHECK(rz.loss == 0.0f);
  CHECK(rz.grad.data[0] == 0.0f);  // sign(0) = 0

  Tensor4 bad(1, 1, 2, 1);
  CHECK_THROWS_AS(l1_loss(p, bad), ContractError);
}

TEST_CASE("adam_step: hand-computed first step") {
  std::vector<float> param = {1.0f};
  std::vector<float> grad = {1.0f};
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.1f;
  adam_step(param, grad, st, cfg);
  CHECK(param[0] == doctest::Approx(0.9f).epsilon(1e-6));
  CHECK(st.t == 1);
}

TEST_CASE("adam_step: rejects non-finite gradients") {
  std::vector<float> param = {1.0f, 2.0f};
  std::vector<float> grad = {0.1f, std::numeric_limits<float>::quiet_NaN()};
  AdamState st;
  AdamConfig cfg;
  CHECK_THROWS_WITH_AS(adam_step(param, grad, st, cfg),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("adam_step: drives a quadratic toward its minimum") {
  // min (p - 3)^2, gradient 2(p - 3)
  std::vector<float> param = {0.0f};
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.05f;
  for (int i = 0; i < 500; ++i) {
    std::vector<float> grad = {2.0f * (param[0] - 3.0f)};
    adam_step(param, grad, st, cfg);
  }
  CHECK(std::abs(param[0] - 3.0f) < 0.1f);
}

TEST_CASE("net_forward composes layers and caches for backward") {
  Rng rng(5);
  ConvNet net;
  net.layers.push_back(make_conv(1, 4, rng));
  net.layers.push_back(make_conv(4, 1, rng));
  net.acts = {Act::LeakyRelu, Act::Sigmoid};

  Tensor4 x(1, 1, 6, 6);
  for (auto& v : x.data) v = float(rng.uniform(0, 1));
  Tensor4 y = net_forward(net, x);
  CHECK(y.c == 1);
  CHECK(y.h == 6);
  for (float v : y.data) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }

  NetCacheT<float> cache = net_forward_cached(net, x);
  for (std::int64_t i = 0; i < y.size(); ++i) CHECK(cache.post.back().data[i] == y.data[i]);
}

TEST_CASE("grad_check: composed nets pass at 1e-3") {
  Rng rng(7);
  ConvNet net;
  net.layers.push_back(make_conv(1, 3, rng));
  net.layers.push_back(make_conv(3, 1, rng));
  net.acts = {Act::LeakyRelu, Act::LeakyRelu};
  Tensor4 x(1, 1, 5, 5);
  for (auto& v : x.data) v = float(rng.uniform(0.2, 1.0));
  CHECK(grad_check(net, x) < 1e-3);
}

TEST_CASE("grad_check: zero net and zero input report zero error") {
  ConvNet net;
  ConvLayer l;
  l.in_channels = l.out_channels = 1;
  l.weight = Tensor4(1, 1, 3, 3);
  l.bias = {0.0f};
  net.layers.push_back(l);
  net.acts = {Act::None};
  Tensor4 x(1, 1, 4, 4);
  CHECK(grad_check(net, x) == 0.0);
}

TEST_CASE("no NaN propagation through a composed net on extreme inputs") {
  Rng rng(23);
  ConvNet net;
  net.layers.push_back(make_conv(2, 8, rng));
  net.layers.push_back(make_conv(8, 8, rng));
  net.layers.push_back(make_conv(8, 1, rng));
  net.acts = {Act::LeakyRelu, Act::LeakyRelu, Act::Sigmoid};

  Tensor4 x(1, 2, 8, 8);
  for (auto& v : x.data) v = float(rng.uniform(-1e3, 1e3));
  NetCacheT<float> cache = net_forward_cached(net, x);
  for (float v : cache.post.back().data) CHECK(std::isfinite(v));

  Tensor4 target(1, 1, 8, 8);
  auto l1 = l1_loss(cache.post.back(), target);
  NetGradsT<float> g = net_backward(net, cache, l1.grad);
  for (const auto& wt : g.weight)
    for (float v : wt.data) CHECK(std::isfinite(v));
  for (float v : g.input.data) CHECK(std::isfinite(v));
}
