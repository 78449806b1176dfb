#include <cmath>
#include <functional>

#include "doctest.h"
#include "qareid/layers.hpp"
#include "qareid/rng.hpp"
#include "qareid/tensor.hpp"

using namespace qareid;

namespace {

// Scalar objective: weighted sum of the layer output, fixed weights.
double weighted_sum(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
  return s;
}

// Central-difference check of dx and every param grad against `run`, which
// must evaluate the full forward pass from scratch.
void check_gradients(Tensor& x, std::vector<Param*> params,
                     const std::function<Tensor()>& run, const Tensor& dx,
                     const Tensor& dy_weights, double tol = 1e-6, int64_t stride = 1) {
  const double eps = 1e-5;
  for (int64_t i = 0; i < x.numel(); i += stride) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = weighted_sum(run(), dy_weights);
    x[i] = keep - eps;
    const double dn = weighted_sum(run(), dy_weights);
    x[i] = keep;
    const double want = (up - dn) / (2 * eps);
    CHECK(dx[i] == doctest::Approx(want).epsilon(tol).scale(1.0));
  }
  for (Param* p : params) {
    for (int64_t i = 0; i < p->value.numel(); i += stride) {
      const double keep = p->value[i];
      p->value[i] = keep + eps;
      const double up = weighted_sum(run(), dy_weights);
      p->value[i] = keep - eps;
      const double dn = weighted_sum(run(), dy_weights);
      p->value[i] = keep;
      const double want = (up - dn) / (2 * eps);
      CHECK(p->grad[i] == doctest::Approx(want).epsilon(tol).scale(1.0));
    }
  }
}

}  // namespace

TEST_CASE("conv layer gradients") {
  Rng rng(201);
  Conv2d conv("c", 2, 3, 3, 1, 1);
  conv.init(rng);
  Tensor x = Tensor::randn({2, 2, 5, 4}, rng);
  const Tensor y0 = conv.forward(x);
  const Tensor dyw = Tensor::randn(y0.shape(), rng);

  conv.weight.zero_grad();
  conv.bias.zero_grad();
  conv.forward(x);
  const Tensor dx = conv.backward(dyw);
  check_gradients(x, conv.params(), [&] { return conv.forward(x); }, dx, dyw, 1e-6, 5);
}

TEST_CASE("strided conv without bias") {
  Rng rng(203);
  Conv2d conv("c", 3, 4, 3, 2, 1, false);
  conv.init(rng);
  CHECK(conv.bias.value.numel() == 0);
  CHECK(conv.params().size() == 1);
  Tensor x = Tensor::randn({1, 3, 8, 6}, rng);
  const Tensor y = conv.forward(x);
  CHECK(y.dim(2) == 4);
  CHECK(y.dim(3) == 3);
  const Tensor dyw = Tensor::randn(y.shape(), rng);
  conv.weight.zero_grad();
  conv.forward(x);
  const Tensor dx = conv.backward(dyw);
  check_gradients(x, conv.params(), [&] { return conv.forward(x); }, dx, dyw, 1e-6, 7);
}

TEST_CASE("linear layer gradients and shapes") {
  Rng rng(207);
  Linear lin("l", 6, 4);
  lin.init(rng);
  Tensor x = Tensor::randn({3, 6}, rng);
  const Tensor y = lin.forward(x);
  REQUIRE(y.dim(0) == 3);
  REQUIRE(y.dim(1) == 4);
  const Tensor dyw = Tensor::randn(y.shape(), rng);
  lin.weight.zero_grad();
  lin.bias.zero_grad();
  lin.forward(x);
  const Tensor dx = lin.backward(dyw);
  check_gradients(x, lin.params(), [&] { return lin.forward(x); }, dx, dyw);
}

TEST_CASE("linear forward is an affine map") {
  Linear lin("l", 2, 2);
  lin.weight.value.at(0, 0) = 1.0;
  lin.weight.value.at(0, 1) = 2.0;
  lin.weight.value.at(1, 0) = -1.0;
  lin.weight.value.at(1, 1) = 0.5;
  lin.bias.value[0] = 0.25;
  lin.bias.value[1] = -0.25;
  Tensor x({1, 2});
  x[0] = 3.0;
  x[1] = -2.0;
  const Tensor y = lin.forward(x);
  CHECK(y[0] == doctest::Approx(3.0 - 4.0 + 0.25));
  CHECK(y[1] == doctest::Approx(-3.0 - 1.0 - 0.25));
}

TEST_CASE("relu forward, backward and dead-zone") {
  ReLU relu;
  Tensor x({5});
  const double vals[5] = {-2.0, -1e-9, 0.0, 1e-9, 3.0};
  for (int i = 0; i < 5; ++i) x[i] = vals[i];
  const Tensor y = relu.forward(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 0.0);
  CHECK(y[3] == doctest::Approx(1e-9));
  CHECK(y[4] == 3.0);
  Tensor dy({5});
  dy.fill(1.0);
  const Tensor dx = relu.backward(dy);
  CHECK(dx[0] == 0.0);
  CHECK(dx[1] == 0.0);
  CHECK(dx[3] == 1.0);
  CHECK(dx[4] == 1.0);
}

TEST_CASE("sigmoid values and gradient") {
  Sigmoid sig;
  Tensor x({3});
  x[0] = 0.0;
  x[1] = 2.0;
  x[2] = -2.0;
  const Tensor y = sig.forward(x);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
  CHECK(y[1] + y[2] == doctest::Approx(1.0));
  Tensor dy({3});
  dy.fill(1.0);
  const Tensor dx = sig.backward(dy);
  for (int i = 0; i < 3; ++i) CHECK(dx[i] == doctest::Approx(y[i] * (1.0 - y[i])));
  CHECK(sigmoid_scalar(0.0) == doctest::Approx(0.5));
  CHECK(sigmoid_scalar(710.0) == doctest::Approx(1.0));   // no overflow
  CHECK(sigmoid_scalar(-710.0) == doctest::Approx(0.0));
}

TEST_CASE("max pooling picks maxima and routes gradients to them") {
  MaxPool2d pool(2, 2, 0);
  Tensor x({1, 1, 4, 4});
  for (int64_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  const Tensor y = pool.forward(x);
  REQUIRE(y.dim(2) == 2);
  REQUIRE(y.dim(3) == 2);
  CHECK(y.at(0, 0, 0, 0) == 5.0);
  CHECK(y.at(0, 0, 0, 1) == 7.0);
  CHECK(y.at(0, 0, 1, 0) == 13.0);
  CHECK(y.at(0, 0, 1, 1) == 15.0);
  Tensor dy({1, 1, 2, 2});
  dy.fill(1.0);
  const Tensor dx = pool.backward(dy);
  double s = 0.0;
  for (int64_t i = 0; i < 16; ++i) s += dx[i];
  CHECK(s == 4.0);
  CHECK(dx[5] == 1.0);
  CHECK(dx[7] == 1.0);
  CHECK(dx[13] == 1.0);
  CHECK(dx[15] == 1.0);
  CHECK(dx[0] == 0.0);
}

TEST_CASE("padded pooling ignores the zero border for interior maxima") {
  MaxPool2d pool(3, 2, 1);
  Rng rng(211);
  Tensor x = Tensor::rand_uniform({2, 3, 7, 5}, rng, 0.1, 1.0);
  const Tensor y = pool.forward(x);
  CHECK(y.dim(2) == 4);
  CHECK(y.dim(3) == 3);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] >= 0.1);
}

TEST_CASE("batch norm training mode normalizes by batch statistics") {
  Rng rng(213);
  BatchNorm bn("bn", 3);
  const Tensor x = Tensor::randn({16, 3, 4, 2}, rng, 3.0);
  const Tensor y = bn.forward(x, true);
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    int64_t count = 0;
    for (int64_t n = 0; n < 16; ++n)
      for (int64_t r = 0; r < 4; ++r)
        for (int64_t col = 0; col < 2; ++col) {
          mean += y.at(n, c, r, col);
          ++count;
        }
    mean /= static_cast<double>(count);
    for (int64_t n = 0; n < 16; ++n)
      for (int64_t r = 0; r < 4; ++r)
        for (int64_t col = 0; col < 2; ++col) {
          const double d = y.at(n, c, r, col) - mean;
          var += d * d;
        }
    var /= static_cast<double>(count);
    CHECK(mean == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batch norm eval mode uses running statistics") {
  Rng rng(217);
  BatchNorm bn("bn", 2);
  // freshly constructed: running mean 0, var 1 -> eval is near-identity
  const Tensor x = Tensor::randn({8, 2}, rng, 2.0);
  const Tensor y = bn.forward(x, false);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1.0 + 1e-5)).epsilon(1e-9));

  // after many training steps on a shifted distribution the running stats
  // move toward it, so eval recenters accordingly
  for (int step = 0; step < 200; ++step) {
    const Tensor xt = Tensor::randn({32, 2}, rng, 0.5);
    Tensor shifted = xt;
    for (int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 5.0;
    bn.forward(shifted, true);
  }
  CHECK(bn.running_mean[0] == doctest::Approx(5.0).epsilon(0.05));
  CHECK(bn.running_var[0] == doctest::Approx(0.25).epsilon(0.15));
  Tensor probe({1, 2});
  probe[0] = 5.0;
  probe[1] = 5.0;
  const Tensor out = bn.forward(probe, false);
  CHECK(out[0] == doctest::Approx(0.0).scale(1.0).epsilon(0.05));
}

TEST_CASE("batch norm eval mode does not change running statistics") {
  Rng rng(219);
  BatchNorm bn("bn", 3);
  bn.forward(Tensor::randn({8, 3}, rng), true);
  const Tensor rm = bn.running_mean;
  const Tensor rv = bn.running_var;
  bn.forward(Tensor::randn({8, 3}, rng, 7.0), false);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(bn.running_mean[i] == rm[i]);
    CHECK(bn.running_var[i] == rv[i]);
  }
}

TEST_CASE("batch norm gradients (2d and 4d)") {
  Rng rng(223);
  for (int ndim : {2, 4}) {
    BatchNorm bn("bn", 3);
    bn.gamma.value.fill(1.3);
    bn.beta.value.fill(-0.2);
    Tensor x = ndim == 2 ? Tensor::randn({5, 3}, rng) : Tensor::randn({3, 3, 2, 2}, rng);
    const Tensor y0 = bn.forward(x, true);
    const Tensor dyw = Tensor::randn(y0.shape(), rng);
    bn.gamma.zero_grad();
    bn.beta.zero_grad();
    bn.forward(x, true);
    const Tensor dx = bn.backward(dyw);

    // reset running stats before every probe so train-mode forwards are pure
    auto run = [&] {
      bn.running_mean.zero();
      bn.running_var.fill(1.0);
      return bn.forward(x, true);
    };
    check_gradients(x, bn.params(), run, dx, dyw, 1e-5);
  }
}

TEST_CASE("batch norm exposes named running state") {
  BatchNorm bn("stem.bn", 4);
  const auto st = bn.state();
  REQUIRE(st.size() == 2);
  CHECK(st[0].first == "stem.bn.running_mean");
  CHECK(st[1].first == "stem.bn.running_var");
  CHECK(st[0].second->numel() == 4);
}
