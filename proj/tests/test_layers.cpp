#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "star/nn/layers.hpp"

using namespace star;
using namespace star::nn;
using star::testing::random_tensor;

namespace {

// Direct 7-loop convolution.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, int stride, int pad) {
  const int k = w.h();
  const int ho = (x.h() + 2 * pad - k) / stride + 1, wo = (x.w() + 2 * pad - k) / stride + 1;
  Tensor<double> y(x.n(), w.n(), ho, wo);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < w.n(); ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double s = 0;
          for (int c = 0; c < x.c(); ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy >= 0 && iy < x.h() && ix >= 0 && ix < x.w()) s += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
          y.at(n, o, oy, ox) = s;
        }
  return y;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("Conv2d forward matches the direct loop") {
  std::mt19937_64 rng(1);
  for (auto [k, stride] : {std::pair{3, 1}, std::pair{3, 2}, std::pair{1, 1}}) {
    Conv2d<double> conv("c", 3, 4, k, stride, k / 2, false);
    Rng init(2);
    conv.init(init);
    std::vector<Param<double>*> ps;
    conv.collect(ps);
    auto x = random_tensor<double>(2, 3, 7, 6, rng, -1, 1);
    const auto y = conv.forward(x);
    const auto ref = naive_conv(x, ps[0]->value, stride, k / 2);
    REQUIRE(y.same_shape(ref));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("Conv2d backward is the adjoint of forward") {
  // <conv(x), g> == <x, conv^T(g)> for the input gradient.
  std::mt19937_64 rng(3);
  Conv2d<double> conv("c", 2, 3, 3, 2, 1, true);
  Rng init(4);
  conv.init(init);
  auto x = random_tensor<double>(2, 2, 9, 8, rng, -1, 1);
  auto y = conv.forward(x);
  auto g = random_tensor<double>(y.n(), y.c(), y.h(), y.w(), rng, -1, 1);
  std::vector<Param<double>*> ps;
  conv.collect(ps);
  const auto dx = conv.backward(g);
  // Remove bias contribution from <y, g>.
  double bias_term = 0;
  for (int n = 0; n < g.n(); ++n)
    for (int o = 0; o < g.c(); ++o)
      for (std::size_t j = 0; j < g.plane(); ++j) bias_term += ps[1]->value[o] * g.channel(n, o)[j];
  CHECK(dot(y, g) - bias_term == doctest::Approx(dot(x, dx)).epsilon(1e-10));
}

TEST_CASE("BilinearResize: x4 upsampling matches half-pixel interpolation") {
  Tensor<double> x(1, 1, 2, 2);
  x[0] = 0;
  x[1] = 1;
  x[2] = 2;
  x[3] = 3;
  BilinearResize<double> up;
  const auto y = up.forward(x, 8, 8);
  // Row coordinate of output 0 maps to -0.375 -> clamped to 0; output 4 maps to 1.125 -> clamped row 1.
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(0.0));
  CHECK(y.at(0, 0, 7, 7) == doctest::Approx(3.0));
  // Output (3, 3): src = 3.5 * 0.25 - 0.5 = 0.375 in both axes.
  const double v = (1 - 0.375) * (1 - 0.375) * 0 + (1 - 0.375) * 0.375 * 1 + 0.375 * (1 - 0.375) * 2 + 0.375 * 0.375 * 3;
  CHECK(y.at(0, 0, 3, 3) == doctest::Approx(v));
}

TEST_CASE("BilinearResize backward is the adjoint of forward") {
  std::mt19937_64 rng(5);
  auto x = random_tensor<double>(2, 3, 5, 4, rng);
  BilinearResize<double> up;
  auto y = up.forward(x, 17, 13);
  auto g = random_tensor<double>(2, 3, 17, 13, rng);
  CHECK(dot(y, g) == doctest::Approx(dot(x, up.backward(g))).epsilon(1e-12));
}

TEST_CASE("BatchNorm2d normalizes with batch statistics in training") {
  std::mt19937_64 rng(6);
  BatchNorm2d<double> bn("bn", 3);
  auto x = random_tensor<double>(4, 3, 5, 5, rng, 2, 5);
  auto y = bn.forward(x, Phase::Train);
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (int n = 0; n < 4; ++n)
      for (std::size_t j = 0; j < y.plane(); ++j) {
        s += y.channel(n, c)[j];
        s2 += y.channel(n, c)[j] * y.channel(n, c)[j];
      }
    const double m = 4.0 * 25;
    CHECK(s / m == doctest::Approx(0.0).scale(1));
    CHECK(s2 / m == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("BatchNorm2d: swapping batch halves permutes outputs bit-exactly") {
  std::mt19937_64 rng(7);
  auto a = random_tensor<float>(3, 4, 6, 6, rng, -2, 2);
  auto b = random_tensor<float>(3, 4, 6, 6, rng, -2, 2);
  BatchNorm2d<float> bn1("bn", 4), bn2("bn", 4);
  auto ab = bn1.forward(concat_batch(a, b), Phase::Train);
  auto ba = bn2.forward(concat_batch(b, a), Phase::Train);
  CHECK(slice_batch(ab, 0, 3) == slice_batch(ba, 3, 6));
  CHECK(slice_batch(ab, 3, 6) == slice_batch(ba, 0, 3));
}

TEST_CASE("BatchNorm2d inference uses running statistics") {
  BatchNorm2d<double> bn("bn", 1);
  Tensor<double> x(1, 1, 1, 3);
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  auto y = bn.forward(x, Phase::Infer);  // mean 0, var 1
  for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1 + 1e-5)));
}

TEST_CASE("ReLU passes gradient only where the output is positive") {
  ReLU<double> relu;
  Tensor<double> x(1, 1, 1, 4);
  x[0] = -1;
  x[1] = 0;
  x[2] = 2;
  x[3] = 0.5;
  auto y = relu.forward(x);
  CHECK(y[0] == 0);
  CHECK(y[2] == 2);
  auto g = relu.backward(Tensor<double>(1, 1, 1, 4, 1.0));
  CHECK(g[0] == 0);
  CHECK(g[1] == 0);
  CHECK(g[2] == 1);
  CHECK(g[3] == 1);
}
