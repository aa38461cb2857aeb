#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "star/losses.hpp"

using namespace star;
using star::testing::random_mask;
using star::testing::random_tensor;

namespace {

// Naive, independent re-evaluation: -[y log p + (1 - y) log(1 - p)] averaged.
double naive_bce(const Tensor<double>& l, const Tensor<double>& y) {
  long double s = 0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    const long double p = 1.0L / (1.0L + std::exp(-static_cast<long double>(l[i])));
    s -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
  }
  return static_cast<double>(s / l.size());
}

ChangeStarOutput<double> random_output(std::mt19937_64& rng, bool with_bwd = true) {
  ChangeStarOutput<double> o{random_tensor<double>(2, 1, 6, 6, rng, -3, 3),
                             random_tensor<double>(2, 1, 6, 6, rng, -3, 3),
                             random_tensor<double>(2, 1, 6, 6, rng, -3, 3), std::nullopt};
  if (with_bwd) o.change_bwd = random_tensor<double>(2, 1, 6, 6, rng, -3, 3);
  return o;
}

}  // namespace

TEST_CASE("bce: zero logits give ln 2 for either target") {
  Tensor<double> l(1, 1, 4, 4, 0.0);
  CHECK(std::abs(bce(l, Tensor<double>(1, 1, 4, 4, 0.0)) - std::log(2.0)) <= 1e-9);
  CHECK(std::abs(bce(l, Tensor<double>(1, 1, 4, 4, 1.0)) - std::log(2.0)) <= 1e-9);
}

TEST_CASE("bce: saturated correct logits give almost zero, saturated wrong ones stay finite") {
  Tensor<double> pos(1, 1, 2, 2, 30.0), y1(1, 1, 2, 2, 1.0);
  CHECK(bce(pos, y1) < 1e-6);
  Tensor<double> neg(1, 1, 2, 2, -30.0), y0(1, 1, 2, 2, 0.0);
  CHECK(bce(neg, y0) < 1e-6);
  Tensor<float> huge(1, 1, 1, 1, 1e4f), zero(1, 1, 1, 1, 0.0f);
  CHECK(bce(huge, zero) == doctest::Approx(1e4));
}

TEST_CASE("bce matches the naive formula for moderate logits") {
  std::mt19937_64 rng(1);
  auto l = random_tensor<double>(2, 1, 8, 8, rng, -5, 5);
  auto y = random_mask<double>(2, 8, 8, rng);
  CHECK(bce(l, y) == doctest::Approx(naive_bce(l, y)).epsilon(1e-12));
}

TEST_CASE("bce rejects non-binary targets and shape mismatch") {
  Tensor<double> l(1, 1, 2, 2), y(1, 1, 2, 2, 0.5);
  CHECK_THROWS_AS(bce(l, y), ContractError);
  CHECK_THROWS_AS(bce(l, Tensor<double>(1, 1, 2, 3)), ContractError);
}

TEST_CASE("bce_grad equals sigmoid minus target over count") {
  std::mt19937_64 rng(2);
  auto l = random_tensor<double>(1, 1, 3, 3, rng, -2, 2);
  auto y = random_mask<double>(1, 3, 3, rng);
  auto g = bce_grad(l, y, 2.0);
  for (std::size_t i = 0; i < l.size(); ++i)
    CHECK(g[i] == doctest::Approx(2.0 * (1 / (1 + std::exp(-l[i])) - y[i]) / 9.0));
}

TEST_CASE("symmetry_change_loss is the mean of both order terms") {
  std::mt19937_64 rng(3);
  auto o = random_output(rng);
  auto y = random_mask<double>(2, 6, 6, rng);
  const double a = naive_bce(o.change_fwd, y), b = naive_bce(*o.change_bwd, y);
  const double l = symmetry_change_loss(o, y);
  CHECK(std::abs(l - 0.5 * (a + b)) <= 1e-10 * std::abs(l));
}

TEST_CASE("symmetry_change_loss needs the second order") {
  std::mt19937_64 rng(4);
  auto o = random_output(rng, false);
  CHECK_THROWS_AS(symmetry_change_loss(o, random_mask<double>(2, 6, 6, rng)), ContractError);
}

TEST_CASE("seg_loss averages the two times and requires both labels") {
  std::mt19937_64 rng(5);
  auto o = random_output(rng);
  auto y1 = random_mask<double>(2, 6, 6, rng), y2 = random_mask<double>(2, 6, 6, rng);
  CHECK(seg_loss(o, &y1, &y2) == doctest::Approx(0.5 * (naive_bce(o.seg_t1, y1) + naive_bce(o.seg_t2, y2))));
  CHECK_THROWS_AS(seg_loss(o, &y1, static_cast<const Tensor<double>*>(nullptr)), ConfigError);
}

TEST_CASE("total_loss honours the component flags") {
  std::mt19937_64 rng(6);
  auto o = random_output(rng);
  auto y1 = random_mask<double>(2, 6, 6, rng), y2 = random_mask<double>(2, 6, 6, rng);
  auto yc = random_mask<double>(2, 6, 6, rng);
  const double seg = seg_loss(o, &y1, &y2);
  const double fwd = bce(o.change_fwd, yc);
  const double sym = symmetry_change_loss(o, yc);

  auto full = total_loss(o, &y1, &y2, yc, {true, true});
  CHECK(full.total == doctest::Approx(seg + sym));
  CHECK(total_loss(o, &y1, &y2, yc, {false, false}).total == doctest::Approx(fwd));
  CHECK(total_loss(o, &y1, &y2, yc, {true, false}).total == doctest::Approx(seg + fwd));
  CHECK(total_loss(o, static_cast<const Tensor<double>*>(nullptr), static_cast<const Tensor<double>*>(nullptr), yc, {false, true}).total == doctest::Approx(sym));
}

TEST_CASE("total_loss_with_grads agrees with total_loss and zeroes unused terms") {
  std::mt19937_64 rng(7);
  auto o = random_output(rng);
  auto y1 = random_mask<double>(2, 6, 6, rng), y2 = random_mask<double>(2, 6, 6, rng);
  auto yc = random_mask<double>(2, 6, 6, rng);
  auto lg = total_loss_with_grads(o, &y1, &y2, yc, {false, false});
  CHECK(lg.loss.total == doctest::Approx(total_loss(o, &y1, &y2, yc, {false, false}).total));
  for (std::size_t i = 0; i < lg.grads.seg_t1.size(); ++i) CHECK(lg.grads.seg_t1[i] == 0.0);
  if (lg.grads.change_bwd)
    for (std::size_t i = 0; i < lg.grads.change_bwd->size(); ++i) CHECK((*lg.grads.change_bwd)[i] == 0.0);
}
