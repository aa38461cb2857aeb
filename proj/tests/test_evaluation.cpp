#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <random>

#include "star/errors.hpp"
#include "star/evaluation.hpp"
#include "tmpdir.hpp"

using namespace star;

namespace {

BinaryMask random_mask(int h, int w, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution b(p);
  BinaryMask m(h, w);
  for (auto& v : m.values()) v = b(rng) ? 1 : 0;
  return m;
}

Raster random_raster(int c, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0, 1);
  Raster r(c, h, w);
  for (auto& v : r.values()) v = u(rng);
  return r;
}

ChangeStar<float> tiny_model(std::uint64_t seed) {
  ModelSpec s;
  s.base_width = 2;
  s.mixin = {2, 4};
  return make_changestar<float>(s, seed);
}

Raster crop(const Raster& r, int y0, int x0, int h, int w) {
  Raster out(r.channels(), h, w);
  for (int c = 0; c < r.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = r.at(c, y0 + y, x0 + x);
  return out;
}

}  // namespace

TEST_CASE("f1 equals 2 iou / (1 + iou) as exact rationals on random counts") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::uint64_t> u(0, 1'000'000);
  for (int i = 0; i < 1000; ++i) {
    ConfusionCounts c{u(rng), u(rng), u(rng), u(rng)};
    if (i % 10 == 0) c.tp = 0;
    // iou = a / b, f1 = 2tp / d; 2 iou / (1 + iou) = 2a / (a + b).
    const unsigned __int128 a = c.tp, b = c.tp + c.fp + c.fn, d = 2 * c.tp + c.fp + c.fn;
    if (b == 0) continue;
    CHECK(2 * a * d == 2 * c.tp * (a + b));
    const double i_ = iou(c);
    CHECK(f1(c) == doctest::Approx(2 * i_ / (1 + i_)).epsilon(1e-15));
  }
}

TEST_CASE("iou and f1 are zero when nothing is predicted or present") {
  ConfusionCounts c{0, 0, 0, 100};
  CHECK(iou(c) == 0.0);
  CHECK(f1(c) == 0.0);
  CHECK(iou({5, 0, 0, 0}) == 1.0);
  CHECK(f1({1, 1, 0, 0}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("accumulate equals a per-pixel brute-force count") {
  std::mt19937_64 rng(2);
  ConfusionCounts total, oracle;
  for (int t = 0; t < 20; ++t) {
    auto p = random_mask(13, 17, rng, 0.3), g = random_mask(13, 17, rng, 0.4);
    total = accumulate(total, p, g);
    for (int y = 0; y < 13; ++y)
      for (int x = 0; x < 17; ++x) {
        const bool a = p.at(y, x), b = g.at(y, x);
        if (a && b) ++oracle.tp;
        if (a && !b) ++oracle.fp;
        if (!a && b) ++oracle.fn;
        if (!a && !b) ++oracle.tn;
      }
  }
  CHECK(total == oracle);
  CHECK(total.total() == 20u * 13 * 17);
  CHECK_THROWS_AS(accumulate({}, BinaryMask(2, 2), BinaryMask(3, 2)), ContractError);
}

TEST_CASE("error maps categorize every pixel") {
  BinaryMask p(1, 4), g(1, 4);
  p.at(0, 0) = 1;
  g.at(0, 0) = 1;
  p.at(0, 1) = 1;
  g.at(0, 2) = 1;
  auto m = render_error_map(p, g);
  CHECK(m.at(0, 0) == ErrorCategory::TP);
  CHECK(m.at(0, 1) == ErrorCategory::FP);
  CHECK(m.at(0, 2) == ErrorCategory::FN);
  CHECK(m.at(0, 3) == ErrorCategory::TN);
  star::testing::TempDir dir("err");
  write_error_map(dir / "e.png", m);
  CHECK(std::filesystem::exists(dir / "e.png"));
}

TEST_CASE("window_origins covers the axis with the last window flush") {
  CHECK(window_origins(10, 16, 8) == std::vector<int>{0});
  CHECK(window_origins(32, 16, 16) == std::vector<int>{0, 16});
  CHECK(window_origins(40, 16, 16) == std::vector<int>{0, 16, 24});
  CHECK(window_origins(20, 8, 4) == std::vector<int>{0, 4, 8, 12});
  CHECK_THROWS_AS(window_origins(20, 4, 8), ContractError);
}

TEST_CASE("sliding window: an image smaller than the window equals direct inference") {
  std::mt19937_64 rng(3);
  auto model = tiny_model(3);
  std::vector<BitemporalSample> pairs;
  for (int i = 0; i < 3; ++i)
    pairs.push_back({"p" + std::to_string(i), random_raster(3, 24, 24, rng), random_raster(3, 24, 24, rng),
                     BinaryMask(24, 24), std::nullopt, std::nullopt});
  EvalOptions direct;
  EvalOptions windowed;
  windowed.window = 32;
  windowed.stride = 16;
  for (auto m : {Method::ChangeStar, Method::Pcc}) {
    auto a = predict_changes(model, pairs, m, direct);
    auto b = predict_changes(model, pairs, m, windowed);
    CHECK(a == b);
  }
}

TEST_CASE("sliding window: a non-overlapping stride equals the stitched blockwise oracle") {
  std::mt19937_64 rng(4);
  auto model = tiny_model(4);
  auto fn = change_probabilities(model);
  const auto t1 = random_raster(3, 32, 48, rng), t2 = random_raster(3, 32, 48, rng);
  const auto got = sliding_window_predict(fn, t1, t2, 16, 16);
  BinaryMask oracle(32, 48);
  for (int y0 = 0; y0 < 32; y0 += 16)
    for (int x0 = 0; x0 < 48; x0 += 16) {
      RasterBatch a{crop(t1, y0, x0, 16, 16)}, b{crop(t2, y0, x0, 16, 16)};
      auto x1 = to_tensor<float>(std::span<const Raster>(a));
      auto x2 = to_tensor<float>(std::span<const Raster>(b));
      auto block = binarize_logits(model.forward(x1, x2, nn::Phase::Infer).change_fwd, 0.5).front();
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) oracle.at(y0 + y, x0 + x) = block.at(y, x);
    }
  CHECK(got == oracle);
}

TEST_CASE("sliding window: overlapping windows average probabilities") {
  // A probability function that reports the window's own offset: overlapping cells average.
  int calls = 0;
  ChangeProbabilityFn fn = [&](const Tensor<float>& a, const Tensor<float>&) {
    Tensor<float> p(a.n(), 1, a.h(), a.w(), calls++ == 0 ? 1.0f : 0.0f);
    return p;
  };
  Raster img(1, 1, 12);
  auto m = sliding_window_predict(fn, img, img, 8, 4, 0.4);
  // windows at x = 0 and 4; cells 4..7 see 1 and 0 -> 0.5 > 0.4.
  CHECK(m.at(0, 0) == 1);
  CHECK(m.at(0, 5) == 1);
  CHECK(m.at(0, 9) == 0);
  calls = 0;
  CHECK(sliding_window_predict(fn, img, img, 8, 4, 0.6).at(0, 5) == 0);
}

TEST_CASE("predict_changes: empty set is a data error, batching does not change results") {
  auto model = tiny_model(5);
  CHECK_THROWS_AS(predict_changes(model, {}, Method::ChangeStar), DataError);
  std::mt19937_64 rng(5);
  std::vector<BitemporalSample> pairs;
  for (int i = 0; i < 5; ++i)
    pairs.push_back({"p", random_raster(3, 16, 16, rng), random_raster(3, 16, 16, rng), BinaryMask(16, 16),
                     std::nullopt, std::nullopt});
  EvalOptions one;
  one.batch = 1;
  CHECK(predict_changes(model, pairs, Method::ChangeStar) == predict_changes(model, pairs, Method::ChangeStar, one));
}

TEST_CASE("evaluate pools counts over tiles and compare_report exposes them") {
  auto model = tiny_model(6);
  std::mt19937_64 rng(6);
  std::vector<BitemporalSample> pairs;
  for (int i = 0; i < 3; ++i)
    pairs.push_back({"t" + std::to_string(i), random_raster(3, 16, 16, rng), random_raster(3, 16, 16, rng),
                     random_mask(16, 16, rng, 0.2), std::nullopt, std::nullopt});
  auto cs = evaluate(model, pairs, Method::ChangeStar);
  auto pc = evaluate(model, pairs, Method::Pcc);
  ConfusionCounts sum;
  for (const auto& t : cs.tiles) sum += t.counts;
  CHECK(sum == cs.counts);
  CHECK(cs.tiles.size() == 3);

  auto j = compare_report({cs, pc});
  CHECK(j["num_pairs"] == 3);
  CHECK(j["methods"]["changestar"]["tp"] == cs.counts.tp);
  CHECK(j["methods"]["pcc"]["tiles"].size() == 3);
  CHECK(j["methods"]["pcc"]["tiles"][0]["id"] == "t0");
  CHECK(j["delta"]["f1"].get<double>() == doctest::Approx(cs.f1() - pc.f1()));
  CHECK(j["delta"]["iou"].get<double>() == doctest::Approx(cs.iou() - pc.iou()));
}

TEST_CASE("parse_method") {
  CHECK(parse_method("pcc") == Method::Pcc);
  CHECK(to_string(Method::ChangeStar) == "changestar");
  CHECK_THROWS(parse_method("diff"));
}
