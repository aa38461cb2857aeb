#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "star/pairing.hpp"

using namespace star;

namespace {

BinaryMask random_mask(int h, int w, Rng& rng, double p = 0.5) {
  std::bernoulli_distribution b(p);
  BinaryMask m(h, w);
  for (auto& v : m.values()) v = b(rng) ? 1 : 0;
  return m;
}

// Per-pixel truth table, independent of the implementation's loop.
std::uint8_t truth_table(bool a, bool b, LabelMode mode) {
  if (mode == LabelMode::Xor) return (a && !b) || (!a && b) ? 1 : 0;
  return (a || b) ? 1 : 0;
}

}  // namespace

TEST_CASE("sample_derangement: n = 2 has a single answer") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) CHECK(sample_derangement(2, rng).indices() == std::vector<int>{1, 0});
}

TEST_CASE("sample_derangement: n = 3 yields only the two derangements from enumeration") {
  // Enumerate S_3 and keep the permutations without fixed points.
  std::set<std::vector<int>> allowed;
  std::vector<int> p{0, 1, 2};
  do {
    bool fixed = false;
    for (int i = 0; i < 3; ++i) fixed |= p[i] == i;
    if (!fixed) allowed.insert(p);
  } while (std::next_permutation(p.begin(), p.end()));
  REQUIRE(allowed == std::set<std::vector<int>>{{1, 2, 0}, {2, 0, 1}});

  Rng rng(7);
  std::set<std::vector<int>> seen;
  for (int i = 0; i < 200; ++i) {
    auto d = sample_derangement(3, rng).indices();
    CHECK(allowed.count(d) == 1);
    seen.insert(d);
  }
  CHECK(seen == allowed);
}

TEST_CASE("sample_derangement: n < 2 is an invalid batch") {
  Rng rng(0);
  CHECK_THROWS_AS(sample_derangement(1, rng), ContractError);
  CHECK_THROWS_AS(sample_derangement(0, rng), ContractError);
}

TEST_CASE("sample_derangement: deterministic per seed") {
  Rng a(42), b(42);
  for (int n = 2; n < 12; ++n) CHECK(sample_derangement(n, a) == sample_derangement(n, b));
}

TEST_CASE("sample_derangement: every derangement of 4 is reachable") {
  Rng rng(3);
  std::set<std::vector<int>> seen;
  for (int i = 0; i < 2000; ++i) seen.insert(sample_derangement(4, rng).indices());
  CHECK(seen.size() == 9);  // D(4) = 9
}

TEST_CASE("Derangement rejects fixed points and non-permutations") {
  CHECK_THROWS_AS(Derangement({0, 1}), ContractError);
  CHECK_THROWS_AS(Derangement({1, 1}), ContractError);
  CHECK_THROWS_AS(Derangement({1, 2, 3}), ContractError);
  CHECK_NOTHROW(Derangement({2, 0, 1}));
}

TEST_CASE("assign_change_labels: identities") {
  Rng rng(5);
  const auto a = random_mask(16, 16, rng);
  const auto b = random_mask(16, 16, rng);
  const BinaryMask zero(16, 16);

  CHECK(assign_change_labels(a, a, LabelMode::Xor).count() == 0);
  CHECK(assign_change_labels(a, zero, LabelMode::Xor) == a);
  CHECK(assign_change_labels(a, b, LabelMode::Xor) == assign_change_labels(b, a, LabelMode::Xor));
  CHECK(assign_change_labels(a, b, LabelMode::Or) == assign_change_labels(b, a, LabelMode::Or));
}

TEST_CASE("assign_change_labels: disjoint masks give the union under xor") {
  BinaryMask a(4, 4), b(4, 4), uni(4, 4);
  a.at(0, 0) = 1;
  a.at(1, 2) = 1;
  b.at(3, 3) = 1;
  uni.at(0, 0) = uni.at(1, 2) = uni.at(3, 3) = 1;
  CHECK(assign_change_labels(a, b, LabelMode::Xor) == uni);
}

TEST_CASE("assign_change_labels: overlapping foreground is a negative under xor") {
  BinaryMask a(2, 2, 1), b(2, 2);
  b.at(0, 0) = 1;
  const auto xo = assign_change_labels(a, b, LabelMode::Xor);
  const auto orr = assign_change_labels(a, b, LabelMode::Or);
  CHECK(xo.at(0, 0) == 0);
  CHECK(orr.at(0, 0) == 1);
  CHECK(xo.count() == 3);
}

TEST_CASE("assign_change_labels: 64x64 masks match the truth table") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = random_mask(64, 64, rng, 0.3);
    const auto b = random_mask(64, 64, rng, 0.3);
    for (auto mode : {LabelMode::Xor, LabelMode::Or}) {
      const auto out = assign_change_labels(a, b, mode);
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) REQUIRE(out.at(y, x) == truth_table(a.at(y, x), b.at(y, x), mode));
    }
  }
}

TEST_CASE("assign_change_labels: shape mismatch is a contract error") {
  CHECK_THROWS_AS(assign_change_labels(BinaryMask(2, 2), BinaryMask(2, 3), LabelMode::Xor),
                  ContractError);
}

TEST_CASE("make_pseudo_pair_batch: explicit permutation unrolls the definition") {
  Rng rng(9);
  RasterBatch x;
  MaskBatch y;
  for (int i = 0; i < 3; ++i) {
    x.emplace_back(3, 8, 8, 0.1f * (i + 1));
    y.push_back(random_mask(8, 8, rng));
  }
  const Derangement perm({1, 2, 0});
  const auto p = make_pseudo_pair_batch(x, y, perm);
  CHECK(p.x2[0] == x[1]);
  CHECK(p.x2[1] == x[2]);
  CHECK(p.x2[2] == x[0]);
  for (int i = 0; i < 3; ++i) {
    CHECK(p.x1[i] == x[i]);
    CHECK(p.y2[i] == y[perm[i]]);
    for (int yy = 0; yy < 8; ++yy)
      for (int xx = 0; xx < 8; ++xx)
        CHECK(p.change[i].at(yy, xx) == truth_table(y[i].at(yy, xx), y[perm[i]].at(yy, xx), LabelMode::Xor));
  }
}

TEST_CASE("make_pseudo_pair_batch: empty labels give empty change for any permutation") {
  Rng rng(2);
  RasterBatch x(5, Raster(3, 4, 4));
  MaskBatch y(5, BinaryMask(4, 4));
  for (int t = 0; t < 5; ++t) {
    const auto p = make_pseudo_pair_batch(x, y, rng);
    for (const auto& c : p.change) CHECK(c.count() == 0);
  }
}

TEST_CASE("make_pseudo_pair_batch: reproducible and invalid for a single sample") {
  Rng gen(4);
  RasterBatch x;
  MaskBatch y;
  for (int i = 0; i < 6; ++i) {
    x.emplace_back(3, 4, 4, 0.1f * i);
    y.push_back(random_mask(4, 4, gen));
  }
  Rng a(100), b(100);
  const auto pa = make_pseudo_pair_batch(x, y, a);
  const auto pb = make_pseudo_pair_batch(x, y, b);
  CHECK(pa.perm == pb.perm);
  CHECK(pa.x2 == pb.x2);
  CHECK(pa.change == pb.change);

  Rng r(0);
  CHECK_THROWS_AS(make_pseudo_pair_batch({x[0]}, {y[0]}, r), ContractError);
}

TEST_CASE("make_pseudo_pair_batch: non-binary masks are rejected") {
  RasterBatch x(2, Raster(1, 2, 2));
  MaskBatch y(2, BinaryMask(2, 2));
  y[1].values()[0] = 255;
  Rng r(0);
  CHECK_THROWS_AS(make_pseudo_pair_batch(x, y, r), ContractError);
}
