#include "star/pairing.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace star {

namespace {
constexpr int kMaxRejections = 64;
}

Derangement::Derangement(std::vector<int> indices) : indices_(std::move(indices)) {
  const int n = static_cast<int>(indices_.size());
  require(n >= 2, "Derangement: batch size " + std::to_string(n) + " has no derangement");
  std::vector<bool> seen(n, false);
  for (int i = 0; i < n; ++i) {
    const int v = indices_[i];
    require(v >= 0 && v < n && !seen[v], "Derangement: not a permutation");
    require(v != i, "Derangement: fixed point at " + std::to_string(i));
    seen[v] = true;
  }
}

Derangement sample_derangement(int n, Rng& rng) {
  require(n >= 2, "sample_derangement: STAR pairing needs a batch of at least 2, got " +
                      std::to_string(n));
  std::vector<int> p(n);
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    bool fixed = false;
    for (int i = 0; i < n && !fixed; ++i) fixed = p[i] == i;
    if (!fixed) return Derangement(std::move(p));
  }
  for (int i = 0; i < n; ++i) p[i] = (i + 1) % n;
  return Derangement(std::move(p));
}

LabelMode parse_label_mode(std::string_view s) {
  if (s == "xor") return LabelMode::Xor;
  if (s == "or") return LabelMode::Or;
  throw ContractError("unknown label mode '" + std::string(s) + "' (expected xor or or)");
}

std::string_view to_string(LabelMode m) { return m == LabelMode::Xor ? "xor" : "or"; }

BinaryMask assign_change_labels(const BinaryMask& a, const BinaryMask& b, LabelMode mode) {
  require(a.same_shape(b), "assign_change_labels: mask shapes differ");
  BinaryMask out(a.height(), a.width());
  const auto& va = a.values();
  const auto& vb = b.values();
  auto& vo = out.values();
  if (mode == LabelMode::Xor) {
    for (std::size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] ^ vb[i];
  } else {
    for (std::size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] | vb[i];
  }
  return out;
}

MaskBatch assign_change_labels(std::span<const BinaryMask> a, std::span<const BinaryMask> b,
                               LabelMode mode) {
  require(a.size() == b.size(), "assign_change_labels: batch sizes differ");
  MaskBatch out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(assign_change_labels(a[i], b[i], mode));
  return out;
}

PseudoPairBatch make_pseudo_pair_batch(RasterBatch x, MaskBatch y, const Derangement& perm,
                                       LabelMode mode) {
  const std::size_t n = x.size();
  require(y.size() == n, "make_pseudo_pair_batch: image and mask counts differ");
  require(perm.size() == n, "make_pseudo_pair_batch: permutation length differs from batch");
  for (std::size_t i = 0; i < n; ++i) {
    require(x[i].height() == y[i].height() && x[i].width() == y[i].width(),
            "make_pseudo_pair_batch: image/mask shape mismatch at " + std::to_string(i));
    require(x[i].height() == x[0].height() && x[i].width() == x[0].width() &&
                x[i].channels() == x[0].channels(),
            "make_pseudo_pair_batch: samples differ in shape");
    require(y[i].is_binary(), "make_pseudo_pair_batch: non-binary mask");
  }
  PseudoPairBatch out;
  out.perm = perm;
  out.x2.reserve(n);
  out.y2.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.x2.push_back(x[perm[i]]);
    out.y2.push_back(y[perm[i]]);
  }
  out.change = assign_change_labels(y, out.y2, mode);
  out.x1 = std::move(x);
  out.y1 = std::move(y);
  return out;
}

PseudoPairBatch make_pseudo_pair_batch(RasterBatch x, MaskBatch y, Rng& rng, LabelMode mode) {
  require(x.size() >= 2, "make_pseudo_pair_batch: STAR pairing needs a batch of at least 2");
  const auto perm = sample_derangement(static_cast<int>(x.size()), rng);
  return make_pseudo_pair_batch(std::move(x), std::move(y), perm, mode);
}

}  // namespace star
