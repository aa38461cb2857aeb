#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "star/random.hpp"
#include "star/raster.hpp"

namespace star {

/// Fixed-point-free permutation of batch indices {0, ..., n-1}.
class Derangement {
 public:
  /// Throws ContractError unless `indices` is a permutation without fixed points.
  explicit Derangement(std::vector<int> indices);

  std::size_t size() const { return indices_.size(); }
  int operator[](std::size_t i) const { return indices_[i]; }
  const std::vector<int>& indices() const { return indices_; }

  bool operator==(const Derangement&) const = default;

 private:
  std::vector<int> indices_;
};

/// Draw a derangement of length n by rejection over uniform permutations. After 64
/// rejected draws the rotation [1, 2, ..., n-1, 0] is returned instead.
/// Throws ContractError for n < 2.
Derangement sample_derangement(int n, Rng& rng);

enum class LabelMode { Xor, Or };

LabelMode parse_label_mode(std::string_view s);
std::string_view to_string(LabelMode m);

/// Change label from two semantic masks. Xor marks pixels covered at exactly one time;
/// Or marks pixels covered at either (kept for the label-assignment ablation).
BinaryMask assign_change_labels(const BinaryMask& a, const BinaryMask& b, LabelMode mode);
MaskBatch assign_change_labels(std::span<const BinaryMask> a, std::span<const BinaryMask> b,
                               LabelMode mode);

/// One STAR step's input: a batch paired with its own permutation.
struct PseudoPairBatch {
  RasterBatch x1;
  RasterBatch x2;  // x2[i] == x1[perm[i]]
  MaskBatch y1;
  MaskBatch y2;  // y2[i] == y1[perm[i]]
  MaskBatch change;
  Derangement perm{{1, 0}};
};

PseudoPairBatch make_pseudo_pair_batch(RasterBatch x, MaskBatch y, Rng& rng,
                                       LabelMode mode = LabelMode::Xor);

/// Same as above with a caller-chosen permutation.
PseudoPairBatch make_pseudo_pair_batch(RasterBatch x, MaskBatch y, const Derangement& perm,
                                       LabelMode mode = LabelMode::Xor);

}  // namespace star
