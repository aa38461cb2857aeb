#include "star/raster.hpp"

#include <algorithm>
#include <cmath>

namespace star {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

bool BinaryMask::is_binary() const {
  return std::all_of(values_.begin(), values_.end(), [](std::uint8_t v) { return v <= 1; });
}

template <typename T>
Tensor<T> to_tensor(std::span<const Raster> batch) {
  require(!batch.empty(), "to_tensor: empty batch");
  const auto& first = batch.front();
  Tensor<T> out(static_cast<int>(batch.size()), first.channels(), first.height(), first.width());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = batch[i];
    require(r.channels() == first.channels() && r.height() == first.height() &&
                r.width() == first.width(),
            "to_tensor: rasters differ in shape");
    std::transform(r.values().begin(), r.values().end(), out.sample(static_cast<int>(i)).data(),
                   [](float v) { return static_cast<T>(v); });
  }
  return out;
}

template <typename T>
Tensor<T> to_tensor(std::span<const BinaryMask> batch) {
  require(!batch.empty(), "to_tensor: empty batch");
  const auto& first = batch.front();
  Tensor<T> out(static_cast<int>(batch.size()), 1, first.height(), first.width());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& m = batch[i];
    require(m.same_shape(first), "to_tensor: masks differ in shape");
    std::transform(m.values().begin(), m.values().end(), out.sample(static_cast<int>(i)).data(),
                   [](std::uint8_t v) { return static_cast<T>(v); });
  }
  return out;
}

template <typename T>
MaskBatch binarize_probabilities(const Tensor<T>& probs, double threshold) {
  require(probs.c() == 1, "binarize: expected a single-channel map");
  MaskBatch out;
  out.reserve(probs.n());
  for (int i = 0; i < probs.n(); ++i) {
    BinaryMask m(probs.h(), probs.w());
    auto src = probs.sample(i);
    for (std::size_t p = 0; p < src.size(); ++p) m.values()[p] = src[p] > threshold ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

template <typename T>
MaskBatch binarize_logits(const Tensor<T>& logits, double threshold) {
  Tensor<T> probs = logits;
  for (auto& v : probs.vec()) v = T(1) / (T(1) + std::exp(-v));
  return binarize_probabilities(probs, threshold);
}

template Tensor<float> to_tensor<float>(std::span<const Raster>);
template Tensor<double> to_tensor<double>(std::span<const Raster>);
template Tensor<float> to_tensor<float>(std::span<const BinaryMask>);
template Tensor<double> to_tensor<double>(std::span<const BinaryMask>);
template MaskBatch binarize_probabilities<float>(const Tensor<float>&, double);
template MaskBatch binarize_probabilities<double>(const Tensor<double>&, double);
template MaskBatch binarize_logits<float>(const Tensor<float>&, double);
template MaskBatch binarize_logits<double>(const Tensor<double>&, double);

}  // namespace star
