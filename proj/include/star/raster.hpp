#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "star/errors.hpp"
#include "star/tensor.hpp"

namespace star {

/// Dense image tile, channel-major, values in [0, 1].
class Raster {
 public:
  Raster() = default;
  Raster(int channels, int height, int width, float fill = 0.0f)
      : channels_(channels), height_(height), width_(width),
        values_(static_cast<std::size_t>(channels) * height * width, fill) {}

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  float& at(int c, int y, int x) { return values_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  float at(int c, int y, int x) const {
    return values_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  std::vector<float>& values() { return values_; }
  const std::vector<float>& values() const { return values_; }

  bool operator==(const Raster&) const = default;

 private:
  int channels_ = 0, height_ = 0, width_ = 0;
  std::vector<float> values_;
};

/// Per-pixel {0,1} label grid.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 0)
      : height_(height), width_(width), values_(static_cast<std::size_t>(height) * width, fill) {
    require(fill <= 1, "BinaryMask: fill must be 0 or 1");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  std::uint8_t& at(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  std::vector<std::uint8_t>& values() { return values_; }
  const std::vector<std::uint8_t>& values() const { return values_; }

  std::size_t count() const;
  bool is_binary() const;
  bool same_shape(const BinaryMask& o) const { return height_ == o.height_ && width_ == o.width_; }

  bool operator==(const BinaryMask&) const = default;

 private:
  int height_ = 0, width_ = 0;
  std::vector<std::uint8_t> values_;
};

using RasterBatch = std::vector<Raster>;
using MaskBatch = std::vector<BinaryMask>;

/// Pack a batch of equally-shaped rasters into NCHW.
template <typename T>
Tensor<T> to_tensor(std::span<const Raster> batch);

/// Pack masks as an N×1×H×W tensor of 0/1 targets.
template <typename T>
Tensor<T> to_tensor(std::span<const BinaryMask> batch);

/// Binarize an N×1×H×W logit tensor: pixel is 1 when sigmoid(logit) > threshold.
template <typename T>
MaskBatch binarize_logits(const Tensor<T>& logits, double threshold = 0.5);

/// Binarize an N×1×H×W probability tensor: pixel is 1 when p > threshold.
template <typename T>
MaskBatch binarize_probabilities(const Tensor<T>& probs, double threshold = 0.5);

}  // namespace star
