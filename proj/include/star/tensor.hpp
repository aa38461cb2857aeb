#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "star/errors.hpp"

namespace star {

/// Dense NCHW array. The batch dimension is the outermost.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {
    require(n >= 0 && c >= 0 && h >= 0 && w >= 0, "Tensor: negative dimension");
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }
  std::string shape_str() const {
    return "[" + std::to_string(n_) + "," + std::to_string(c_) + "," + std::to_string(h_) + "," +
           std::to_string(w_) + "]";
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  std::span<T> sample(int n) { return {data_.data() + n * sample_size(), sample_size()}; }
  std::span<const T> sample(int n) const {
    return {data_.data() + n * sample_size(), sample_size()};
  }
  T* channel(int n, int c) { return data_.data() + n * sample_size() + c * plane(); }
  const T* channel(int n, int c) const {
    return data_.data() + n * sample_size() + c * plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n_, c_, h_, w_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const Tensor& o) const = default;

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
  }

  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

/// Stack two batches along N.
template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.c() == b.c() && a.h() == b.h() && a.w() == b.w(),
          "concat_batch: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> out(a.n() + b.n(), a.c(), a.h(), a.w());
  std::copy(a.vec().begin(), a.vec().end(), out.data());
  std::copy(b.vec().begin(), b.vec().end(), out.data() + a.size());
  return out;
}

/// Samples [begin, end) of a batch.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int begin, int end) {
  require(0 <= begin && begin <= end && end <= t.n(), "slice_batch: bad range");
  Tensor<T> out(end - begin, t.c(), t.h(), t.w());
  std::copy(t.data() + begin * t.sample_size(), t.data() + end * t.sample_size(), out.data());
  return out;
}

/// Concatenate along the channel axis, per sample.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
          "concat_channels: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    auto sa = a.sample(i);
    auto sb = b.sample(i);
    T* dst = out.sample(i).data();
    std::copy(sa.begin(), sa.end(), dst);
    std::copy(sb.begin(), sb.end(), dst + sa.size());
  }
  return out;
}

/// Channels [begin, end) of every sample.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, int begin, int end) {
  require(0 <= begin && begin <= end && end <= t.c(), "slice_channels: bad range");
  Tensor<T> out(t.n(), end - begin, t.h(), t.w());
  for (int i = 0; i < t.n(); ++i) {
    std::copy(t.channel(i, begin), t.channel(i, begin) + (end - begin) * t.plane(),
              out.channel(i, 0));
  }
  return out;
}

/// Reorder samples: out[i] = t[order[i]].
template <typename T>
Tensor<T> gather_batch(const Tensor<T>& t, std::span<const int> order) {
  Tensor<T> out(static_cast<int>(order.size()), t.c(), t.h(), t.w());
  for (std::size_t i = 0; i < order.size(); ++i) {
    require(order[i] >= 0 && order[i] < t.n(), "gather_batch: index out of range");
    auto src = t.sample(order[i]);
    std::copy(src.begin(), src.end(), out.sample(static_cast<int>(i)).data());
  }
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  require(dst.same_shape(src), "add_inplace: shape mismatch " + dst.shape_str() + " vs " +
                                   src.shape_str());
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace star
