#pragma once

// Minimal dense-prediction layers with hand-written backward passes. Each layer caches
// what its backward pass needs from the most recent forward call, so a layer instance
// must be used exactly once per forward/backward round.

#include <string>
#include <vector>

#include "star/random.hpp"
#include "star/tensor.hpp"

namespace star::nn {

enum class Phase { Train, Infer };

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = false;  // receives weight decay
};

/// Per-channel sum over samples with a fixed pairwise tree over the batch axis. The top
/// split is at n/2, so swapping the two halves of an even batch gives bit-identical sums.
template <typename T>
std::vector<T> batch_channel_sum(const std::vector<T>& per_sample, int n, int c);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad,
         bool bias);

  /// He-normal weights (fan-in), zero bias.
  void init(Rng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates parameter gradients; returns d(input).
  Tensor<T> backward(const Tensor<T>& dy);

  void collect(std::vector<Param<T>*>& out);
  std::size_t param_count() const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

 private:
  void im2col(const T* x, int h, int w, T* col) const;
  void col2im(const T* col, int h, int w, T* dx) const;
  bool pointwise() const { return kernel_ == 1 && stride_ == 1 && pad_ == 0; }

  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Param<T> weight_;  // [out, in, k, k]
  Param<T> bias_;    // [1, out, 1, 1]
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels, double eps = 1e-5, double momentum = 0.1);

  /// Train normalizes with batch statistics and updates running statistics;
  /// Infer uses the running statistics.
  Tensor<T> forward(const Tensor<T>& x, Phase phase);
  Tensor<T> backward(const Tensor<T>& dy);

  void collect(std::vector<Param<T>*>& out);
  void collect_buffers(std::vector<Tensor<T>*>& out);
  std::size_t param_count() const { return 2 * static_cast<std::size_t>(channels_); }

 private:
  int channels_ = 0;
  double eps_ = 1e-5, momentum_ = 0.1;
  Param<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  Phase last_phase_ = Phase::Infer;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(Tensor<T> x);
  Tensor<T> backward(Tensor<T> dy) const;

 private:
  Tensor<T> output_;
};

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename T>
class BilinearResize {
 public:
  Tensor<T> forward(const Tensor<T>& x, int out_h, int out_w);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  struct Tap {
    int i0, i1;
    T w0, w1;
  };
  static std::vector<Tap> taps(int in, int out);

  int in_h_ = 0, in_w_ = 0;
  std::vector<Tap> ytaps_, xtaps_;
};

/// conv3x3 (no bias) -> BN -> ReLU.
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, int in, int out, int kernel, int stride);

  void init(Rng& rng) { conv_.init(rng); }
  Tensor<T> forward(const Tensor<T>& x, Phase phase);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(std::vector<Param<T>*>& out);
  void collect_buffers(std::vector<Tensor<T>*>& out) { bn_.collect_buffers(out); }
  std::size_t param_count() const { return conv_.param_count() + bn_.param_count(); }
  int out_size(int in) const { return conv_.out_size(in); }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  ReLU<T> relu_;
};

}  // namespace star::nn
