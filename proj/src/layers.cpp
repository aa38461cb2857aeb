#include "star/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <numeric>
#include <cmath>
#include <cstring>
#include <utility>

namespace star::nn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
T tree_sum(const std::vector<T>& v, int lo, int hi, int stride, int offset) {
  if (hi - lo == 1) return v[static_cast<std::size_t>(lo) * stride + offset];
  const int mid = lo + (hi - lo) / 2;
  return tree_sum(v, lo, mid, stride, offset) + tree_sum(v, mid, hi, stride, offset);
}

}  // namespace

template <typename T>
std::vector<T> batch_channel_sum(const std::vector<T>& per_sample, int n, int c) {
  std::vector<T> out(c, T(0));
  if (n == 0) return out;
  for (int ch = 0; ch < c; ++ch) out[ch] = tree_sum(per_sample, 0, n, c, ch);
  return out;
}

// ---------------------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                  int pad, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      has_bias_(bias) {
  require(in_ > 0 && out_ > 0 && kernel_ > 0 && stride_ > 0 && pad_ >= 0,
          "Conv2d: invalid geometry for " + name);
  weight_ = {name + ".weight", Tensor<T>(out_, in_, kernel_, kernel_),
             Tensor<T>(out_, in_, kernel_, kernel_), true};
  if (has_bias_) bias_ = {name + ".bias", Tensor<T>(1, out_, 1, 1), Tensor<T>(1, out_, 1, 1), false};
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_) * kernel_ * kernel_;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : weight_.value.vec()) v = static_cast<T>(dist(rng));
  if (has_bias_) bias_.value.fill(T(0));
}

namespace {

// Output columns [lo, hi) whose input tap ox * stride - pad + kx lands inside [0, w).
inline std::pair<int, int> valid_span(int wo, int w, int stride, int offset) {
  int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  int hi = w - 1 - offset < 0 ? 0 : (w - 1 - offset) / stride + 1;
  hi = std::min(hi, wo);
  return {std::min(lo, hi), hi};
}

// dw += g * col^T. The single-row case is a matrix-vector product; see Conv2d::forward.
template <typename T>
void accumulate_weight_grad(const CMapR<T>& g, const CMapR<T>& col, MapR<T>& dw) {
  if (g.rows() != 1) {
    dw.noalias() += g * col.transpose();
    return;
  }
  const auto cols = col.cols();
  for (Eigen::Index i = 0; i < col.rows(); ++i) {
    const T* c = col.data() + i * cols;
    T s = 0;
    for (Eigen::Index j = 0; j < cols; ++j) s += g.data()[j] * c[j];
    dw(0, i) += s;
  }
}

}  // namespace

template <typename T>
void Conv2d<T>::im2col(const T* x, int h, int w, T* col) const {
  const int ho = out_size(h), wo = out_size(w);
  std::size_t row = 0;
  for (int ci = 0; ci < in_; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx, ++row) {
        T* dst = col + row * ho * wo;
        const int off = kx - pad_;
        const auto [lo, hi] = valid_span(wo, w, stride_, off);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          T* drow = dst + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + wo, T(0));
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(iy) * w + off;
          std::fill(drow, drow + lo, T(0));
          if (stride_ == 1) {
            std::copy(srow + lo, srow + hi, drow + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) drow[ox] = srow[ox * stride_];
          }
          std::fill(drow + hi, drow + wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const T* col, int h, int w, T* dx) const {
  const int ho = out_size(h), wo = out_size(w);
  std::size_t row = 0;
  for (int ci = 0; ci < in_; ++ci) {
    T* plane = dx + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx, ++row) {
        const T* src = col + row * ho * wo;
        const int off = kx - pad_;
        const auto [lo, hi] = valid_span(wo, w, stride_, off);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          const T* srow = src + static_cast<std::size_t>(oy) * wo;
          T* drow = plane + static_cast<std::size_t>(iy) * w + off;
          if (stride_ == 1) {
            for (int ox = lo; ox < hi; ++ox) drow[ox] += srow[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) drow[ox * stride_] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  require(x.c() == in_, "Conv2d " + weight_.name + ": expected " + std::to_string(in_) +
                            " channels, got " + x.shape_str());
  input_ = x;
  const int ho = out_size(x.h()), wo = out_size(x.w());
  require(ho > 0 && wo > 0, "Conv2d: input too small");
  const int k = in_ * kernel_ * kernel_;
  const int cols = ho * wo;
  Tensor<T> y(x.n(), out_, ho, wo);
  std::vector<T> colbuf(pointwise() ? 0 : static_cast<std::size_t>(k) * cols);
  CMapR<T> wmat(weight_.value.data(), out_, k);
  for (int n = 0; n < x.n(); ++n) {
    const T* colp = x.sample(n).data();
    if (!pointwise()) {
      im2col(colp, x.h(), x.w(), colbuf.data());
      colp = colbuf.data();
    }
    CMapR<T> col(colp, k, cols);
    MapR<T> out(y.sample(n).data(), out_, cols);
    if (out_ == 1) {
      // Eigen's matrix-vector kernel peels by pointer alignment, which makes sums
      // run-dependent; a fixed loop order keeps training bit-reproducible.
      T* o = out.data();
      std::fill(o, o + cols, T(0));
      for (int i = 0; i < k; ++i) {
        const T wi = weight_.value[i];
        const T* c = colp + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) o[j] += wi * c[j];
      }
    } else {
      out.noalias() = wmat * col;
    }
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) out.row(o).array() += bias_.value[o];
    }
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  const int ho = out_size(input_.h()), wo = out_size(input_.w());
  require(dy.n() == input_.n() && dy.c() == out_ && dy.h() == ho && dy.w() == wo,
          "Conv2d backward: gradient shape mismatch");
  const int k = in_ * kernel_ * kernel_;
  const int cols = ho * wo;
  Tensor<T> dx(input_.n(), in_, input_.h(), input_.w());
  std::vector<T> colbuf(pointwise() ? 0 : static_cast<std::size_t>(k) * cols);
  std::vector<T> dcol(pointwise() ? 0 : static_cast<std::size_t>(k) * cols);
  CMapR<T> wmat(weight_.value.data(), out_, k);
  MapR<T> dw(weight_.grad.data(), out_, k);
  for (int n = 0; n < input_.n(); ++n) {
    CMapR<T> g(dy.sample(n).data(), out_, cols);
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) {
        const T* go = g.data() + static_cast<std::size_t>(o) * cols;
        bias_.grad[o] += std::accumulate(go, go + cols, T(0));
      }
    }
    if (pointwise()) {
      CMapR<T> col(input_.sample(n).data(), k, cols);
      accumulate_weight_grad(g, col, dw);
      MapR<T> dxm(dx.sample(n).data(), k, cols);
      dxm.noalias() = wmat.transpose() * g;
    } else {
      im2col(input_.sample(n).data(), input_.h(), input_.w(), colbuf.data());
      CMapR<T> col(colbuf.data(), k, cols);
      accumulate_weight_grad(g, col, dw);
      MapR<T> dc(dcol.data(), k, cols);
      dc.noalias() = wmat.transpose() * g;
      col2im(dcol.data(), input_.h(), input_.w(), dx.sample(n).data());
    }
  }
  return dx;
}

template <typename T>
void Conv2d<T>::collect(std::vector<Param<T>*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

template <typename T>
std::size_t Conv2d<T>::param_count() const {
  return weight_.value.size() + (has_bias_ ? static_cast<std::size_t>(out_) : 0);
}

// ----------------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, int channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma_ = {name + ".gamma", Tensor<T>(1, channels, 1, 1, T(1)), Tensor<T>(1, channels, 1, 1), false};
  beta_ = {name + ".beta", Tensor<T>(1, channels, 1, 1), Tensor<T>(1, channels, 1, 1), false};
  running_mean_ = Tensor<T>(1, channels, 1, 1, T(0));
  running_var_ = Tensor<T>(1, channels, 1, 1, T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Phase phase) {
  require(x.c() == channels_, "BatchNorm2d " + gamma_.name + ": channel mismatch");
  last_phase_ = phase;
  const int n = x.n(), c = channels_;
  const std::size_t hw = x.plane();
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  std::vector<T> mean(c), inv_std(c);
  if (phase == Phase::Train) {
    const T m = static_cast<T>(static_cast<double>(n) * hw);
    require(m > T(1), "BatchNorm2d: training needs more than one value per channel");
    std::vector<T> part(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const T* p = x.channel(i, ch);
        T s = 0;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
        part[static_cast<std::size_t>(i) * c + ch] = s;
      }
    auto sums = batch_channel_sum(part, n, c);
    for (int ch = 0; ch < c; ++ch) mean[ch] = sums[ch] / m;
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const T* p = x.channel(i, ch);
        T s = 0;
        for (std::size_t j = 0; j < hw; ++j) {
          const T d = p[j] - mean[ch];
          s += d * d;
        }
        part[static_cast<std::size_t>(i) * c + ch] = s;
      }
    auto sq = batch_channel_sum(part, n, c);
    for (int ch = 0; ch < c; ++ch) {
      const T var = sq[ch] / m;
      inv_std[ch] = T(1) / std::sqrt(var + static_cast<T>(eps_));
      const T mom = static_cast<T>(momentum_);
      running_mean_[ch] = (T(1) - mom) * running_mean_[ch] + mom * mean[ch];
      running_var_[ch] = (T(1) - mom) * running_var_[ch] + mom * (sq[ch] / (m - T(1)));
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean_[ch];
      inv_std[ch] = T(1) / std::sqrt(running_var_[ch] + static_cast<T>(eps_));
    }
  }
  xhat_ = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T* p = x.channel(i, ch);
      T* xh = xhat_.channel(i, ch);
      T* q = y.channel(i, ch);
      const T g = gamma_.value[ch], b = beta_.value[ch];
      for (std::size_t j = 0; j < hw; ++j) {
        xh[j] = (p[j] - mean[ch]) * inv_std[ch];
        q[j] = g * xh[j] + b;
      }
    }
  inv_std_ = std::move(inv_std);
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  require(dy.same_shape(xhat_), "BatchNorm2d backward: gradient shape mismatch");
  const int n = dy.n(), c = channels_;
  const std::size_t hw = dy.plane();
  std::vector<T> part_g(static_cast<std::size_t>(n) * c), part_gx(part_g.size());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T* g = dy.channel(i, ch);
      const T* xh = xhat_.channel(i, ch);
      T sg = 0, sgx = 0;
      for (std::size_t j = 0; j < hw; ++j) {
        sg += g[j];
        sgx += g[j] * xh[j];
      }
      part_g[static_cast<std::size_t>(i) * c + ch] = sg;
      part_gx[static_cast<std::size_t>(i) * c + ch] = sgx;
    }
  auto sum_g = batch_channel_sum(part_g, n, c);
  auto sum_gx = batch_channel_sum(part_gx, n, c);
  Tensor<T> dx(dy.n(), dy.c(), dy.h(), dy.w());
  const T m = static_cast<T>(static_cast<double>(n) * hw);
  for (int ch = 0; ch < c; ++ch) {
    gamma_.grad[ch] += sum_gx[ch];
    beta_.grad[ch] += sum_g[ch];
  }
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T* g = dy.channel(i, ch);
      const T* xh = xhat_.channel(i, ch);
      T* d = dx.channel(i, ch);
      const T scale = gamma_.value[ch] * inv_std_[ch];
      if (last_phase_ == Phase::Train) {
        const T mg = sum_g[ch] / m, mgx = sum_gx[ch] / m;
        for (std::size_t j = 0; j < hw; ++j) d[j] = scale * (g[j] - mg - xh[j] * mgx);
      } else {
        for (std::size_t j = 0; j < hw; ++j) d[j] = scale * g[j];
      }
    }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(std::vector<Param<T>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

template <typename T>
void BatchNorm2d<T>::collect_buffers(std::vector<Tensor<T>*>& out) {
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ------------------------------------------------------------------------------ ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(Tensor<T> x) {
  for (auto& v : x.vec()) v = v > T(0) ? v : T(0);
  output_ = x;
  return x;
}

template <typename T>
Tensor<T> ReLU<T>::backward(Tensor<T> dy) const {
  require(dy.same_shape(output_), "ReLU backward: gradient shape mismatch");
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(output_[i] > T(0))) dy[i] = T(0);
  return dy;
}

// -------------------------------------------------------------------- BilinearResize

template <typename T>
std::vector<typename BilinearResize<T>::Tap> BilinearResize<T>::taps(int in, int out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    const double l = src - i0;
    t[o] = {i0, i1, static_cast<T>(1.0 - l), static_cast<T>(l)};
  }
  return t;
}

template <typename T>
Tensor<T> BilinearResize<T>::forward(const Tensor<T>& x, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "BilinearResize: bad output size");
  in_h_ = x.h();
  in_w_ = x.w();
  ytaps_ = taps(in_h_, out_h);
  xtaps_ = taps(in_w_, out_w);
  Tensor<T> y(x.n(), x.c(), out_h, out_w);
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < x.c(); ++ch) {
      const T* src = x.channel(i, ch);
      T* dst = y.channel(i, ch);
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& ty = ytaps_[oy];
        const T* r0 = src + static_cast<std::size_t>(ty.i0) * in_w_;
        const T* r1 = src + static_cast<std::size_t>(ty.i1) * in_w_;
        T* drow = dst + static_cast<std::size_t>(oy) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& tx = xtaps_[ox];
          drow[ox] = ty.w0 * (tx.w0 * r0[tx.i0] + tx.w1 * r0[tx.i1]) +
                     ty.w1 * (tx.w0 * r1[tx.i0] + tx.w1 * r1[tx.i1]);
        }
      }
    }
  return y;
}

template <typename T>
Tensor<T> BilinearResize<T>::backward(const Tensor<T>& dy) const {
  const int out_h = static_cast<int>(ytaps_.size()), out_w = static_cast<int>(xtaps_.size());
  require(dy.h() == out_h && dy.w() == out_w, "BilinearResize backward: shape mismatch");
  Tensor<T> dx(dy.n(), dy.c(), in_h_, in_w_);
  for (int i = 0; i < dy.n(); ++i)
    for (int ch = 0; ch < dy.c(); ++ch) {
      const T* g = dy.channel(i, ch);
      T* d = dx.channel(i, ch);
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& ty = ytaps_[oy];
        T* r0 = d + static_cast<std::size_t>(ty.i0) * in_w_;
        T* r1 = d + static_cast<std::size_t>(ty.i1) * in_w_;
        const T* grow = g + static_cast<std::size_t>(oy) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& tx = xtaps_[ox];
          const T v = grow[ox];
          r0[tx.i0] += ty.w0 * tx.w0 * v;
          r0[tx.i1] += ty.w0 * tx.w1 * v;
          r1[tx.i0] += ty.w1 * tx.w0 * v;
          r1[tx.i1] += ty.w1 * tx.w1 * v;
        }
      }
    }
  return dx;
}

// ------------------------------------------------------------------------ ConvBnRelu

template <typename T>
ConvBnRelu<T>::ConvBnRelu(const std::string& name, int in, int out, int kernel, int stride)
    : conv_(name + ".conv", in, out, kernel, stride, kernel / 2, false),
      bn_(name + ".bn", out) {}

template <typename T>
Tensor<T> ConvBnRelu<T>::forward(const Tensor<T>& x, Phase phase) {
  return relu_.forward(bn_.forward(conv_.forward(x), phase));
}

template <typename T>
Tensor<T> ConvBnRelu<T>::backward(const Tensor<T>& dy) {
  return conv_.backward(bn_.backward(relu_.backward(dy)));
}

template <typename T>
void ConvBnRelu<T>::collect(std::vector<Param<T>*>& out) {
  conv_.collect(out);
  bn_.collect(out);
}

template std::vector<float> batch_channel_sum(const std::vector<float>&, int, int);
template std::vector<double> batch_channel_sum(const std::vector<double>&, int, int);
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ReLU<float>;
template class ReLU<double>;
template class BilinearResize<float>;
template class BilinearResize<double>;
template class ConvBnRelu<float>;
template class ConvBnRelu<double>;

}  // namespace star::nn
