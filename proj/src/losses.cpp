#include "star/losses.hpp"

#include <cmath>

namespace star {

namespace {

template <typename T>
void check_pair(const Tensor<T>& logits, const Tensor<T>& targets) {
  require(logits.same_shape(targets), "bce: logits " + logits.shape_str() + " vs targets " +
                                          targets.shape_str());
  require(logits.size() > 0, "bce: empty input");
}

}  // namespace

template <typename T>
double bce(const Tensor<T>& logits, const Tensor<T>& targets) {
  check_pair(logits, targets);
  long double acc = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const long double l = logits[i];
    const T y = targets[i];
    require(y == T(0) || y == T(1), "bce: targets must be 0 or 1");
    acc += std::max(l, 0.0L) - l * y + std::log1p(std::exp(-std::fabs(l)));
  }
  return static_cast<double>(acc / logits.size());
}

template <typename T>
Tensor<T> bce_grad(const Tensor<T>& logits, const Tensor<T>& targets, double scale) {
  check_pair(logits, targets);
  Tensor<T> g(logits.n(), logits.c(), logits.h(), logits.w());
  const double k = scale / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double l = logits[i];
    const double p = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
    g[i] = static_cast<T>((p - targets[i]) * k);
  }
  return g;
}

template <typename T>
double seg_loss(const ChangeStarOutput<T>& out, const Tensor<T>* y1, const Tensor<T>* y2) {
  if (y1 == nullptr || y2 == nullptr)
    throw ConfigError("semantic supervision needs labels for both times");
  return 0.5 * (bce(out.seg_t1, *y1) + bce(out.seg_t2, *y2));
}

template <typename T>
double symmetry_change_loss(const ChangeStarOutput<T>& out, const Tensor<T>& y_change) {
  require(out.change_bwd.has_value(), "symmetry loss needs change logits for both orders");
  return 0.5 * (bce(out.change_fwd, y_change) + bce(*out.change_bwd, y_change));
}

template <typename T>
LossBreakdown total_loss(const ChangeStarOutput<T>& out, const Tensor<T>* y1, const Tensor<T>* y2,
                         const Tensor<T>& y_change, LossFlags flags) {
  LossBreakdown b;
  b.seg = flags.use_semantic ? seg_loss(out, y1, y2) : 0.0;
  b.change = flags.use_symmetry ? symmetry_change_loss(out, y_change)
                                : bce(out.change_fwd, y_change);
  b.total = b.seg + b.change;
  return b;
}

template <typename T>
LossWithGrads<T> total_loss_with_grads(const ChangeStarOutput<T>& out, const Tensor<T>* y1,
                                       const Tensor<T>* y2, const Tensor<T>& y_change,
                                       LossFlags flags) {
  LossWithGrads<T> r;
  r.loss = total_loss(out, y1, y2, y_change, flags);
  auto& g = r.grads;
  if (flags.use_semantic) {
    g.seg_t1 = bce_grad(out.seg_t1, *y1, 0.5);
    g.seg_t2 = bce_grad(out.seg_t2, *y2, 0.5);
  } else {
    g.seg_t1 = Tensor<T>(out.seg_t1.n(), out.seg_t1.c(), out.seg_t1.h(), out.seg_t1.w());
    g.seg_t2 = Tensor<T>(out.seg_t2.n(), out.seg_t2.c(), out.seg_t2.h(), out.seg_t2.w());
  }
  if (flags.use_symmetry) {
    g.change_fwd = bce_grad(out.change_fwd, y_change, 0.5);
    g.change_bwd = bce_grad(*out.change_bwd, y_change, 0.5);
  } else {
    g.change_fwd = bce_grad(out.change_fwd, y_change, 1.0);
    if (out.change_bwd) {
      const auto& b = *out.change_bwd;
      g.change_bwd = Tensor<T>(b.n(), b.c(), b.h(), b.w());
    }
  }
  return r;
}

#define STAR_INSTANTIATE(T)                                                                   \
  template double bce<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> bce_grad<T>(const Tensor<T>&, const Tensor<T>&, double);                 \
  template double seg_loss<T>(const ChangeStarOutput<T>&, const Tensor<T>*, const Tensor<T>*); \
  template double symmetry_change_loss<T>(const ChangeStarOutput<T>&, const Tensor<T>&);      \
  template LossBreakdown total_loss<T>(const ChangeStarOutput<T>&, const Tensor<T>*,          \
                                       const Tensor<T>*, const Tensor<T>&, LossFlags);        \
  template LossWithGrads<T> total_loss_with_grads<T>(const ChangeStarOutput<T>&,              \
                                                     const Tensor<T>*, const Tensor<T>*,      \
                                                     const Tensor<T>&, LossFlags);

STAR_INSTANTIATE(float)
STAR_INSTANTIATE(double)

#undef STAR_INSTANTIATE

}  // namespace star
