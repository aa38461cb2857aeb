#pragma once

#include "star/model.hpp"
#include "star/tensor.hpp"

namespace star {

/// Mean binary cross-entropy over every element, evaluated from logits in the stable form
/// max(l, 0) - l*y + log(1 + exp(-|l|)). Targets must be 0 or 1.
template <typename T>
double bce(const Tensor<T>& logits, const Tensor<T>& targets);

/// d bce / d logits = (sigmoid(l) - y) / count, scaled by `scale`.
template <typename T>
Tensor<T> bce_grad(const Tensor<T>& logits, const Tensor<T>& targets, double scale = 1.0);

struct LossBreakdown {
  double seg = 0.0;
  double change = 0.0;
  double total = 0.0;
};

/// Which terms of the multi-task objective are active. The four combinations are the
/// component-ablation rows: (off, off) bare baseline, (on, off) semantic supervision,
/// (off, on) temporal symmetry, (on, on) full model.
struct LossFlags {
  bool use_semantic = true;
  bool use_symmetry = true;
};

/// Mean of the two per-time BCE terms. Throws ConfigError when either label is absent.
template <typename T>
double seg_loss(const ChangeStarOutput<T>& out, const Tensor<T>* y1, const Tensor<T>* y2);

/// 0.5 * [bce(fwd, y) + bce(bwd, y)]. Throws ContractError without bwd logits.
template <typename T>
double symmetry_change_loss(const ChangeStarOutput<T>& out, const Tensor<T>& y_change);

template <typename T>
LossBreakdown total_loss(const ChangeStarOutput<T>& out, const Tensor<T>* y1, const Tensor<T>* y2,
                         const Tensor<T>& y_change, LossFlags flags);

template <typename T>
struct LossWithGrads {
  LossBreakdown loss;
  ChangeStarGrads<T> grads;
};

/// total_loss together with its gradient w.r.t. every member of `out`.
template <typename T>
LossWithGrads<T> total_loss_with_grads(const ChangeStarOutput<T>& out, const Tensor<T>* y1,
                                       const Tensor<T>* y2, const Tensor<T>& y_change,
                                       LossFlags flags);

}  // namespace star
