#pragma once

// Central finite-difference check of the analytic ChangeStar gradient. Test-only.

#include <algorithm>
#include <cmath>
#include <random>

#include "star/losses.hpp"
#include "star/model.hpp"

namespace star::testing {

struct GradCheckResult {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

template <typename T>
Tensor<T> random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, double lo = 0.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(n, c, h, w);
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
Tensor<T> random_mask(int n, int h, int w, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.4);
  Tensor<T> t(n, 1, h, w);
  for (auto& v : t.vec()) v = b(rng) ? T(1) : T(0);
  return t;
}

/// Relative error per element is |a - n| / max(|a|, |n|, floor); the floor keeps
/// entries whose true gradient is numerically zero from dominating.
inline GradCheckResult check_changestar_gradient(ChangeStar<double>& model,
                                                 const Tensor<double>& x1,
                                                 const Tensor<double>& x2,
                                                 const Tensor<double>& y1,
                                                 const Tensor<double>& y2,
                                                 const Tensor<double>& yc, LossFlags flags,
                                                 double step = 1e-6, double floor = 1e-6) {
  auto loss = [&] {
    auto out = model.forward(x1, x2, Phase::Train);
    return total_loss(out, &y1, &y2, yc, flags).total;
  };
  model.zero_grad();
  auto out = model.forward(x1, x2, Phase::Train);
  auto lg = total_loss_with_grads(out, &y1, &y2, yc, flags);
  model.backward(lg.grads);

  GradCheckResult r;
  for (auto* p : model.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + step;
      const double up = loss();
      p->value[i] = keep - step;
      const double down = loss();
      p->value[i] = keep;
      const double numeric = (up - down) / (2 * step);
      const double analytic = p->grad[i];
      const double abs_err = std::fabs(numeric - analytic);
      const double denom = std::max({std::fabs(numeric), std::fabs(analytic), floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      r.max_rel_error = std::max(r.max_rel_error, abs_err / denom);
      ++r.checked;
    }
  }
  return r;
}

}  // namespace star::testing
