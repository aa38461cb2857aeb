#include "star/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "star/evaluation.hpp"

namespace star {

using nlohmann::json;

namespace {

enum : std::uint64_t { kOrderStream = 21, kAugmentStream = 22, kPairStream = 23 };

/// Sample indices for one step: consecutive slices of per-epoch shuffles, so any step's
/// batch can be computed without replaying earlier steps.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t dataset_size, int batch, std::uint64_t seed)
      : n_(dataset_size), batch_(batch), seed_(seed) {}

  std::vector<std::size_t> indices(int step) {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    for (int j = 0; j < batch_; ++j) {
      const std::uint64_t pos = static_cast<std::uint64_t>(step) * batch_ + j;
      out.push_back(epoch_order(pos / n_)[pos % n_]);
    }
    return out;
  }

 private:
  const std::vector<std::size_t>& epoch_order(std::uint64_t epoch) {
    auto it = cache_.find(epoch);
    if (it != cache_.end()) return it->second;
    if (cache_.size() > 4) cache_.erase(cache_.begin());
    std::vector<std::size_t> order(n_);
    for (std::size_t i = 0; i < n_; ++i) order[i] = i;
    Rng rng(derive_seed(seed_, {kOrderStream, epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    return cache_.emplace(epoch, std::move(order)).first->second;
  }

  std::size_t n_;
  int batch_;
  std::uint64_t seed_;
  std::map<std::uint64_t, std::vector<std::size_t>> cache_;
};

/// Runs fn(slot) for slot in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_slots(int n, int workers, Fn fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> threads;
  const int w = std::min(workers, n);
  for (int t = 0; t < w; ++t)
    threads.emplace_back([=] {
      for (int i = t; i < n; i += w) fn(i);
    });
}

Rng slot_rng(std::uint64_t seed, int step, int slot) {
  return Rng(derive_seed(seed, {kAugmentStream, static_cast<std::uint64_t>(step),
                                static_cast<std::uint64_t>(slot)}));
}

void check_finite(const LossBreakdown& b, int step) {
  if (!std::isfinite(b.total) || !std::isfinite(b.seg) || !std::isfinite(b.change))
    throw NumericError("non-finite loss at step " + std::to_string(step) +
                       ": seg=" + std::to_string(b.seg) + " change=" + std::to_string(b.change));
}

LogRecord train_record(int step, double lr, const LossBreakdown& b) {
  return {{"kind", "train"}, {"step", step}, {"lr", lr},
          {"seg_loss", b.seg}, {"change_loss", b.change}, {"total_loss", b.total}};
}

class Logger {
 public:
  explicit Logger(const TrainHooks& hooks) : hooks_(hooks) {
    if (hooks.log_path) {
      if (hooks.log_path->has_parent_path()) std::filesystem::create_directories(hooks.log_path->parent_path());
      out_.open(*hooks.log_path, std::ios::app);
      if (!out_) throw DataError("cannot open metrics log " + hooks.log_path->string());
    }
  }
  void emit(LogRecord r) {
    if (out_.is_open()) out_ << r.dump() << "\n" << std::flush;
    if (hooks_.on_record) hooks_.on_record(r);
    records_.push_back(std::move(r));
  }
  std::vector<LogRecord> take() { return std::move(records_); }

 private:
  const TrainHooks& hooks_;
  std::ofstream out_;
  std::vector<LogRecord> records_;
};

void maybe_evaluate(TrainState& state, const TrainConfig& cfg, const TrainHooks& hooks,
                    Logger& log, int completed) {
  if (!hooks.eval_set || hooks.eval_set->empty()) return;
  const bool due = (cfg.eval_every > 0 && completed % cfg.eval_every == 0) || completed == cfg.max_steps;
  if (!due) return;
  EvalOptions opts;
  opts.batch = cfg.eval_batch;
  LogRecord r{{"kind", "eval"}, {"step", completed}};
  auto pcc = evaluate(state.model, *hooks.eval_set, Method::Pcc, opts);
  if (cfg.use_change) {
    auto cs = evaluate(state.model, *hooks.eval_set, Method::ChangeStar, opts);
    r["changestar_iou"] = cs.iou();
    r["changestar_f1"] = cs.f1();
    if (!state.best_iou || cs.iou() > *state.best_iou) state.best_iou = cs.iou();
  }
  r["pcc_iou"] = pcc.iou();
  r["pcc_f1"] = pcc.f1();
  log.emit(std::move(r));
}

void maybe_checkpoint(TrainState& state, const TrainConfig& cfg, const TrainHooks& hooks,
                      int completed) {
  if (!hooks.checkpoint_dir) return;
  const bool due = (cfg.checkpoint_every > 0 && completed % cfg.checkpoint_every == 0) ||
                   completed == cfg.max_steps;
  if (due) save_checkpoint(*hooks.checkpoint_dir, state, hooks.run_config);
}

/// Forward, loss, backward, and update for one batch of (possibly pseudo) pairs.
LossBreakdown optimize_step(TrainState& state, const TrainConfig& cfg, int step,
                            const Tensor<float>& x1, const Tensor<float>& x2,
                            const Tensor<float>* y1, const Tensor<float>* y2,
                            const Tensor<float>& y_change, LossFlags flags,
                            const std::vector<int>* perm = nullptr) {
  auto& model = state.model;
  model.zero_grad();
  LossBreakdown b;
  if (cfg.use_change) {
    auto out = perm ? model.forward_pseudo(x1, *perm, Phase::Train)
                    : model.forward(x1, x2, Phase::Train, true);
    auto lg = total_loss_with_grads(out, y1, y2, y_change, flags);
    check_finite(lg.loss, step);
    if (perm)
      model.backward_pseudo(lg.grads);
    else
      model.backward(lg.grads);
    b = lg.loss;
  } else {
    if (!y1) throw ConfigError("segmentation-only training needs semantic labels");
    auto logits = model.segment(x1, Phase::Train);
    b.seg = bce(logits, *y1);
    b.total = b.seg;
    check_finite(b, step);
    model.backward_segment(bce_grad(logits, *y1));
  }
  std::vector<nn::Param<float>*> frozen;
  if (!cfg.use_change) model.mixin().collect(frozen);
  state.optimizer.step(model.parameters(), poly_lr(step, cfg.max_steps, cfg.lr, cfg.poly_power), frozen);
  return b;
}

}  // namespace

double poly_lr(int step, int max_steps, double lr0, double power) {
  require(max_steps >= 0 && step >= 0 && step <= max_steps,
          "poly_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(max_steps) + "]");
  if (max_steps == 0) return lr0;
  return lr0 * std::pow(1.0 - static_cast<double>(step) / max_steps, power);
}

TrainMode parse_train_mode(std::string_view s) {
  if (s == "star") return TrainMode::Star;
  if (s == "bitemporal") return TrainMode::Bitemporal;
  throw ConfigError("unknown training mode '" + std::string(s) + "' (expected star or bitemporal)");
}

std::string_view to_string(TrainMode m) { return m == TrainMode::Star ? "star" : "bitemporal"; }

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  check(max_steps >= 0, "max_steps must be >= 0");
  if (mode == TrainMode::Star)
    check(batch_size >= 2, "STAR training pairs samples within a batch: batch_size must be >= 2");
  else
    check(batch_size >= 1, "batch_size must be >= 1");
  check(lr > 0, "learning rate must be > 0");
  check(poly_power > 0, "poly power must be > 0");
  check(momentum >= 0 && momentum < 1, "momentum must be in [0, 1)");
  check(weight_decay >= 0, "weight decay must be >= 0");
  check(log_every >= 1, "log_every must be >= 1");
  check(eval_every >= 0 && checkpoint_every >= 0, "eval/checkpoint cadence must be >= 0");
  check(eval_batch >= 1, "eval_batch must be >= 1");
  check(workers >= 1, "workers must be >= 1");
  try {
    augment.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

json to_json(const TrainConfig& c) {
  return {{"mode", std::string(to_string(c.mode))},
          {"max_steps", c.max_steps},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"poly_power", c.poly_power},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"augment",
           {{"hflip", c.augment.hflip},
            {"vflip", c.augment.vflip},
            {"rot90", c.augment.rot90},
            {"scale_jitter", {c.augment.scale_lo, c.augment.scale_hi}},
            {"crop", c.augment.crop}}},
          {"use_semantic", c.loss.use_semantic},
          {"use_symmetry", c.loss.use_symmetry},
          {"use_change", c.use_change},
          {"label_mode", std::string(to_string(c.label_mode))},
          {"seed", c.seed},
          {"log_every", c.log_every},
          {"eval_every", c.eval_every},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_batch", c.eval_batch}};
}

void Sgd::step(const std::vector<nn::Param<float>*>& params, double lr,
               const std::vector<nn::Param<float>*>& frozen) {
  if (buffers_.size() != params.size()) {
    buffers_.clear();
    for (auto* p : params) buffers_.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
  }
  const float m = static_cast<float>(momentum_), wd = static_cast<float>(weight_decay_);
  const float rate = static_cast<float>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& buf = buffers_[k];
    require(buf.same_shape(p.value), "Sgd: optimizer state does not match parameters");
    if (std::find(frozen.begin(), frozen.end(), &p) != frozen.end()) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      float g = p.grad[i];
      if (p.decay) g += wd * p.value[i];
      buf[i] = m * buf[i] + g;
      p.value[i] -= rate * buf[i];
    }
  }
}

TrainState TrainState::fresh(const ModelSpec& spec, const TrainConfig& cfg) {
  return TrainState{spec, make_changestar<float>(spec, cfg.seed), Sgd(cfg.momentum, cfg.weight_decay),
                    0, cfg.seed, std::nullopt};
}

std::vector<LogRecord> train_star(TrainState& state, const TrainConfig& cfg,
                                  const std::vector<Sample>& data, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.mode != TrainMode::Star) throw ConfigError("train_star called with a non-STAR config");
  Logger log(hooks);
  if (state.step >= cfg.max_steps) return log.take();
  if (data.empty()) throw DataError("training set is empty");
  for (const auto& s : data)
    if (!s.mask) throw DataError("STAR training needs a semantic mask for sample '" + s.id + "'");

  BatchSchedule schedule(data.size(), cfg.batch_size, cfg.seed);
  for (int step = state.step; step < cfg.max_steps; ++step) {
    const auto idx = schedule.indices(step);
    RasterBatch x(idx.size());
    MaskBatch y(idx.size());
    parallel_slots(static_cast<int>(idx.size()), cfg.workers, [&](int j) {
      auto rng = slot_rng(cfg.seed, step, j);
      auto s = augment(data[idx[j]], cfg.augment, rng);
      x[j] = std::move(s.image);
      y[j] = std::move(*s.mask);
    });
    Rng pair_rng(derive_seed(cfg.seed, {kPairStream, static_cast<std::uint64_t>(step)}));
    auto pairs = make_pseudo_pair_batch(std::move(x), std::move(y), pair_rng, cfg.label_mode);

    auto x1 = to_tensor<float>(std::span<const Raster>(pairs.x1));
    auto x2 = to_tensor<float>(std::span<const Raster>(pairs.x2));
    auto y1 = to_tensor<float>(std::span<const BinaryMask>(pairs.y1));
    auto y2 = to_tensor<float>(std::span<const BinaryMask>(pairs.y2));
    auto yc = to_tensor<float>(std::span<const BinaryMask>(pairs.change));
    const double lr = poly_lr(step, cfg.max_steps, cfg.lr, cfg.poly_power);
    auto b = optimize_step(state, cfg, step, x1, x2, &y1, &y2, yc, cfg.loss, &pairs.perm.indices());
    state.step = step + 1;
    if (step % cfg.log_every == 0 || state.step == cfg.max_steps) log.emit(train_record(step, lr, b));
    maybe_evaluate(state, cfg, hooks, log, state.step);
    maybe_checkpoint(state, cfg, hooks, state.step);
  }
  return log.take();
}

std::vector<LogRecord> train_bitemporal(TrainState& state, const TrainConfig& cfg,
                                        const std::vector<BitemporalSample>& data,
                                        const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.mode != TrainMode::Bitemporal)
    throw ConfigError("train_bitemporal called with a non-bitemporal config");
  Logger log(hooks);
  if (state.step >= cfg.max_steps) return log.take();
  if (data.empty()) throw DataError("training set is empty");
  const bool semantic = std::all_of(data.begin(), data.end(), [](const auto& s) {
    return s.semantic_t1.has_value() && s.semantic_t2.has_value();
  });
  if (!cfg.use_change && !semantic)
    throw ConfigError("segmentation-only training needs semantic masks for every pair");
  LossFlags flags = cfg.loss;
  flags.use_semantic = flags.use_semantic && semantic;

  BatchSchedule schedule(data.size(), cfg.batch_size, cfg.seed);
  for (int step = state.step; step < cfg.max_steps; ++step) {
    const auto idx = schedule.indices(step);
    std::vector<BitemporalSample> batch(idx.size());
    parallel_slots(static_cast<int>(idx.size()), cfg.workers, [&](int j) {
      auto rng = slot_rng(cfg.seed, step, j);
      batch[j] = augment(data[idx[j]], cfg.augment, rng);
    });
    RasterBatch a, b;
    MaskBatch c, s1, s2;
    for (auto& s : batch) {
      a.push_back(std::move(s.image_t1));
      b.push_back(std::move(s.image_t2));
      c.push_back(std::move(s.change));
      if (semantic) {
        s1.push_back(std::move(*s.semantic_t1));
        s2.push_back(std::move(*s.semantic_t2));
      }
    }
    auto x1 = to_tensor<float>(std::span<const Raster>(a));
    auto x2 = to_tensor<float>(std::span<const Raster>(b));
    auto yc = to_tensor<float>(std::span<const BinaryMask>(c));
    std::optional<Tensor<float>> y1, y2;
    if (semantic) {
      y1 = to_tensor<float>(std::span<const BinaryMask>(s1));
      y2 = to_tensor<float>(std::span<const BinaryMask>(s2));
    }
    const double lr = poly_lr(step, cfg.max_steps, cfg.lr, cfg.poly_power);
    auto loss = optimize_step(state, cfg, step, x1, x2, y1 ? &*y1 : nullptr, y2 ? &*y2 : nullptr,
                              yc, flags);
    state.step = step + 1;
    if (step % cfg.log_every == 0 || state.step == cfg.max_steps) log.emit(train_record(step, lr, loss));
    maybe_evaluate(state, cfg, hooks, log, state.step);
    maybe_checkpoint(state, cfg, hooks, state.step);
  }
  return log.take();
}

}  // namespace star
