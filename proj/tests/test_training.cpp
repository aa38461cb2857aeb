#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "star/errors.hpp"
#include "star/evaluation.hpp"
#include "star/training.hpp"
#include "tmpdir.hpp"

using namespace star;
using star::testing::TempDir;

namespace {

ModelSpec tiny_spec() {
  ModelSpec s;
  s.base_width = 2;
  s.mixin = {2, 4};
  return s;
}

TrainConfig short_config(int steps) {
  TrainConfig c;
  c.max_steps = steps;
  c.batch_size = 4;
  c.augment.crop = 32;
  c.eval_every = 0;
  c.log_every = 1;
  return c;
}

const SyntheticData& corpus() {
  static const SyntheticData d = [] {
    SyntheticSceneSpec s;
    s.canvas = 64;
    s.seed = 7;
    return generate_synthetic(s, 12, 4);
  }();
  return d;
}

bool same_weights(ChangeStar<float>& a, ChangeStar<float>& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(pa[i]->value == pb[i]->value)) return false;
  auto ba = a.buffers(), bb = b.buffers();
  for (std::size_t i = 0; i < ba.size(); ++i)
    if (!(*ba[i] == *bb[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("poly_lr: endpoints, midpoint and monotonicity") {
  CHECK(std::abs(poly_lr(0, 2000, 0.03, 0.9) - 0.03) <= 1e-12);
  CHECK(std::abs(poly_lr(2000, 2000, 0.03, 0.9)) <= 1e-12);
  CHECK(std::abs(poly_lr(1000, 2000, 0.03, 0.9) - 0.03 * std::pow(0.5, 0.9)) <= 1e-12);
  double prev = poly_lr(0, 2000, 0.03, 0.9);
  for (int s = 1; s <= 2000; ++s) {
    const double v = poly_lr(s, 2000, 0.03, 0.9);
    REQUIRE(v <= prev);
    prev = v;
  }
  CHECK_THROWS_AS(poly_lr(2001, 2000, 0.03, 0.9), ContractError);
  CHECK_THROWS_AS(poly_lr(-1, 2000, 0.03, 0.9), ContractError);
}

TEST_CASE("TrainConfig validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.mode = TrainMode::Bitemporal;
  CHECK_NOTHROW(c.validate());
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_train_mode("semi"), ConfigError);
}

TEST_CASE("Sgd: momentum update and decay only on flagged parameters") {
  nn::Param<float> w{"w", Tensor<float>(1, 1, 1, 1, 1.0f), Tensor<float>(1, 1, 1, 1, 0.5f), true};
  nn::Param<float> g{"g", Tensor<float>(1, 1, 1, 1, 1.0f), Tensor<float>(1, 1, 1, 1, 0.5f), false};
  Sgd opt(0.9, 0.1);
  opt.step({&w, &g}, 0.1);
  CHECK(w.value[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.1)));
  CHECK(g.value[0] == doctest::Approx(1.0 - 0.1 * 0.5));
  opt.step({&w, &g}, 0.1);
  // buf = 0.9 * 0.5 + 0.5 for the undecayed parameter
  CHECK(g.value[0] == doctest::Approx(0.95 - 0.1 * 0.95));
}

TEST_CASE("train_star: loss goes down on a tiny corpus and logs every step") {
  auto cfg = short_config(30);
  auto state = TrainState::fresh(tiny_spec(), cfg);
  auto log = train_star(state, cfg, corpus().train);
  REQUIRE(log.size() == 30);
  CHECK(log.front()["kind"] == "train");
  CHECK(log.front()["lr"].get<double>() == doctest::Approx(0.03));
  for (auto key : {"step", "seg_loss", "change_loss", "total_loss"}) CHECK(log.front().contains(key));
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += log[i]["total_loss"].get<double>();
    last += log[log.size() - 1 - i]["total_loss"].get<double>();
  }
  CHECK(last < first);
  CHECK(state.step == 30);
}

TEST_CASE("train_star: same seed reproduces the same weights") {
  auto cfg = short_config(4);
  auto a = TrainState::fresh(tiny_spec(), cfg);
  auto b = TrainState::fresh(tiny_spec(), cfg);
  train_star(a, cfg, corpus().train);
  train_star(b, cfg, corpus().train);
  CHECK(same_weights(a.model, b.model));
}

TEST_CASE("train_star: worker count does not change results") {
  auto cfg = short_config(3);
  auto a = TrainState::fresh(tiny_spec(), cfg);
  train_star(a, cfg, corpus().train);
  cfg.workers = 3;
  auto b = TrainState::fresh(tiny_spec(), cfg);
  train_star(b, cfg, corpus().train);
  CHECK(same_weights(a.model, b.model));
}

TEST_CASE("train_star: resuming from a checkpoint matches an uninterrupted run") {
  TempDir dir("resume");
  auto cfg = short_config(6);
  auto full = TrainState::fresh(tiny_spec(), cfg);
  auto full_log = train_star(full, cfg, corpus().train);

  // Interrupt a second run right after its step-3 checkpoint has been written.
  struct Interrupted {};
  auto part_cfg = cfg;
  part_cfg.checkpoint_every = 3;
  auto part = TrainState::fresh(tiny_spec(), part_cfg);
  TrainHooks hooks;
  hooks.checkpoint_dir = dir.path();
  hooks.on_record = [](const LogRecord& r) {
    if (r["kind"] == "train" && r["step"] == 3) throw Interrupted{};
  };
  CHECK_THROWS_AS(train_star(part, part_cfg, corpus().train, hooks), Interrupted);
  auto resumed = load_checkpoint(dir.path(), cfg);
  CHECK(resumed.step == 3);
  auto tail = train_star(resumed, cfg, corpus().train);
  CHECK(same_weights(resumed.model, full.model));
  REQUIRE(tail.size() == 3);
  CHECK(tail.back()["total_loss"] == full_log.back()["total_loss"]);
}

TEST_CASE("checkpoint round trip preserves weights, buffers, optimizer and metadata") {
  TempDir dir("ckpt");
  auto cfg = short_config(2);
  auto state = TrainState::fresh(tiny_spec(), cfg);
  train_star(state, cfg, corpus().train);
  save_checkpoint(dir / "c", state, {{"note", "x"}});
  auto back = load_checkpoint(dir / "c", cfg);
  CHECK(back.step == 2);
  CHECK(same_weights(back.model, state.model));
  REQUIRE(back.optimizer.buffers().size() == state.optimizer.buffers().size());
  for (std::size_t i = 0; i < back.optimizer.buffers().size(); ++i)
    CHECK(back.optimizer.buffers()[i] == state.optimizer.buffers()[i]);

  std::ifstream f(dir / "c" / "meta.json");
  auto meta = nlohmann::json::parse(f);
  CHECK(meta["format"] == "star-checkpoint");
  CHECK(meta["model"]["change_mixin"]["layers"] == 2);
  CHECK(meta["param_count"] == state.model.param_count());
  CHECK(meta["config"]["note"] == "x");

  ModelSpec spec;
  auto m = load_model(dir / "c", &spec);
  CHECK(spec.base_width == 2);
  CHECK(same_weights(m, state.model));
}

TEST_CASE("load_checkpoint: missing or truncated files are data errors") {
  TempDir dir("bad");
  auto cfg = short_config(1);
  CHECK_THROWS_AS(load_checkpoint(dir / "none", cfg), DataError);
  auto state = TrainState::fresh(tiny_spec(), cfg);
  save_checkpoint(dir / "c", state);
  std::filesystem::resize_file(dir.path() / "c" / "weights.bin", 10);
  CHECK_THROWS_AS(load_checkpoint(dir / "c", cfg), DataError);
}

TEST_CASE("train_star: data errors for empty or unlabeled corpora") {
  auto cfg = short_config(1);
  auto state = TrainState::fresh(tiny_spec(), cfg);
  CHECK_THROWS_AS(train_star(state, cfg, {}), DataError);
  auto data = corpus().train;
  data[0].mask.reset();
  CHECK_THROWS_AS(train_star(state, cfg, data), DataError);
}

TEST_CASE("train_star: segmentation-only leaves ChangeMixin untouched") {
  auto cfg = short_config(3);
  cfg.use_change = false;
  auto state = TrainState::fresh(tiny_spec(), cfg);
  auto ref = TrainState::fresh(tiny_spec(), cfg);
  train_star(state, cfg, corpus().train);
  std::vector<nn::Param<float>*> a, b;
  state.model.mixin().collect(a);
  ref.model.mixin().collect(b);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
}

TEST_CASE("train_star: a diverging learning rate raises a numeric error") {
  auto cfg = short_config(50);
  cfg.lr = 1e12;
  auto state = TrainState::fresh(tiny_spec(), cfg);
  CHECK_THROWS_AS(train_star(state, cfg, corpus().train), NumericError);
}

TEST_CASE("train_bitemporal runs on real pairs and emits eval records") {
  auto cfg = short_config(4);
  cfg.mode = TrainMode::Bitemporal;
  cfg.batch_size = 2;
  cfg.eval_every = 2;
  auto state = TrainState::fresh(tiny_spec(), cfg);
  TrainHooks hooks;
  hooks.eval_set = &corpus().eval;
  auto log = train_bitemporal(state, cfg, corpus().eval, hooks);
  int evals = 0;
  for (const auto& r : log)
    if (r["kind"] == "eval") {
      ++evals;
      for (auto key : {"changestar_iou", "changestar_f1", "pcc_iou", "pcc_f1"}) CHECK(r.contains(key));
    }
  CHECK(evals == 2);
  CHECK_THROWS_AS(train_star(state, cfg, corpus().train), ConfigError);
}
