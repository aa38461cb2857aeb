#include "star/config.hpp"

#include <fstream>
#include <limits>
#include <set>

#include "star/errors.hpp"

namespace star {

namespace {

using json = nlohmann::json;

// Strict view of one JSON object: typed getters, and finish() rejects keys never asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "must be an integer");
      const auto x = v->get<long long>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
        fail(key, "is out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
        fail(key, "must be a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "must be a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "must be true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "must be a string");
      out = v->get<std::string>();
    }
  }
  /// Nested object, or nullopt when absent.
  std::optional<Section> section(const std::string& key) {
    if (const json* v = find(key)) return Section(*v, name(key));
    return std::nullopt;
  }
  const json* raw(const std::string& key) { return find(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + name(k) + "'");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config: '" + (key.empty() ? where_ : name(key)) + "' " + what);
  }

 private:
  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string name(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

void read_model(Section s, ModelSpec& m) {
  s.get("backbone", m.backbone);
  s.get("in_channels", m.in_channels);
  s.get("base_width", m.base_width);
  if (auto cm = s.section("change_mixin")) {
    cm->get("layers", m.mixin.layers);
    cm->get("channels", m.mixin.channels);
    cm->finish();
  }
  s.finish();
  if (m.backbone != "reference") s.fail("backbone", "must be \"reference\" (the only backbone built in)");
  if (m.in_channels < 1) s.fail("in_channels", "must be >= 1");
  if (m.base_width < 1) s.fail("base_width", "must be >= 1");
  if (m.mixin.layers < 1) s.fail("change_mixin.layers", "must be >= 1");
  if (m.mixin.channels < 1) s.fail("change_mixin.channels", "must be >= 1");
}

void read_augment(Section s, AugmentationConfig& a) {
  s.get("hflip", a.hflip);
  s.get("vflip", a.vflip);
  s.get("rot90", a.rot90);
  if (const json* j = s.raw("scale_jitter")) {
    if (!j->is_array() || j->size() != 2 || !(*j)[0].is_number() || !(*j)[1].is_number())
      s.fail("scale_jitter", "must be [lo, hi]");
    a.scale_lo = (*j)[0].get<double>();
    a.scale_hi = (*j)[1].get<double>();
  }
  s.get("crop", a.crop);
  s.finish();
}

void read_train(Section s, TrainConfig& t) {
  std::string mode(to_string(t.mode)), label(to_string(t.label_mode));
  s.get("mode", mode);
  s.get("max_steps", t.max_steps);
  s.get("batch_size", t.batch_size);
  s.get("lr", t.lr);
  s.get("poly_power", t.poly_power);
  s.get("momentum", t.momentum);
  s.get("weight_decay", t.weight_decay);
  s.get("seed", t.seed);
  s.get("log_every", t.log_every);
  s.get("eval_every", t.eval_every);
  s.get("checkpoint_every", t.checkpoint_every);
  s.get("eval_batch", t.eval_batch);
  s.get("label_mode", label);
  s.get("use_semantic", t.loss.use_semantic);
  s.get("use_symmetry", t.loss.use_symmetry);
  s.get("use_change", t.use_change);
  if (auto a = s.section("augment")) read_augment(std::move(*a), t.augment);
  s.finish();
  t.mode = parse_train_mode(mode);
  try {
    t.label_mode = parse_label_mode(label);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("config: train.label_mode: ") + e.what());
  }
}

void read_eval(Section s, EvalOptions& e) {
  s.get("batch", e.batch);
  s.get("threshold", e.threshold);
  if (const json* w = s.raw("window")) {
    if (!w->is_null()) {
      if (!w->is_number_integer() || w->get<int>() < 1) s.fail("window", "must be a positive integer or null");
      e.window = w->get<int>();
    }
  }
  s.get("stride", e.stride);
  s.finish();
  if (e.batch < 1) s.fail("batch", "must be >= 1");
  if (!(e.threshold > 0 && e.threshold < 1)) s.fail("threshold", "must lie in (0, 1)");
  if (e.stride < 0) s.fail("stride", "must be >= 0");
  if (e.window && e.stride > *e.window) s.fail("stride", "must not exceed the window");
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  Section s(doc, "");
  std::string train_data, eval_data, out = cfg.output_dir.string();
  s.get("train_data", train_data);
  s.get("eval_data", eval_data);
  s.get("output_dir", out);
  if (auto m = s.section("model")) read_model(std::move(*m), cfg.model);
  if (auto t = s.section("train")) read_train(std::move(*t), cfg.train);
  if (auto e = s.section("eval")) read_eval(std::move(*e), cfg.eval);
  s.finish();
  if (train_data.empty()) s.fail("train_data", "is required");
  cfg.train_data = resolve(base_dir, train_data);
  if (!eval_data.empty()) cfg.eval_data = resolve(base_dir, eval_data);
  cfg.output_dir = resolve(base_dir, out);
  try {
    cfg.train.validate();
    cfg.train.augment.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("config: train.augment: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc, path.parent_path());
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["train_data"] = cfg.train_data.string();
  if (cfg.eval_data) j["eval_data"] = cfg.eval_data->string();
  j["output_dir"] = cfg.output_dir.string();
  j["model"] = to_json(cfg.model);
  auto t = to_json(cfg.train);
  t.erase("workers");
  j["train"] = t;
  j["eval"] = {{"batch", cfg.eval.batch},
               {"threshold", cfg.eval.threshold},
               {"window", cfg.eval.window ? nlohmann::json(*cfg.eval.window) : nlohmann::json(nullptr)},
               {"stride", cfg.eval.stride}};
  return j;
}

}  // namespace star
