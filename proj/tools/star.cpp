// star: command-line entry points (synth, train, eval, ablate, model-info).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "star/config.hpp"
#include "star/errors.hpp"
#include "star/evaluation.hpp"
#include "star/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace star;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

int env_workers() {
  const char* v = std::getenv("STAR_NUM_WORKERS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 256)
    throw ConfigError("STAR_NUM_WORKERS must be an integer in [1, 256], got '" + std::string(v) + "'");
  return static_cast<int>(n);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<json> read_log(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  if (!in) throw DataError("cannot read log " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      throw DataError("malformed log line in " + path.string());
    }
  }
  return out;
}

std::vector<json> eval_records(const std::vector<json>& log) {
  std::vector<json> out;
  std::copy_if(log.begin(), log.end(), std::back_inserter(out),
               [](const json& r) { return r.value("kind", "") == "eval"; });
  return out;
}

// ------------------------------------------------------------------------------ synth

struct SynthArgs {
  fs::path out;
  std::uint64_t seed = 0;
  int n_train = 500;
  int n_eval = 100;
  SyntheticSceneSpec spec;
};

int cmd_synth(SynthArgs a) {
  a.spec.seed = a.seed;
  try {
    a.spec.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  if (a.n_train < 0 || a.n_eval < 0) throw ConfigError("sample counts must be nonnegative");
  const auto data = generate_synthetic(a.spec, a.n_train, a.n_eval);
  write_single_temporal(a.out / "train", data.train, "train");
  write_bitemporal(a.out / "eval", data.eval, "eval");
  std::cout << json{{"train", (a.out / "train").string()},
                    {"eval", (a.out / "eval").string()},
                    {"n_train", a.n_train},
                    {"n_eval", a.n_eval},
                    {"seed", a.seed}}
                   .dump()
            << "\n";
  return kOk;
}

// ------------------------------------------------------------------------------ train

struct RunOutcome {
  std::vector<LogRecord> log;
  std::optional<json> report;
};

/// Trains one configured run into cfg.output_dir: log.jsonl, checkpoint/, report.json.
RunOutcome run_training(const RunConfig& cfg, const json& provenance, bool resume) {
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoint";
  const fs::path log_path = out / "log.jsonl";

  std::optional<std::vector<BitemporalSample>> eval_set;
  if (cfg.eval_data) eval_set = load_bitemporal(*cfg.eval_data);

  TrainState state = resume && fs::exists(ckpt / "meta.json") ? load_checkpoint(ckpt, cfg.train)
                                                               : TrainState::fresh(cfg.model, cfg.train);
  if (resume && !(state.spec.base_width == cfg.model.base_width &&
                  state.spec.mixin.layers == cfg.model.mixin.layers &&
                  state.spec.mixin.channels == cfg.model.mixin.channels))
    throw ConfigError("checkpoint in " + ckpt.string() + " was built for a different model");
  if (!resume) fs::remove(log_path);

  TrainHooks hooks;
  hooks.eval_set = eval_set ? &*eval_set : nullptr;
  hooks.log_path = log_path;
  hooks.checkpoint_dir = ckpt;
  hooks.run_config = provenance;

  RunOutcome r;
  if (cfg.train.mode == TrainMode::Star)
    r.log = train_star(state, cfg.train, load_single_temporal(cfg.train_data), hooks);
  else
    r.log = train_bitemporal(state, cfg.train, load_bitemporal(cfg.train_data), hooks);
  save_checkpoint(ckpt, state, provenance);

  if (eval_set) {
    auto opts = cfg.eval;
    std::vector<MethodResult> results;
    if (cfg.train.use_change) results.push_back(evaluate(state.model, *eval_set, Method::ChangeStar, opts));
    results.push_back(evaluate(state.model, *eval_set, Method::Pcc, opts));
    const auto curve = eval_records(read_log(log_path));
    r.report = compare_report(results, curve);
    write_json(out / "report.json", *r.report);
    if (!curve.empty()) write_learning_curve_plot(out / "learning_curve.png", curve);
  }
  return r;
}

struct TrainArgs {
  fs::path config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::optional<std::string> mode;
  bool resume = false;
};

RunConfig apply_overrides(RunConfig cfg, const TrainArgs& a) {
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.out) cfg.output_dir = *a.out;
  if (a.mode) cfg.train.mode = parse_train_mode(*a.mode);
  cfg.train.workers = env_workers();
  cfg.train.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = apply_overrides(load_run_config(a.config), a);
  fs::create_directories(cfg.output_dir);
  // The file as written by the user, byte for byte; overrides are recorded in the checkpoint.
  fs::copy_file(a.config, cfg.output_dir / "config.json", fs::copy_options::overwrite_existing);
  const auto outcome = run_training(cfg, to_json(cfg), a.resume);
  json summary{{"output_dir", cfg.output_dir.string()}, {"steps", cfg.train.max_steps}};
  if (outcome.report) {
    for (const auto& [name, m] : outcome.report->at("methods").items())
      summary[name] = {{"iou", m["iou"]}, {"f1", m["f1"]}};
  }
  std::cout << summary.dump() << "\n";
  return kOk;
}

// ------------------------------------------------------------------------------- eval

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  fs::path out = "eval_out";
  std::optional<std::string> method;
  std::optional<fs::path> baseline;
  std::optional<fs::path> log;
  std::optional<int> window;
  int stride = 0;
  double threshold = 0.5;
  int panels = 8;
};

int cmd_eval(const EvalArgs& a) {
  std::vector<Method> methods;
  try {
    if (a.method)
      methods.push_back(parse_method(*a.method));
    else
      methods = {Method::ChangeStar, Method::Pcc};
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  EvalOptions opts;
  opts.threshold = a.threshold;
  opts.window = a.window;
  opts.stride = a.stride;
  if (!(a.threshold > 0 && a.threshold < 1)) throw ConfigError("--threshold must lie in (0, 1)");
  if (a.window && (*a.window < 1 || a.stride < 0 || a.stride > *a.window))
    throw ConfigError("--window must be positive and --stride in [0, window]");

  auto model = load_model(a.checkpoint);
  std::optional<ChangeStar<float>> baseline;
  if (a.baseline) baseline = load_model(*a.baseline);
  const auto pairs = load_bitemporal(a.data);

  std::vector<MethodResult> results;
  std::vector<std::vector<BinaryMask>> predictions;
  for (auto m : methods) {
    // PCC comes from the baseline segmentation model when one is given.
    auto& net = (m == Method::Pcc && baseline) ? *baseline : model;
    auto pred = predict_changes(net, pairs, m, opts);
    MethodResult r;
    r.method = m;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto c = accumulate({}, pred[i], pairs[i].change);
      r.tiles.push_back({pairs[i].id, c});
      r.counts += c;
    }
    results.push_back(std::move(r));
    predictions.push_back(std::move(pred));
  }
  std::vector<json> curve;
  if (a.log) curve = eval_records(read_log(*a.log));
  auto report = compare_report(results, curve);
  report["checkpoint"] = a.checkpoint.string();
  if (a.baseline) report["baseline"] = a.baseline->string();
  write_json(a.out / "report.json", report);
  if (a.panels > 0)
    write_error_panels(a.out / "error_maps", pairs, predictions, static_cast<std::size_t>(a.panels));
  if (!curve.empty()) write_learning_curve_plot(a.out / "learning_curve.png", curve);

  json summary;
  for (const auto& r : results)
    summary[std::string(to_string(r.method))] = {{"iou", r.iou()}, {"f1", r.f1()}};
  std::cout << summary.dump() << "\n";
  return kOk;
}

// ----------------------------------------------------------------------------- ablate

struct FlagRow {
  std::string label;
  LossFlags flags;
};

const std::vector<FlagRow>& component_rows() {
  static const std::vector<FlagRow> rows{{"(b)", {false, false}},
                                         {"(c)", {true, false}},
                                         {"(d)", {false, true}},
                                         {"(e)", {true, true}}};
  return rows;
}

struct Grid {
  std::vector<int> layers;
  std::vector<int> channels;
  std::vector<FlagRow> flags;  // empty: the config's own flags
  std::vector<LabelMode> label_modes;
  std::vector<std::uint64_t> seeds;
};

template <typename T>
std::vector<T> int_list(const json& j, const std::string& key) {
  if (!j.is_array() || j.empty()) throw ConfigError("grid: '" + key + "' must be a nonempty list");
  std::vector<T> out;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ConfigError("grid: '" + key + "' entries must be nonnegative integers");
    out.push_back(v.get<T>());
  }
  return out;
}

/// Grid file: {"layers": [..], "channels": [..], "loss_flags": ["b","c","d","e"] | true,
///             "label_modes": ["xor","or"], "seeds": [..]}; every key optional.
Grid read_grid(const json& j, const RunConfig& base) {
  if (!j.is_object()) throw ConfigError("grid must be a JSON object");
  Grid g{{base.model.mixin.layers}, {base.model.mixin.channels}, {}, {base.train.label_mode}, {base.train.seed}};
  for (const auto& [key, v] : j.items()) {
    if (key == "layers") {
      g.layers = int_list<int>(v, key);
    } else if (key == "channels") {
      g.channels = int_list<int>(v, key);
    } else if (key == "seeds") {
      g.seeds = int_list<std::uint64_t>(v, key);
    } else if (key == "loss_flags") {
      if (v.is_boolean()) {
        if (v.get<bool>()) g.flags = component_rows();
      } else if (v.is_array()) {
        for (const auto& r : v) {
          const std::string want = "(" + (r.is_string() ? r.get<std::string>() : std::string("?")) + ")";
          auto it = std::find_if(component_rows().begin(), component_rows().end(),
                                 [&](const FlagRow& f) { return f.label == want; });
          if (it == component_rows().end()) throw ConfigError("grid: loss_flags rows are b, c, d, e");
          g.flags.push_back(*it);
        }
      } else {
        throw ConfigError("grid: 'loss_flags' must be true/false or a list of rows");
      }
    } else if (key == "label_modes") {
      if (!v.is_array() || v.empty()) throw ConfigError("grid: 'label_modes' must be a nonempty list");
      g.label_modes.clear();
      for (const auto& m : v) {
        if (!m.is_string()) throw ConfigError("grid: label modes are strings");
        try {
          g.label_modes.push_back(parse_label_mode(m.get<std::string>()));
        } catch (const ContractError& e) {
          throw ConfigError(std::string("grid: ") + e.what());
        }
      }
    } else {
      throw ConfigError("grid: unknown key '" + key + "'");
    }
  }
  for (int n : g.layers)
    if (n < 1) throw ConfigError("grid: layers must be >= 1");
  for (int c : g.channels)
    if (c < 1) throw ConfigError("grid: channels must be >= 1");
  return g;
}

struct AblateArgs {
  fs::path config;
  std::optional<fs::path> grid;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  bool component_flags = false;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

int cmd_ablate(const AblateArgs& a) {
  TrainArgs ta{a.config, a.seed, a.out, a.mode, false};
  const RunConfig base = apply_overrides(load_run_config(a.config), ta);
  if (!base.eval_data) throw ConfigError("ablate needs 'eval_data' in the config");
  json grid_doc = json::object();
  if (a.grid) {
    std::ifstream in(*a.grid);
    if (!in) throw ConfigError("cannot read grid file " + a.grid->string());
    try {
      grid_doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("grid file is not valid JSON: " + std::string(e.what()));
    }
  }
  if (a.component_flags) grid_doc["loss_flags"] = true;
  const Grid grid = read_grid(grid_doc, base);

  fs::create_directories(base.output_dir);
  fs::copy_file(a.config, base.output_dir / "config.json", fs::copy_options::overwrite_existing);
  if (a.grid) fs::copy_file(*a.grid, base.output_dir / "grid.json", fs::copy_options::overwrite_existing);

  const std::vector<FlagRow> flag_rows =
      grid.flags.empty() ? std::vector<FlagRow>{{"", base.train.loss}} : grid.flags;
  json rows = json::array();
  int index = 0;
  for (int layers : grid.layers)
    for (int channels : grid.channels)
      for (const auto& fr : flag_rows)
        for (auto mode : grid.label_modes)
          for (auto seed : grid.seeds) {
            RunConfig cfg = base;
            cfg.model.mixin = {layers, channels};
            cfg.train.loss = fr.flags;
            cfg.train.label_mode = mode;
            cfg.train.seed = seed;
            char dir[32];
            std::snprintf(dir, sizeof(dir), "run_%03d", index++);
            cfg.output_dir = base.output_dir / dir;
            write_json(cfg.output_dir / "run_config.json", to_json(cfg));
            const auto outcome = run_training(cfg, to_json(cfg), false);
            const auto& methods = outcome.report->at("methods");
            json row{{"row", fr.label},
                     {"layers", layers},
                     {"channels", channels},
                     {"use_semantic", fr.flags.use_semantic},
                     {"use_symmetry", fr.flags.use_symmetry},
                     {"label_mode", std::string(to_string(mode))},
                     {"seed", seed},
                     {"run_dir", dir},
                     {"pcc_iou", methods["pcc"]["iou"]},
                     {"pcc_f1", methods["pcc"]["f1"]}};
            if (methods.contains("changestar")) {
              row["iou"] = methods["changestar"]["iou"];
              row["f1"] = methods["changestar"]["f1"];
            }
            std::cout << (fr.label.empty() ? "" : fr.label + " ") << "N=" << layers << " d_c=" << channels
                      << " " << to_string(mode) << " seed=" << seed << "  IoU "
                      << fmt(row.value("iou", 0.0)) << "  F1 " << fmt(row.value("f1", 0.0)) << std::endl;
            rows.push_back(std::move(row));
          }
  write_json(base.output_dir / "ablation.json", {{"rows", rows}});
  return kOk;
}

// ------------------------------------------------------------------------- model-info

struct InfoArgs {
  std::optional<fs::path> config;
  std::optional<int> layers, channels, width, in_channels;
};

int cmd_model_info(const InfoArgs& a) {
  ModelSpec spec = a.config ? load_run_config(*a.config).model : ModelSpec{};
  if (a.layers) spec.mixin.layers = *a.layers;
  if (a.channels) spec.mixin.channels = *a.channels;
  if (a.width) spec.base_width = *a.width;
  if (a.in_channels) spec.in_channels = *a.in_channels;
  if (spec.mixin.layers < 1 || spec.mixin.channels < 1 || spec.base_width < 1 || spec.in_channels < 1)
    throw ConfigError("model sizes must be positive");
  auto model = make_changestar<float>(spec, 0);
  json tensors = json::array();
  std::vector<nn::Param<float>*> mixin_params;
  model.mixin().collect(mixin_params);
  for (auto* p : mixin_params) {
    const auto& v = p->value;
    tensors.push_back({{"name", p->name}, {"shape", {v.n(), v.c(), v.h(), v.w()}}, {"count", v.size()}});
  }
  const auto& bb = model.backbone();
  json info{{"model", to_json(spec)},
            {"feature_channels", bb.feature_channels()},
            {"feature_stride", bb.stride()},
            {"backbone_params", bb.param_count()},
            {"change_mixin_params", model.mixin().param_count()},
            {"total_params", model.param_count()},
            {"change_mixin_tensors", tensors}};
  std::cout << info.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-temporal supervised change detection (STAR / ChangeStar)"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic single-temporal corpus and eval pairs");
  synth->add_option("--out", sa.out, "Output directory (gets train/ and eval/)")->required();
  synth->add_option("--seed", sa.seed, "Generator seed");
  synth->add_option("--train", sa.n_train, "Number of single-temporal tiles");
  synth->add_option("--eval", sa.n_eval, "Number of bitemporal pairs");
  synth->add_option("--canvas", sa.spec.canvas, "Tile size in pixels");
  synth->add_option("--min-objects", sa.spec.min_objects);
  synth->add_option("--max-objects", sa.spec.max_objects);
  synth->add_option("--min-object-size", sa.spec.min_object_size);
  synth->add_option("--max-object-size", sa.spec.max_object_size);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train from a run config");
  train->add_option("--config", ta.config, "Run config (JSON)")->required();
  train->add_option("--seed", ta.seed, "Override train.seed");
  train->add_option("--out", ta.out, "Override output_dir");
  train->add_option("--mode", ta.mode, "Override train.mode")->check(CLI::IsMember({"star", "bitemporal"}));
  train->add_flag("--resume", ta.resume, "Continue from <out>/checkpoint when present");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on bitemporal pairs");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint directory")->required();
  eval->add_option("--data", ea.data, "Bitemporal dataset directory")->required();
  eval->add_option("--out", ea.out, "Report directory");
  eval->add_option("--method", ea.method, "changestar or pcc (default: both)");
  eval->add_option("--baseline", ea.baseline, "Checkpoint whose segmentation heads drive PCC");
  eval->add_option("--log", ea.log, "Training log (JSON lines) for the learning curve");
  eval->add_option("--window", ea.window, "Sliding-window size");
  eval->add_option("--stride", ea.stride, "Sliding-window stride (default: window)");
  eval->add_option("--threshold", ea.threshold, "Probability threshold");
  eval->add_option("--panels", ea.panels, "Error-map panels to write");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate a grid of variants");
  ablate->add_option("--config", aa.config, "Base run config (JSON)")->required();
  ablate->add_option("--grid", aa.grid, "Grid file (JSON)");
  ablate->add_option("--out", aa.out, "Override output_dir");
  ablate->add_option("--seed", aa.seed, "Override train.seed");
  ablate->add_option("--mode", aa.mode)->check(CLI::IsMember({"star", "bitemporal"}));
  ablate->add_flag("--component-flags", aa.component_flags, "Add the (b)-(e) loss-flag rows");

  InfoArgs ia;
  auto* info = app.add_subcommand("model-info", "Parameter counts of the configured model");
  info->add_option("--config", ia.config, "Run config (JSON)");
  info->add_option("--layers", ia.layers, "ChangeMixin layers N");
  info->add_option("--channels", ia.channels, "ChangeMixin filters d_c");
  info->add_option("--width", ia.width, "Backbone base width");
  info->add_option("--in-channels", ia.in_channels, "Input bands");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*ablate) return cmd_ablate(aa);
    if (*info) return cmd_model_info(ia);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const ContractError& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
