#include <bit>
#include <fstream>

#include "star/training.hpp"

namespace star {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr const char* kFormat = "star-checkpoint";
constexpr int kVersion = 1;

json shape_of(const Tensor<float>& t) { return json::array({t.n(), t.c(), t.h(), t.w()}); }

void write_tensors(const fs::path& path, const std::vector<const Tensor<float>*>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto* t : tensors)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(float)));
}

void read_tensors(const fs::path& path, const std::vector<Tensor<float>*>& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::size_t expected = 0;
  for (const auto* t : tensors) expected += t->size() * sizeof(float);
  in.seekg(0, std::ios::end);
  if (static_cast<std::size_t>(in.tellg()) != expected)
    throw DataError(path.string() + ": size does not match the tensor table");
  in.seekg(0);
  for (auto* t : tensors)
    in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
  if (!in) throw DataError("truncated " + path.string());
}

json tensor_table(ChangeStar<float>& model) {
  json table = json::array();
  for (auto* p : model.parameters()) table.push_back({{"name", p->name}, {"shape", shape_of(p->value)}, {"kind", "param"}});
  int k = 0;
  for (auto* b : model.buffers())
    table.push_back({{"name", "buffer" + std::to_string(k++)}, {"shape", shape_of(*b)}, {"kind", "buffer"}});
  return table;
}

std::vector<Tensor<float>*> all_tensors(ChangeStar<float>& model) {
  std::vector<Tensor<float>*> out;
  for (auto* p : model.parameters()) out.push_back(&p->value);
  for (auto* b : model.buffers()) out.push_back(b);
  return out;
}

json read_meta(const fs::path& dir) {
  const auto path = dir / "meta.json";
  if (!fs::exists(path)) throw DataError("no checkpoint at " + dir.string());
  try {
    std::ifstream in(path);
    json meta = json::parse(in);
    if (meta.value("format", "") != kFormat || meta.value("version", 0) != kVersion)
      throw DataError(path.string() + ": not a version " + std::to_string(kVersion) + " " + kFormat);
    if (meta.value("architecture", "") != "changestar")
      throw DataError(path.string() + ": architecture '" + meta.value("architecture", "") +
                      "' is not changestar");
    return meta;
  } catch (const json::exception& e) {
    throw DataError("invalid " + path.string() + ": " + e.what());
  }
}

ChangeStar<float> restore_model(const fs::path& dir, const json& meta, ModelSpec& spec) {
  try {
    spec = model_spec_from_json(meta.at("model"));
  } catch (const std::exception& e) {
    throw DataError("checkpoint model description: " + std::string(e.what()));
  }
  auto model = make_changestar<float>(spec, meta.value("seed", std::uint64_t{0}));
  if (tensor_table(model) != meta.at("tensors"))
    throw DataError(dir.string() + ": tensor table does not match architecture " +
                    to_json(spec).dump());
  read_tensors(dir / "weights.bin", all_tensors(model));
  return model;
}

}  // namespace

json to_json(const ModelSpec& spec) {
  return {{"backbone", spec.backbone},
          {"in_channels", spec.in_channels},
          {"base_width", spec.base_width},
          {"change_mixin", {{"layers", spec.mixin.layers}, {"channels", spec.mixin.channels}}}};
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  s.backbone = j.at("backbone").get<std::string>();
  s.in_channels = j.at("in_channels").get<int>();
  s.base_width = j.at("base_width").get<int>();
  s.mixin.layers = j.at("change_mixin").at("layers").get<int>();
  s.mixin.channels = j.at("change_mixin").at("channels").get<int>();
  return s;
}

void save_checkpoint(const fs::path& dir, TrainState& state, const json& run_config) {
  fs::create_directories(dir);
  json meta;
  meta["format"] = kFormat;
  meta["version"] = kVersion;
  meta["architecture"] = "changestar";
  meta["model"] = to_json(state.spec);
  meta["step"] = state.step;
  meta["seed"] = state.seed;
  meta["dtype"] = "float32";
  meta["param_count"] = state.model.param_count();
  meta["tensors"] = tensor_table(state.model);
  meta["weights_file"] = "weights.bin";
  meta["optimizer_file"] = "optimizer.bin";
  if (state.best_iou) meta["best_iou"] = *state.best_iou;
  if (!run_config.is_null()) meta["config"] = run_config;

  auto tensors = all_tensors(state.model);
  write_tensors(dir / "weights.bin", {tensors.begin(), tensors.end()});
  std::vector<const Tensor<float>*> buffers;
  for (const auto& b : state.optimizer.buffers()) buffers.push_back(&b);
  write_tensors(dir / "optimizer.bin", buffers);
  std::ofstream out(dir / "meta.json");
  out << meta.dump(2) << "\n";
}

TrainState load_checkpoint(const fs::path& dir, const TrainConfig& cfg) {
  const json meta = read_meta(dir);
  ModelSpec spec;
  auto model = restore_model(dir, meta, spec);
  TrainState state{spec, std::move(model), Sgd(cfg.momentum, cfg.weight_decay),
                   meta.value("step", 0), meta.value("seed", std::uint64_t{0}), std::nullopt};
  if (meta.contains("best_iou")) state.best_iou = meta["best_iou"].get<double>();
  const auto opt_path = dir / "optimizer.bin";
  if (fs::exists(opt_path) && fs::file_size(opt_path) > 0) {
    auto& bufs = state.optimizer.buffers();
    for (auto* p : state.model.parameters())
      bufs.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
    std::vector<Tensor<float>*> ptrs;
    for (auto& b : bufs) ptrs.push_back(&b);
    read_tensors(opt_path, ptrs);
  }
  return state;
}

ChangeStar<float> load_model(const fs::path& dir, ModelSpec* spec) {
  const json meta = read_meta(dir);
  ModelSpec s;
  auto model = restore_model(dir, meta, s);
  if (spec) *spec = s;
  return model;
}

}  // namespace star
