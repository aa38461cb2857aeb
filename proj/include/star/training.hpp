#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/datasets.hpp"
#include "star/losses.hpp"
#include "star/model.hpp"
#include "star/pairing.hpp"

namespace star {

/// lr0 * (1 - step / max_steps)^power. Throws ContractError unless 0 <= step <= max_steps.
double poly_lr(int step, int max_steps, double lr0, double power);

enum class TrainMode { Star, Bitemporal };
TrainMode parse_train_mode(std::string_view s);
std::string_view to_string(TrainMode m);

struct TrainConfig {
  TrainMode mode = TrainMode::Star;
  int max_steps = 2000;
  int batch_size = 8;
  double lr = 0.03;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  AugmentationConfig augment;
  LossFlags loss;
  /// Off trains the segmentation model alone (the PCC baseline); ChangeMixin is untouched.
  bool use_change = true;
  LabelMode label_mode = LabelMode::Xor;
  std::uint64_t seed = 0;
  int log_every = 10;
  int eval_every = 200;
  int checkpoint_every = 0;  // 0: only at the end
  int eval_batch = 8;
  int workers = 1;  // data preparation threads; results do not depend on this

  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

/// SGD with momentum (PyTorch convention: buf = m * buf + g; w -= lr * buf). Weight decay
/// is added to the gradient of parameters flagged for decay (conv weights).
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  /// Parameters listed in `frozen` keep their values and momentum (no decay either).
  void step(const std::vector<nn::Param<float>*>& params, double lr,
            const std::vector<nn::Param<float>*>& frozen = {});

  std::vector<Tensor<float>>& buffers() { return buffers_; }
  const std::vector<Tensor<float>>& buffers() const { return buffers_; }

 private:
  double momentum_, weight_decay_;
  std::vector<Tensor<float>> buffers_;
};

/// Everything needed to continue a run: weights, optimizer state, and step. All randomness
/// after initialization is derived from (seed, step), so no generator state is stored.
struct TrainState {
  ModelSpec spec;
  ChangeStar<float> model;
  Sgd optimizer;
  int step = 0;
  std::uint64_t seed = 0;
  std::optional<double> best_iou;

  static TrainState fresh(const ModelSpec& spec, const TrainConfig& cfg);
};

/// One append-only log line. Kinds: "train" (losses) and "eval" (IoU/F1).
using LogRecord = nlohmann::json;

struct TrainHooks {
  /// Evaluated every cfg.eval_every steps and after the last step (change head and PCC
  /// from the model's own segmentation heads).
  const std::vector<BitemporalSample>* eval_set = nullptr;
  /// Append JSON lines here when set.
  std::optional<std::filesystem::path> log_path;
  /// Save checkpoints here when set (every cfg.checkpoint_every steps and at the end).
  std::optional<std::filesystem::path> checkpoint_dir;
  nlohmann::json run_config;
  std::function<void(const LogRecord&)> on_record;
};

/// STAR: pseudo pairs from single-temporal batches. Continues from state.step up to
/// cfg.max_steps and returns the records emitted. Throws ConfigError for invalid
/// configurations and NumericError on a non-finite loss.
std::vector<LogRecord> train_star(TrainState& state, const TrainConfig& cfg,
                                  const std::vector<Sample>& data, const TrainHooks& hooks = {});

/// Supervised training on real pairs. The semantic term is used only when every pair
/// carries both semantic masks.
std::vector<LogRecord> train_bitemporal(TrainState& state, const TrainConfig& cfg,
                                        const std::vector<BitemporalSample>& data,
                                        const TrainHooks& hooks = {});

// ------------------------------------------------------------------------- checkpoint

/// Checkpoint directory: meta.json (architecture, tensor table, step, seed, config),
/// weights.bin (float32 little-endian, tensor table order) and optimizer.bin (momentum
/// buffers, same order as the parameters).
void save_checkpoint(const std::filesystem::path& dir, TrainState& state,
                     const nlohmann::json& run_config = {});
/// Throws DataError when missing, corrupt, or built for a different architecture.
TrainState load_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg);
ChangeStar<float> load_model(const std::filesystem::path& dir, ModelSpec* spec = nullptr);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

}  // namespace star
