#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "star/evaluation.hpp"
#include "star/model.hpp"
#include "star/training.hpp"

namespace star {

/// One run, as read from a JSON file. Every key is optional except `train_data`; unknown
/// keys anywhere in the document are a ConfigError. Relative paths are resolved against
/// the directory holding the config file.
struct RunConfig {
  std::filesystem::path train_data;
  std::optional<std::filesystem::path> eval_data;
  std::filesystem::path output_dir = "runs/default";
  ModelSpec model;
  TrainConfig train;
  EvalOptions eval;
};

/// Validates the whole document (types, ranges, unknown keys) before returning.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
/// Reads and parses a config file. Unreadable files and malformed JSON are ConfigErrors.
RunConfig load_run_config(const std::filesystem::path& path);

/// The document form of a config (paths as given, not resolved).
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace star
