#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "star/config.hpp"
#include "star/errors.hpp"
#include "tmpdir.hpp"

using namespace star;
using json = nlohmann::json;

TEST_CASE("minimal config takes defaults") {
  auto c = parse_run_config(json{{"train_data", "data/train"}});
  CHECK(c.train_data == "data/train");
  CHECK_FALSE(c.eval_data.has_value());
  CHECK(c.train.mode == TrainMode::Star);
  CHECK(c.train.lr == 0.03);
  CHECK(c.model.mixin.layers == 4);
  CHECK(c.model.mixin.channels == 16);
}

TEST_CASE("every documented key is read") {
  json doc = {{"train_data", "t"},
              {"eval_data", "e"},
              {"output_dir", "o"},
              {"model", {{"backbone", "reference"}, {"in_channels", 3}, {"base_width", 4},
                         {"change_mixin", {{"layers", 2}, {"channels", 8}}}}},
              {"train", {{"mode", "bitemporal"}, {"max_steps", 10}, {"batch_size", 1}, {"lr", 0.01},
                         {"poly_power", 1.0}, {"momentum", 0.8}, {"weight_decay", 0.0}, {"seed", 5},
                         {"log_every", 2}, {"eval_every", 5}, {"checkpoint_every", 5}, {"eval_batch", 4},
                         {"label_mode", "or"}, {"use_semantic", false}, {"use_symmetry", false},
                         {"use_change", true},
                         {"augment", {{"hflip", false}, {"vflip", false}, {"rot90", false},
                                      {"scale_jitter", {1.0, 1.0}}, {"crop", 32}}}}},
              {"eval", {{"batch", 2}, {"threshold", 0.4}, {"window", 64}, {"stride", 32}}}};
  auto c = parse_run_config(doc, "/base");
  CHECK(c.train_data == "/base/t");
  CHECK(*c.eval_data == "/base/e");
  CHECK(c.output_dir == "/base/o");
  CHECK(c.model.base_width == 4);
  CHECK(c.model.mixin.channels == 8);
  CHECK(c.train.mode == TrainMode::Bitemporal);
  CHECK(c.train.batch_size == 1);
  CHECK(c.train.seed == 5);
  CHECK(c.train.label_mode == LabelMode::Or);
  CHECK_FALSE(c.train.loss.use_semantic);
  CHECK(c.train.augment.crop == 32);
  CHECK_FALSE(c.train.augment.rot90);
  CHECK(c.eval.window == 64);
  CHECK(c.eval.threshold == 0.4);

  // to_json then parse again gives the same config.
  auto again = parse_run_config(to_json(c));
  CHECK(to_json(again) == to_json(c));
}

TEST_CASE("unknown keys are rejected at any depth") {
  CHECK_THROWS_AS(parse_run_config(json{{"train_data", "t"}, {"extra", 1}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train_data", "t"}, {"train", {{"learning_rate", 0.1}}}}), ConfigError);
  CHECK_THROWS_AS(
      parse_run_config(json{{"train_data", "t"}, {"model", {{"change_mixin", {{"depth", 2}}}}}}),
      ConfigError);
  CHECK_THROWS_AS(
      parse_run_config(json{{"train_data", "t"}, {"train", {{"augment", {{"blur", true}}}}}}), ConfigError);
}

TEST_CASE("wrong types and ranges are configuration errors with the key in the message") {
  auto message = [](const json& doc) {
    try {
      parse_run_config(doc);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message(json{{"train_data", "t"}, {"train", {{"max_steps", "ten"}}}}).find("train.max_steps") !=
        std::string::npos);
  CHECK(message(json::object()).find("train_data") != std::string::npos);
  CHECK_THROWS_AS(parse_run_config(json{{"train_data", "t"}, {"train", {{"batch_size", 1}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train_data", "t"}, {"train", {{"label_mode", "and"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train_data", "t"}, {"train", {{"mode", "semi"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train_data", "t"}, {"model", {{"backbone", "resnet"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train_data", "t"}, {"train", {{"augment", {{"scale_jitter", {2, 1}}}}}}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train_data", "t"}, {"eval", {{"threshold", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train_data", "t"}, {"train", {{"lr", -1}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json::array()), ConfigError);
}

TEST_CASE("load_run_config reports unreadable and malformed files") {
  star::testing::TempDir dir("cfg");
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
  std::ofstream(dir / "ok.json") << R"({"train_data": "train"})";
  CHECK(load_run_config(dir / "ok.json").train_data == dir.path() / "train");
}
