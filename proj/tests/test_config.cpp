#include <doctest.h>

#include <fstream>

#include "mcswin/config.hpp"
#include "mcswin/error.hpp"
#include "support.hpp"

using namespace mcswin;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("empty object yields documented defaults") {
    const auto c = parse_config("{}");
    CHECK(c.mc.samples == 10);
    CHECK(c.mc.threshold == 5);
    CHECK(c.data.split.train == 0.7);
    CHECK(c.data.split.val == 0.15);
    CHECK(c.data.split.test == 0.15);
    CHECK(c.model.dropout == 0.5);
    CHECK(c.model.embed_dim == 12);
    CHECK(c.model.input_shape == std::array<int, 3>{32, 32, 32});
    CHECK(c.model.head == HeadActivation::Sigmoid);
    CHECK(c.train.optimizer.lr == 1e-4);
    CHECK(c.train.optimizer.warmup == 100);
    CHECK(c.train.validate_every == 100);
    CHECK(c.pretrain.temperature == 0.1);
    CHECK(c.pretrain.projection_dim == 64);
    CHECK_FALSE(c.eval.spacing.has_value());
  }

  TEST_CASE("dump then parse is the identity") {
    auto c = parse_config(R"({"train": {"iterations": 50, "validate_every": 10, "optimizer": {"lr": 0.003}},
                              "eval": {"spacing": [2, 1, 1]}, "model": {"head": "softmax"},
                              "data": {"phantom": {"shape": [64, 64, 80], "intensity": {"lung": {"mean": -0.5}}}}})");
    const auto again = parse_config(dump_config(c));
    CHECK(dump_config(again) == dump_config(c));
    CHECK(again.train.optimizer.lr == 0.003);
    CHECK(again.eval.spacing == Spacing{2, 1, 1});
    CHECK(again.model.head == HeadActivation::Softmax);
    CHECK(again.data.phantom.shape == Shape3{64, 64, 80});
    CHECK(again.data.phantom.lung.mean == -0.5);
  }

  TEST_CASE("unknown keys are rejected with their path") {
    CHECK(config_error(R"({"bogus": 1})").find("bogus") != std::string::npos);
    CHECK(config_error(R"({"train": {"xyz": 1}})").find("train.xyz") != std::string::npos);
    CHECK(config_error(R"({"train": {"optimizer": {"momentum": 0.9}}})").find("train.optimizer.momentum") !=
          std::string::npos);
    CHECK(config_error(R"({"data": {"phantom": {"intensity": {"air": {"mu": 0}}}}})")
              .find("data.phantom.intensity.air.mu") != std::string::npos);
  }

  TEST_CASE("type errors name the field") {
    CHECK(config_error(R"({"mc": {"samples": "ten"}})").find("mc.samples") != std::string::npos);
    CHECK(config_error(R"({"model": {"window": [4, 4]}})").find("model.window") != std::string::npos);
    CHECK(config_error(R"({"train": {"augment": 1}})").find("train.augment") != std::string::npos);
    CHECK_FALSE(config_error("{not json").empty());
  }

  TEST_CASE("invariants are enforced at load") {
    CHECK_FALSE(config_error(R"({"train": {"iterations": 10, "validate_every": 20}})").empty());
    CHECK_FALSE(config_error(R"({"train": {"optimizer": {"lr": 0}}})").empty());
    CHECK_FALSE(config_error(R"({"mc": {"samples": 4, "threshold": 5}})").empty());
    CHECK_FALSE(config_error(R"({"model": {"embed_dim": 10}})").empty());
    CHECK_FALSE(config_error(R"({"model": {"dropout": 1.0}})").empty());
    CHECK_FALSE(config_error(R"({"data": {"split": {"train": 0.8}}})").empty());
    CHECK_FALSE(config_error(R"({"pretrain": {"batch_size": 1}})").empty());
    CHECK_FALSE(config_error(R"({"pretrain": {"cutout_fraction": 0.7}})").empty());
    CHECK_FALSE(config_error(R"({"data": {"phantom": {"shape": [16, 16, 16]}}})").empty());
    CHECK_FALSE(config_error(R"({"augment": {"p_noise": 2}})").empty());
    CHECK(config_error(R"({"pretrain": {"batch_size": 1, "lambda_contrast": 0}})").empty());
  }

  TEST_CASE("load_config reads files and reports missing ones") {
    testing::TempDir dir("config");
    std::ofstream(dir.file("c.json")) << R"({"mc": {"samples": 3, "threshold": 2}})";
    const auto c = load_config(dir.file("c.json"));
    CHECK(c.mc.samples == 3);
    CHECK_THROWS_AS(load_config(dir.file("absent.json")), Error);
  }

  TEST_CASE("model config json round trip") {
    ModelConfig m;
    m.depths = {2};
    m.heads = {2};
    m.embed_dim = 4;
    m.input_shape = {4, 4, 4};
    CHECK(model_config_from_json(model_config_to_json(m)) == m);
  }
}
