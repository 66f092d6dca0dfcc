#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mcswin/augment.hpp"
#include "mcswin/model_config.hpp"
#include "mcswin/phantom.hpp"
#include "mcswin/split.hpp"

namespace mcswin {

struct OptimizerConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup = 100;  // linear warmup iterations, then cosine decay to 0
};

/// Supervised fine-tuning. Reference protocol: 40000 iterations, validation
/// every 500.
struct TrainConfig {
  int iterations = 2000;
  int validate_every = 100;
  int batch_size = 1;
  OptimizerConfig optimizer;
  double fg_bias = 0.5;
  double dice_weight = 1.0;
  double ce_weight = 1.0;
  double val_overlap = 0.5;
  bool augment = true;
  std::uint64_t seed = 0;
  /// "random" or a checkpoint path holding pre-trained encoder weights.
  std::string init = "random";
};

struct PretrainConfig {
  int iterations = 300;
  int batch_size = 2;  // sub-volumes per step; each contributes two views
  OptimizerConfig optimizer{5e-4, 1e-5, 0.9, 0.999, 1e-8, 20};
  double temperature = 0.1;
  double lambda_rot = 1.0;
  double lambda_inpaint = 1.0;
  double lambda_contrast = 1.0;
  double cutout_fraction = 0.25;
  double cutout_fill = 0.0;
  int projection_dim = 64;
  std::vector<int> rotation_axes{0, 1, 2};
  bool dropout = true;
  std::uint64_t seed = 0;
};

/// Monte Carlo dropout inference. T = 10 passes, uncertain where fewer than
/// k = 5 agree.
struct McConfig {
  int samples = 10;
  int threshold = 5;
  double overlap = 0.5;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  std::optional<Spacing> spacing;
};

struct DataConfig {
  PhantomSpec phantom;
  SplitRatios split;
  std::uint64_t seed = 0;
};

struct GlobalConfig {
  DataConfig data;
  ModelConfig model;
  AugmentConfig augment = default_training_augment();
  PretrainConfig pretrain;
  TrainConfig train;
  McConfig mc;
  EvalConfig eval;
};

void validate(const TrainConfig& c);
void validate(const PretrainConfig& c);
void validate(const McConfig& c);
void validate(const GlobalConfig& c);

/// Strict parse: unknown keys and type mismatches raise ConfigError naming the
/// offending path (e.g. "train.lr"); invariant violations raise ConfigError too.
GlobalConfig parse_config(const std::string& json_text);
GlobalConfig load_config(const std::string& path);
std::string dump_config(const GlobalConfig& c);

/// Canonical JSON for the model section alone (stored in checkpoints).
std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace mcswin
