#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "mcswin/augment.hpp"
#include "mcswin/config.hpp"
#include "mcswin/model.hpp"

namespace mcswin {

struct LabeledCase {
  std::string id;
  Volume image;
  LabelMap labels;
};

struct SegLoss {
  torch::Tensor total;  // dice_weight * dice + ce_weight * ce
  torch::Tensor dice;   // 1 - mean over 6 channels of soft Dice (eps 1e-5)
  torch::Tensor ce;     // mean voxel-wise softmax cross-entropy
};

inline constexpr double kSoftDiceEps = 1e-5;

/// logits (B, 6, D, H, W), labels (B, D, H, W) int64. Soft Dice sums over the
/// batch and all voxels per channel, using softmax probabilities.
/// NumericError on non-finite logits.
SegLoss seg_loss(const torch::Tensor& logits, const torch::Tensor& labels, double dice_weight, double ce_weight);

/// Learning rate at 0-based iteration `it`: linear warmup then cosine decay.
double scheduled_lr(const OptimizerConfig& o, int it, int total);

struct ValidationRecord {
  int iteration = 0;
  double mean_dice = 0.0;  // mean foreground Dice over validation cases
  std::array<double, 5> class_dice{};
};

struct TrainLog {
  std::vector<double> loss;  // per iteration
  std::vector<double> lr;
  std::vector<ValidationRecord> validations;
  int best_iteration = 0;
  double best_dice = -1.0;

  /// iteration,loss,lr
  std::string loss_csv() const;
  /// iteration,mean_dice,lung_r,lung_l,spinal_cord,esophagus,gtv,best
  std::string validation_csv() const;
};

struct FinetuneResult {
  ModelState best;
  TrainLog log;
};

/// Model before the first step: random init from train.seed, then encoder
/// weights copied from train.init when it names a checkpoint.
ModelState initialize_for_finetune(const ModelConfig& model, const TrainConfig& train);

/// Mean over foreground classes of Dice for each case, averaged over cases,
/// using dropout-free sliding-window inference.
ValidationRecord validate_model(const ModelState& state, const std::vector<LabeledCase>& cases, double overlap);

/// Patch-based supervised training with validation every validate_every
/// iterations; returns the parameters with the best validation Dice (ties keep
/// the earliest). Deterministic given train.seed.
FinetuneResult finetune(const std::vector<LabeledCase>& train_set, const std::vector<LabeledCase>& val_set,
                        const ModelConfig& model, const TrainConfig& train, const AugmentConfig& augment,
                        std::ostream* progress = nullptr);

}  // namespace mcswin
