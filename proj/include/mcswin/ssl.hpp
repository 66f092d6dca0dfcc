#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mcswin/config.hpp"
#include "mcswin/model.hpp"
#include "mcswin/rng.hpp"

namespace mcswin {

/// Two augmented views per sampled sub-volume. View 2i and 2i+1 come from
/// sub-volume i.
struct PretextBatch {
  torch::Tensor originals;  // (B, 1, D, H, W) sub-volumes as cropped
  torch::Tensor targets;    // (2B, 1, D, H, W) rotated views before cutout
  torch::Tensor views;      // (2B, 1, D, H, W) rotated views with cutout fill
  torch::Tensor masks;      // (2B, 1, D, H, W) bool, true inside cutout
  torch::Tensor rotation;   // (2B) int64 quarter turns in 0..3
  std::vector<int> axes;        // rotation axis per view
  std::vector<int> provenance;  // sub-volume index per view

  std::int64_t views_count() const { return views.size(0); }
};

/// Boolean grid covered by random rectangular blocks (sides between extent/16
/// and extent/4, at least 1) until at least `fraction` of voxels are covered.
std::vector<std::uint8_t> cutout_mask(Shape3 shape, double fraction, Rng& rng);

/// Draws config.batch_size sub-volumes of `sub_shape` from random volumes and
/// positions, rotates each view by k*90 degrees about a random allowed axis
/// (lossless) and applies cutout. ValidationError when the sub-volume exceeds
/// a source volume or no allowed axis has a square rotation plane.
PretextBatch make_pretext_batch(const std::vector<Volume>& volumes, Shape3 sub_shape, const PretrainConfig& config,
                                std::uint64_t seed);

/// Rotation classifier, projection and reconstruction heads on the encoder
/// bottleneck. Discarded after pre-training.
struct PretrainHeadsImpl : torch::nn::Module {
  PretrainHeadsImpl(const ModelConfig& model, int projection_dim);

  torch::Tensor rotation_logits(const torch::Tensor& bottleneck);  // (N, 4)
  torch::Tensor projection(const torch::Tensor& bottleneck);       // (N, projection_dim)
  torch::Tensor reconstruct(const torch::Tensor& bottleneck);      // (N, 1, D, H, W)

  torch::nn::Linear rot{nullptr}, proj1{nullptr}, proj2{nullptr};
  std::vector<torch::nn::ConvTranspose3d> ups;
  std::vector<ConvBlock> blocks;
  torch::nn::Conv3d out{nullptr};
};
TORCH_MODULE(PretrainHeads);

/// Cross-entropy over 4 rotation classes.
torch::Tensor rotation_loss(const torch::Tensor& logits, const torch::Tensor& targets);
/// Mean |recon - target| over masked voxels (0 when the mask is empty).
torch::Tensor inpaint_loss(const torch::Tensor& recon, const torch::Tensor& target, const torch::Tensor& mask);
/// InfoNCE over L2-normalised embeddings (2B, d); the positive of row i is its
/// sibling view (i ^ 1), every other row is a negative. ValidationError for
/// fewer than 4 rows.
torch::Tensor info_nce(const torch::Tensor& embeddings, double temperature);

struct PretextLosses {
  torch::Tensor rot, inpaint, contrast, total;
};

PretextLosses pretext_losses(const PretextBatch& batch, SwinEncoder& encoder, PretrainHeads& heads,
                             const PretrainConfig& config, const DropoutContext& ctx);

struct PretextLossRow {
  int iteration = 0;
  double rot = 0, inpaint = 0, contrast = 0, total = 0;
};

struct PretrainResult {
  ModelState state;  // metadata "pretrained" = "true"
  PretrainHeads heads{nullptr};
  std::vector<PretextLossRow> curve;

  /// iteration,L_rot,L_inpaint,L_contrast,L_total
  std::string curve_csv() const;
};

/// Joint optimisation of the three pretext losses. On a non-finite loss the
/// last good state is written to `last_good_path` (when non-empty) and
/// NumericError is thrown.
PretrainResult pretrain(const std::vector<Volume>& volumes, const ModelConfig& model, const PretrainConfig& config,
                        std::ostream* progress = nullptr, const std::string& last_good_path = "");

/// Fraction of views whose predicted quarter-turn matches the target.
double rotation_accuracy(const ModelState& state, PretrainHeads& heads, const PretextBatch& batch);

}  // namespace mcswin
