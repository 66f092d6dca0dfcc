#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mcswin/model_config.hpp"
#include "mcswin/volume.hpp"

namespace mcswin {

enum class DropoutMode { Off, On };
enum class AttentionMode { Window, ShiftedWindow };

/// Dropout state threaded through a forward pass. Masks are drawn from
/// `generator`, so a pass is reproducible from the generator's seed.
struct DropoutContext {
  DropoutMode mode = DropoutMode::Off;
  double rate = 0.0;
  torch::Generator* generator = nullptr;

  bool active() const { return mode == DropoutMode::On && rate > 0.0; }
};

torch::Generator make_generator(std::uint64_t seed);

/// Inverted dropout with Bernoulli(1 - rate) keep masks from ctx.generator.
torch::Tensor apply_dropout(const torch::Tensor& x, const DropoutContext& ctx);

// ---------------------------------------------------------------------------
// Token grids and windows

/// Embedded tokens of one volume: `data` is (d*h*w, c) with row
/// token_index(z, y, x) = (z*h + y)*w + x.
struct TokenGrid {
  std::int64_t d = 0, h = 0, w = 0;
  torch::Tensor data;

  std::int64_t channels() const { return data.size(1); }
  std::int64_t token_index(std::int64_t z, std::int64_t y, std::int64_t x) const { return (z * h + y) * w + x; }
  std::array<std::int64_t, 3> token_location(std::int64_t index) const {
    return {index / (h * w), (index / w) % h, index % w};
  }
  /// (1, d, h, w, c) channels-last view.
  torch::Tensor as_grid() const { return data.view({1, d, h, w, data.size(1)}); }
};

/// Windows of a channels-last grid (B, D, H, W, C), zero-padded up to a
/// multiple of the window on every axis.
struct WindowPartition {
  torch::Tensor windows;                 // (B * nW, wd*wh*ww, C)
  torch::Tensor pad_mask;                // (nW, wd*wh*ww) bool, true on padding
  std::array<std::int64_t, 3> window{};  // effective window
  std::array<std::int64_t, 3> padded{};  // padded grid extent
  std::array<std::int64_t, 3> original{};
  std::int64_t batch = 0;

  std::int64_t count() const {
    return (padded[0] / window[0]) * (padded[1] / window[1]) * (padded[2] / window[2]);
  }
};

WindowPartition window_partition(const torch::Tensor& grid, const std::array<std::int64_t, 3>& window);
/// Inverse of window_partition on the unpadded region: (B, D, H, W, C).
torch::Tensor window_reverse(const WindowPartition& part, const torch::Tensor& windows);

/// Window and shift actually used on a grid: axes not larger than the window
/// use the whole extent and no shift.
struct WindowPlan {
  std::array<std::int64_t, 3> window{};
  std::array<std::int64_t, 3> shift{};
};
WindowPlan plan_windows(const std::array<std::int64_t, 3>& grid, const std::array<int, 3>& window);

/// Additive attention mask (nW, N, N) for a shifted, padded window layout:
/// 0 where query and key come from the same pre-shift region and the key is
/// real, a large negative value otherwise. Undefined tensor when nothing needs
/// masking.
torch::Tensor attention_mask(const std::array<std::int64_t, 3>& grid, const WindowPlan& plan);

// ---------------------------------------------------------------------------
// Network

struct WindowAttentionImpl : torch::nn::Module {
  WindowAttentionImpl(std::int64_t dim, std::int64_t heads, std::array<int, 3> max_window);

  /// x: (B*nW, N, C). mask: optional (nW, N, N) additive. When `probs` is set it
  /// receives the softmax weights (B*nW, heads, N, N).
  torch::Tensor forward(const torch::Tensor& x, const std::array<std::int64_t, 3>& window,
                        const torch::Tensor& mask, torch::Tensor* probs = nullptr);

  std::int64_t dim, heads;
  std::array<int, 3> max_window;
  torch::nn::Linear qkv{nullptr}, proj{nullptr};
  torch::Tensor relative_position_bias_table;

 private:
  torch::Tensor relative_index(const std::array<std::int64_t, 3>& window);
  std::map<std::array<std::int64_t, 3>, torch::Tensor> index_cache_;
};
TORCH_MODULE(WindowAttention);

/// Pre-norm Swin block: x + Drop(MSA(LN(x))), then + Drop(MLP(LN(x))).
struct SwinBlockImpl : torch::nn::Module {
  SwinBlockImpl(std::int64_t dim, std::int64_t heads, std::array<int, 3> window, double mlp_ratio);

  /// x: (B, D, H, W, C). `shift_override` replaces the planned shift (tests).
  torch::Tensor forward(const torch::Tensor& x, AttentionMode mode, const DropoutContext& ctx,
                        torch::Tensor* probs = nullptr,
                        std::optional<std::array<std::int64_t, 3>> shift_override = std::nullopt);

  std::array<int, 3> window;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  WindowAttention attn{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(SwinBlock);

/// Concatenates 2x2x2 neighbours, LayerNorm(8C), Linear(8C -> 2C).
struct PatchMergingImpl : torch::nn::Module {
  explicit PatchMergingImpl(std::int64_t dim);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear reduction{nullptr};
};
TORCH_MODULE(PatchMerging);

struct SwinEncoderImpl : torch::nn::Module {
  explicit SwinEncoderImpl(const ModelConfig& config);

  /// Linear patch embedding: (B, in, D, H, W) -> channels-last tokens.
  torch::Tensor embed(const torch::Tensor& x);
  /// Per-stage features, channels-first (B, C_s, ...), finest first. Blocks
  /// alternate W-MSA / SW-MSA; patch merging sits between stages.
  std::vector<torch::Tensor> forward(const torch::Tensor& x, const DropoutContext& ctx);

  ModelConfig config;
  torch::nn::Conv3d patch_embed{nullptr};
  std::vector<std::vector<SwinBlock>> blocks;
  std::vector<PatchMerging> merges;
};
TORCH_MODULE(SwinEncoder);

/// 3x3x3 convolution, instance norm, leaky ReLU.
struct ConvBlockImpl : torch::nn::Module {
  ConvBlockImpl(std::int64_t in, std::int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv3d conv{nullptr};
  torch::nn::InstanceNorm3d norm{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Skip-connected CNN decoder: transposed-conv upsampling and two conv blocks
/// per scale, ending at input resolution.
struct DecoderImpl : torch::nn::Module {
  explicit DecoderImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& image, const std::vector<torch::Tensor>& features);

  ModelConfig config;
  std::vector<ConvBlock> stem;
  std::vector<torch::nn::ConvTranspose3d> ups;
  std::vector<std::array<ConvBlock, 2>> fuse;
};
TORCH_MODULE(Decoder);

struct SwinUNetImpl : torch::nn::Module {
  explicit SwinUNetImpl(const ModelConfig& config);
  /// (B, in, D, H, W) -> (B, 6, D, H, W) logits.
  torch::Tensor forward(const torch::Tensor& x, const DropoutContext& ctx);

  ModelConfig config;
  SwinEncoder encoder{nullptr};
  Decoder decoder{nullptr};
  torch::nn::Conv3d head{nullptr};
};
TORCH_MODULE(SwinUNet);

// ---------------------------------------------------------------------------
// Model state

/// Architecture, parameters and bookkeeping: the checkpointable unit.
struct ModelState {
  ModelConfig config;
  SwinUNet net{nullptr};
  std::map<std::string, std::string> metadata;

  std::int64_t parameter_count() const;
};

/// Linear weights and position-bias tables truncated-normal(0, 0.02) clipped at
/// two standard deviations, convolution kernels uniform(+-1/sqrt(fan_in)),
/// zero biases, unit LayerNorm scales. Deterministic in (config, seed).
ModelState init_model(const ModelConfig& config, std::uint64_t seed);

/// Independent copy of parameters and metadata.
ModelState clone_state(const ModelState& state);

/// Copies every parameter whose name starts with "encoder." from `src`.
/// CheckpointMismatchError when the encoder layouts differ.
void copy_encoder(const ModelState& src, ModelState& dst);

/// Linear patch partition of a single-channel patch (D, H, W) into tokens.
TokenGrid patch_partition(const ModelState& state, const Volume& patch);

/// Logits (6, D, H, W) for one volume. Throws NumericError on non-finite output.
torch::Tensor forward(const ModelState& state, const Volume& volume, DropoutMode mode,
                      torch::Generator* generator);
/// Batched variant on (B, 1, D, H, W).
torch::Tensor forward(const ModelState& state, const torch::Tensor& input, DropoutMode mode,
                      torch::Generator* generator);

/// Per-channel sigmoid or softmax over channels (dim 1 for batched, 0 otherwise).
torch::Tensor head_probabilities(const torch::Tensor& logits, HeadActivation head, std::int64_t channel_dim);

torch::Tensor to_tensor(const Volume& v);         // (1, 1, D, H, W) float
torch::Tensor to_tensor(const LabelMap& m);       // (D, H, W) int64
LabelMap argmax_labels(const torch::Tensor& scores, const Spacing& spacing);  // scores (6, D, H, W)

}  // namespace mcswin
