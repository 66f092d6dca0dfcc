#include "mcswin/model.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "mcswin/error.hpp"

namespace mcswin {
namespace F = torch::nn::functional;

namespace {

constexpr double kMaskedLogit = -1e9;

std::int64_t ceil_to(std::int64_t n, std::int64_t m) { return (n + m - 1) / m * m; }

// (B, Dp, Hp, Wp, C) -> (B*nW, wd*wh*ww, C); extents must be window multiples.
torch::Tensor to_windows(const torch::Tensor& t, const std::array<std::int64_t, 3>& w) {
  const auto b = t.size(0), d = t.size(1), h = t.size(2), wd = t.size(3), c = t.size(4);
  return t.view({b, d / w[0], w[0], h / w[1], w[1], wd / w[2], w[2], c})
      .permute({0, 1, 3, 5, 2, 4, 6, 7})
      .reshape({-1, w[0] * w[1] * w[2], c});
}

torch::Tensor from_windows(const torch::Tensor& win, const std::array<std::int64_t, 3>& w, std::int64_t b,
                           const std::array<std::int64_t, 3>& padded) {
  const auto c = win.size(-1);
  return win.view({b, padded[0] / w[0], padded[1] / w[1], padded[2] / w[2], w[0], w[1], w[2], c})
      .permute({0, 1, 4, 2, 5, 3, 6, 7})
      .reshape({b, padded[0], padded[1], padded[2], c});
}

std::array<std::int64_t, 3> padded_extent(const std::array<std::int64_t, 3>& grid,
                                          const std::array<std::int64_t, 3>& w) {
  return {ceil_to(grid[0], w[0]), ceil_to(grid[1], w[1]), ceil_to(grid[2], w[2])};
}

torch::Tensor pad_grid(const torch::Tensor& t, const std::array<std::int64_t, 3>& grid,
                       const std::array<std::int64_t, 3>& padded) {
  if (padded == grid) return t;
  return torch::constant_pad_nd(
      t, {0, 0, 0, padded[2] - grid[2], 0, padded[1] - grid[1], 0, padded[0] - grid[0]}, 0.0);
}

bool any_shift(const std::array<std::int64_t, 3>& s) { return s[0] != 0 || s[1] != 0 || s[2] != 0; }

// Truncated normal on [-2 std, 2 std] via inverse-CDF sampling.
void trunc_normal_(torch::Tensor t, double stddev, torch::Generator& gen) {
  const double lo = std::erf(-2.0 / std::sqrt(2.0));
  const double hi = std::erf(2.0 / std::sqrt(2.0));
  t.uniform_(lo, hi, gen);
  t.erfinv_();
  t.mul_(stddev * std::sqrt(2.0));
  t.clamp_(-2.0 * stddev, 2.0 * stddev);
}

}  // namespace

torch::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor apply_dropout(const torch::Tensor& x, const DropoutContext& ctx) {
  if (!ctx.active()) return x;
  if (ctx.generator == nullptr) throw ValidationError("dropout is on but no generator was supplied");
  auto keep = torch::empty_like(x).bernoulli_(1.0 - ctx.rate, *ctx.generator);
  return x * keep / (1.0 - ctx.rate);
}

WindowPartition window_partition(const torch::Tensor& grid, const std::array<std::int64_t, 3>& window) {
  if (grid.dim() != 5) throw ValidationError("window_partition expects (B, D, H, W, C)");
  for (auto w : window)
    if (w < 1) throw ValidationError("window extents must be >= 1");
  WindowPartition p;
  p.batch = grid.size(0);
  p.window = window;
  p.original = {grid.size(1), grid.size(2), grid.size(3)};
  p.padded = padded_extent(p.original, window);
  p.windows = to_windows(pad_grid(grid, p.original, p.padded), window);
  auto pad = torch::zeros({1, p.padded[0], p.padded[1], p.padded[2], 1}, torch::kBool);
  using torch::indexing::Slice;
  pad.index_put_({Slice(), Slice(p.original[0], torch::indexing::None)}, true);
  pad.index_put_({Slice(), Slice(), Slice(p.original[1], torch::indexing::None)}, true);
  pad.index_put_({Slice(), Slice(), Slice(), Slice(p.original[2], torch::indexing::None)}, true);
  p.pad_mask = to_windows(pad, window).squeeze(-1);
  return p;
}

torch::Tensor window_reverse(const WindowPartition& part, const torch::Tensor& windows) {
  using torch::indexing::Slice;
  auto full = from_windows(windows, part.window, part.batch, part.padded);
  return full.index({Slice(), Slice(0, part.original[0]), Slice(0, part.original[1]), Slice(0, part.original[2])});
}

WindowPlan plan_windows(const std::array<std::int64_t, 3>& grid, const std::array<int, 3>& window) {
  WindowPlan p;
  for (int a = 0; a < 3; ++a) {
    if (grid[a] <= window[a]) {
      p.window[a] = grid[a];
      p.shift[a] = 0;
    } else {
      p.window[a] = window[a];
      p.shift[a] = window[a] / 2;
    }
  }
  return p;
}

torch::Tensor attention_mask(const std::array<std::int64_t, 3>& grid, const WindowPlan& plan) {
  const auto padded = padded_extent(grid, plan.window);
  const bool has_pad = padded != grid;
  if (!has_pad && !any_shift(plan.shift)) return {};

  // Region ids in the shifted frame and padding flags of the original voxel.
  auto region = torch::zeros({1, padded[0], padded[1], padded[2], 1}, torch::kLong);
  auto pad = torch::zeros({1, padded[0], padded[1], padded[2], 1}, torch::kBool);
  auto reg = region.accessor<std::int64_t, 5>();
  auto pd = pad.accessor<bool, 5>();
  auto axis_region = [&](int a, std::int64_t q) -> std::int64_t {
    if (plan.shift[a] == 0) return 0;
    if (q < padded[a] - plan.window[a]) return 0;
    if (q < padded[a] - plan.shift[a]) return 1;
    return 2;
  };
  for (std::int64_t z = 0; z < padded[0]; ++z)
    for (std::int64_t y = 0; y < padded[1]; ++y)
      for (std::int64_t x = 0; x < padded[2]; ++x) {
        reg[0][z][y][x][0] = axis_region(0, z) * 9 + axis_region(1, y) * 3 + axis_region(2, x);
        const auto oz = (z + plan.shift[0]) % padded[0];
        const auto oy = (y + plan.shift[1]) % padded[1];
        const auto ox = (x + plan.shift[2]) % padded[2];
        pd[0][z][y][x][0] = oz >= grid[0] || oy >= grid[1] || ox >= grid[2];
      }
  auto ids = to_windows(region, plan.window).squeeze(-1);     // (nW, N)
  auto key_pad = to_windows(pad, plan.window).squeeze(-1);    // (nW, N)
  auto blocked = ids.unsqueeze(2).ne(ids.unsqueeze(1)).logical_or(key_pad.unsqueeze(1));
  return torch::zeros(blocked.sizes(), torch::kFloat).masked_fill(blocked, kMaskedLogit);
}

// ---------------------------------------------------------------------------

WindowAttentionImpl::WindowAttentionImpl(std::int64_t dim_, std::int64_t heads_, std::array<int, 3> max_window_)
    : dim(dim_), heads(heads_), max_window(max_window_) {
  qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
  const auto entries = std::int64_t(2 * max_window[0] - 1) * (2 * max_window[1] - 1) * (2 * max_window[2] - 1);
  relative_position_bias_table = register_parameter("relative_position_bias_table", torch::zeros({entries, heads}));
}

torch::Tensor WindowAttentionImpl::relative_index(const std::array<std::int64_t, 3>& w) {
  const auto n = w[0] * w[1] * w[2];
  auto idx = torch::empty({n * n}, torch::kLong);
  auto a = idx.accessor<std::int64_t, 1>();
  const std::int64_t sy = 2 * max_window[1] - 1, sx = 2 * max_window[2] - 1;
  std::int64_t k = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t iz = i / (w[1] * w[2]), iy = (i / w[2]) % w[1], ix = i % w[2];
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int64_t jz = j / (w[1] * w[2]), jy = (j / w[2]) % w[1], jx = j % w[2];
      a[k++] = (iz - jz + max_window[0] - 1) * sy * sx + (iy - jy + max_window[1] - 1) * sx +
               (ix - jx + max_window[2] - 1);
    }
  }
  return idx;
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& x, const std::array<std::int64_t, 3>& window,
                                           const torch::Tensor& mask, torch::Tensor* probs) {
  const auto b = x.size(0), n = x.size(1), c = x.size(2);
  if (c != dim || dim % heads != 0) throw ValidationError("window attention channel/head mismatch");
  if (n != window[0] * window[1] * window[2]) throw ValidationError("window attention token count mismatch");
  for (int a = 0; a < 3; ++a)
    if (window[a] > max_window[a]) throw ValidationError("window exceeds the relative position table");
  const auto head_dim = dim / heads;
  auto qkv_t = qkv(x).reshape({b, n, 3, heads, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv_t[0] * (1.0 / std::sqrt(double(head_dim)));
  auto k = qkv_t[1];
  auto v = qkv_t[2];
  auto attn = q.matmul(k.transpose(-2, -1));  // (b, heads, n, n)
  auto bias = relative_position_bias_table.index_select(0, relative_index(window)).view({n, n, heads}).permute({2, 0, 1});
  attn = attn + bias.unsqueeze(0);
  if (mask.defined()) {
    const auto nw = mask.size(0);
    attn = attn.view({b / nw, nw, heads, n, n}) + mask.to(attn.dtype()).unsqueeze(1).unsqueeze(0);
    attn = attn.view({b, heads, n, n});
  }
  attn = torch::softmax(attn, -1);
  if (probs) *probs = attn;
  auto out = attn.matmul(v).transpose(1, 2).reshape({b, n, c});
  return proj(out);
}

SwinBlockImpl::SwinBlockImpl(std::int64_t dim, std::int64_t heads, std::array<int, 3> window_, double mlp_ratio)
    : window(window_) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", WindowAttention(dim, heads, window));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  const auto hidden = static_cast<std::int64_t>(dim * mlp_ratio);
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor SwinBlockImpl::forward(const torch::Tensor& x, AttentionMode mode, const DropoutContext& ctx,
                                     torch::Tensor* probs,
                                     std::optional<std::array<std::int64_t, 3>> shift_override) {
  if (x.dim() != 5) throw ValidationError("Swin block expects (B, D, H, W, C)");
  const std::array<std::int64_t, 3> grid{x.size(1), x.size(2), x.size(3)};
  WindowPlan plan = plan_windows(grid, window);
  if (mode == AttentionMode::Window) plan.shift = {0, 0, 0};
  if (shift_override) plan.shift = *shift_override;
  const auto padded = padded_extent(grid, plan.window);

  auto h = pad_grid(norm1(x), grid, padded);
  if (any_shift(plan.shift)) h = torch::roll(h, {-plan.shift[0], -plan.shift[1], -plan.shift[2]}, {1, 2, 3});
  auto windows = attn(to_windows(h, plan.window), plan.window, attention_mask(grid, plan), probs);
  h = from_windows(windows, plan.window, x.size(0), padded);
  if (any_shift(plan.shift)) h = torch::roll(h, {plan.shift[0], plan.shift[1], plan.shift[2]}, {1, 2, 3});
  if (padded != grid) {
    using torch::indexing::Slice;
    h = h.index({Slice(), Slice(0, grid[0]), Slice(0, grid[1]), Slice(0, grid[2])});
  }
  auto out = x + apply_dropout(h, ctx);
  return out + apply_dropout(fc2(F::gelu(fc1(norm2(out)))), ctx);
}

PatchMergingImpl::PatchMergingImpl(std::int64_t dim) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({8 * dim})));
  reduction = register_module("reduction", torch::nn::Linear(torch::nn::LinearOptions(8 * dim, 2 * dim).bias(false)));
}

torch::Tensor PatchMergingImpl::forward(const torch::Tensor& x) {
  using torch::indexing::Slice;
  std::vector<torch::Tensor> parts;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        parts.push_back(x.index({Slice(), Slice(dz, torch::indexing::None, 2), Slice(dy, torch::indexing::None, 2),
                                 Slice(dx, torch::indexing::None, 2)}));
  return reduction(norm(torch::cat(parts, -1)));
}

SwinEncoderImpl::SwinEncoderImpl(const ModelConfig& c) : config(c) {
  validate(c);
  patch_embed = register_module(
      "patch_embed", torch::nn::Conv3d(torch::nn::Conv3dOptions(c.in_channels, c.embed_dim,
                                                                {c.patch_size[0], c.patch_size[1], c.patch_size[2]})
                                           .stride({c.patch_size[0], c.patch_size[1], c.patch_size[2]})));
  auto stages = register_module("stages", torch::nn::ModuleList());
  auto merge_list = register_module("merges", torch::nn::ModuleList());
  for (int s = 0; s < c.stages(); ++s) {
    torch::nn::ModuleList stage;
    blocks.emplace_back();
    for (int j = 0; j < c.depths[s]; ++j) {
      SwinBlock blk(c.stage_dim(s), c.heads[s], c.window, c.mlp_ratio);
      stage->push_back(blk);
      blocks.back().push_back(blk);
    }
    stages->push_back(stage);
    if (s + 1 < c.stages()) {
      PatchMerging m(c.stage_dim(s));
      merge_list->push_back(m);
      merges.push_back(m);
    }
  }
}

torch::Tensor SwinEncoderImpl::embed(const torch::Tensor& x) { return patch_embed(x).permute({0, 2, 3, 4, 1}); }

std::vector<torch::Tensor> SwinEncoderImpl::forward(const torch::Tensor& x, const DropoutContext& ctx) {
  auto h = embed(x);
  std::vector<torch::Tensor> features;
  for (int s = 0; s < config.stages(); ++s) {
    for (std::size_t j = 0; j < blocks[s].size(); ++j)
      h = blocks[s][j](h, j % 2 == 0 ? AttentionMode::Window : AttentionMode::ShiftedWindow, ctx);
    features.push_back(F::layer_norm(h, F::LayerNormFuncOptions({h.size(-1)})).permute({0, 4, 1, 2, 3}));
    if (s + 1 < config.stages()) h = merges[s](h);
  }
  return features;
}

ConvBlockImpl::ConvBlockImpl(std::int64_t in, std::int64_t out) {
  conv = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).padding(1).bias(false)));
  norm = register_module("norm", torch::nn::InstanceNorm3d(torch::nn::InstanceNorm3dOptions(out)));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  return F::leaky_relu(norm(conv(x)), F::LeakyReLUFuncOptions().negative_slope(0.01));
}

DecoderImpl::DecoderImpl(const ModelConfig& c) : config(c) {
  auto stem_list = register_module("stem", torch::nn::ModuleList());
  auto up_list = register_module("ups", torch::nn::ModuleList());
  auto fuse_list = register_module("fuse", torch::nn::ModuleList());
  stem = {ConvBlock(c.in_channels, c.embed_dim), ConvBlock(c.embed_dim, c.embed_dim)};
  for (auto& b : stem) stem_list->push_back(b);
  auto add_scale = [&](torch::nn::ConvTranspose3d up, std::int64_t width) {
    up_list->push_back(up);
    ups.push_back(up);
    std::array<ConvBlock, 2> f{ConvBlock(2 * width, width), ConvBlock(width, width)};
    torch::nn::ModuleList pair;
    pair->push_back(f[0]);
    pair->push_back(f[1]);
    fuse_list->push_back(pair);
    fuse.push_back(f);
  };
  for (int s = c.stages() - 2; s >= 0; --s)
    add_scale(torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(c.stage_dim(s + 1), c.stage_dim(s), 2).stride(2)),
              c.stage_dim(s));
  const std::vector<std::int64_t> p{c.patch_size[0], c.patch_size[1], c.patch_size[2]};
  add_scale(torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(c.embed_dim, c.embed_dim, p).stride(p)),
            c.embed_dim);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& image, const std::vector<torch::Tensor>& features) {
  auto skip0 = stem[1](stem[0](image));
  auto h = features.back();
  const int n_inner = config.stages() - 1;
  for (int k = 0; k < n_inner; ++k) {
    const int s = config.stages() - 2 - k;
    h = torch::cat({ups[k](h), features[s]}, 1);
    h = fuse[k][1](fuse[k][0](h));
  }
  h = torch::cat({ups[n_inner](h), skip0}, 1);
  return fuse[n_inner][1](fuse[n_inner][0](h));
}

SwinUNetImpl::SwinUNetImpl(const ModelConfig& c) : config(c) {
  encoder = register_module("encoder", SwinEncoder(c));
  decoder = register_module("decoder", Decoder(c));
  head = register_module("head", torch::nn::Conv3d(torch::nn::Conv3dOptions(c.embed_dim, c.num_classes, 1)));
}

torch::Tensor SwinUNetImpl::forward(const torch::Tensor& x, const DropoutContext& ctx) {
  return head(decoder(x, encoder(x, ctx)));
}

// ---------------------------------------------------------------------------

std::int64_t ModelState::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : net->parameters()) n += p.numel();
  return n;
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  ModelState state;
  state.config = config;
  state.net = SwinUNet(config);
  auto gen = make_generator(seed);
  torch::NoGradGuard no_grad;
  for (auto& item : state.net->named_parameters()) {
    const auto& name = item.key();
    auto& p = item.value();
    const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    const bool is_norm_scale = p.dim() == 1 && name.find("norm") != std::string::npos && !is_bias;
    if (is_bias) {
      p.zero_();
    } else if (is_norm_scale) {
      p.fill_(1.0);
    } else if (p.dim() == 5) {
      // Convolution kernels: uniform with bound 1/sqrt(fan_in), fan_in = size(1) * kernel volume.
      const double bound = 1.0 / std::sqrt(double(p.size(1) * p.size(2) * p.size(3) * p.size(4)));
      p.uniform_(-bound, bound, gen);
    } else {
      trunc_normal_(p, 0.02, gen);
    }
  }
  state.metadata["pretrained"] = "false";
  return state;
}

ModelState clone_state(const ModelState& state) {
  ModelState out;
  out.config = state.config;
  out.net = SwinUNet(state.config);
  out.metadata = state.metadata;
  out.net->to(state.net->parameters().front().scalar_type());
  torch::NoGradGuard no_grad;
  auto dst = out.net->named_parameters();
  for (const auto& item : state.net->named_parameters()) dst[item.key()].copy_(item.value());
  return out;
}

void copy_encoder(const ModelState& src, ModelState& dst) {
  if (!encoder_compatible(src.config, dst.config))
    throw CheckpointMismatchError("pre-trained encoder configuration differs from the model configuration");
  torch::NoGradGuard no_grad;
  auto from = src.net->named_parameters();
  std::size_t copied = 0;
  for (auto& item : dst.net->named_parameters()) {
    if (item.key().rfind("encoder.", 0) != 0) continue;
    const auto* p = from.find(item.key());
    if (p == nullptr) throw CheckpointMismatchError("pre-trained state lacks parameter " + item.key());
    if (!p->sizes().equals(item.value().sizes()))
      throw CheckpointMismatchError("pre-trained parameter " + item.key() + " has a different shape");
    item.value().copy_(*p);
    ++copied;
  }
  if (copied == 0) throw CheckpointMismatchError("no encoder parameters to copy");
}

TokenGrid patch_partition(const ModelState& state, const Volume& patch) {
  validate(patch);
  const auto& c = state.config;
  const std::int64_t ext[3] = {patch.shape.d, patch.shape.h, patch.shape.w};
  for (int a = 0; a < 3; ++a)
    if (ext[a] % c.patch_size[a] != 0)
      throw ValidationError("patch extent " + std::to_string(ext[a]) + " not divisible by patch size " +
                            std::to_string(c.patch_size[a]));
  torch::NoGradGuard no_grad;
  SwinUNet net = state.net;
  auto tokens = net->encoder->embed(to_tensor(patch).to(state.net->parameters().front().dtype()));
  TokenGrid g;
  g.d = tokens.size(1);
  g.h = tokens.size(2);
  g.w = tokens.size(3);
  g.data = tokens.reshape({g.d * g.h * g.w, tokens.size(4)}).contiguous();
  return g;
}

torch::Tensor forward(const ModelState& state, const torch::Tensor& input, DropoutMode mode,
                      torch::Generator* generator) {
  if (input.dim() != 5 || input.size(1) != state.config.in_channels)
    throw ValidationError("forward expects (B, in_channels, D, H, W)");
  validate_input_shape(state.config, {input.size(2), input.size(3), input.size(4)});
  DropoutContext ctx{mode, state.config.dropout, generator};
  SwinUNet net = state.net;
  auto logits = net->forward(input, ctx);
  if (!torch::isfinite(logits).all().item<bool>()) throw NumericError("non-finite activations in forward pass");
  return logits;
}

torch::Tensor forward(const ModelState& state, const Volume& volume, DropoutMode mode, torch::Generator* generator) {
  validate(volume);
  return forward(state, to_tensor(volume).to(state.net->parameters().front().dtype()), mode, generator).squeeze(0);
}

torch::Tensor head_probabilities(const torch::Tensor& logits, HeadActivation head, std::int64_t channel_dim) {
  return head == HeadActivation::Sigmoid ? torch::sigmoid(logits) : torch::softmax(logits, channel_dim);
}

torch::Tensor to_tensor(const Volume& v) {
  return torch::from_blob(const_cast<float*>(v.data.data()), {1, 1, v.shape.d, v.shape.h, v.shape.w},
                          torch::kFloat)
      .clone();
}

torch::Tensor to_tensor(const LabelMap& m) {
  return torch::from_blob(const_cast<std::uint8_t*>(m.data.data()), {m.shape.d, m.shape.h, m.shape.w},
                          torch::kUInt8)
      .to(torch::kLong);
}

LabelMap argmax_labels(const torch::Tensor& scores, const Spacing& spacing) {
  if (scores.dim() != 4 || scores.size(0) != kNumClasses) throw ValidationError("argmax expects (6, D, H, W)");
  auto idx = scores.argmax(0).to(torch::kUInt8).contiguous();
  LabelMap m({scores.size(1), scores.size(2), scores.size(3)}, spacing);
  std::memcpy(m.data.data(), idx.data_ptr<std::uint8_t>(), m.data.size());
  return m;
}

}  // namespace mcswin
