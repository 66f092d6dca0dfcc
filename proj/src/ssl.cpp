#include "mcswin/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "mcswin/checkpoint.hpp"
#include "mcswin/error.hpp"
#include "mcswin/patch.hpp"
#include "mcswin/rng.hpp"
#include "mcswin/train.hpp"

namespace mcswin {
namespace F = torch::nn::functional;

std::vector<std::uint8_t> cutout_mask(Shape3 s, double fraction, Rng& rng) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(s.voxels()), 0);
  const auto target = static_cast<std::int64_t>(std::ceil(fraction * double(s.voxels())));
  const std::int64_t n[3] = {s.d, s.h, s.w};
  std::int64_t covered = 0;
  while (covered < target) {
    std::int64_t lo[3], len[3];
    for (int a = 0; a < 3; ++a) {
      const auto smin = std::max<std::int64_t>(1, n[a] / 16);
      const auto smax = std::max<std::int64_t>(smin, n[a] / 4);
      len[a] = rng.uniform_int(smin, smax);
      lo[a] = rng.uniform_int(0, n[a] - len[a]);
    }
    for (auto z = lo[0]; z < lo[0] + len[0]; ++z)
      for (auto y = lo[1]; y < lo[1] + len[1]; ++y)
        for (auto x = lo[2]; x < lo[2] + len[2]; ++x) {
          auto& m = mask[static_cast<std::size_t>((z * s.h + y) * s.w + x)];
          covered += m == 0;
          m = 1;
        }
  }
  return mask;
}

PretextBatch make_pretext_batch(const std::vector<Volume>& volumes, Shape3 sub, const PretrainConfig& config,
                                std::uint64_t seed) {
  if (volumes.empty()) throw ValidationError("pretext batch needs at least one volume");
  validate(config);
  for (const auto& v : volumes)
    if (sub.d > v.shape.d || sub.h > v.shape.h || sub.w > v.shape.w)
      throw ValidationError("sub-volume shape exceeds a source volume");
  std::vector<int> axes;
  for (int a : config.rotation_axes) {
    const bool square = a == 0 ? sub.h == sub.w : a == 1 ? sub.d == sub.w : sub.d == sub.h;
    if (square) axes.push_back(a);
  }
  if (axes.empty()) throw ValidationError("no allowed rotation axis has a square rotation plane");

  Rng rng(seed);
  const auto b = config.batch_size;
  const std::vector<std::int64_t> shape{1, 1, sub.d, sub.h, sub.w};
  std::vector<torch::Tensor> originals, targets, views, masks;
  std::vector<std::int64_t> rotation;
  PretextBatch batch;
  for (int i = 0; i < b; ++i) {
    const auto& v = volumes[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(volumes.size()) - 1))];
    const std::array<std::int64_t, 3> origin{rng.uniform_int(0, v.shape.d - sub.d),
                                             rng.uniform_int(0, v.shape.h - sub.h),
                                             rng.uniform_int(0, v.shape.w - sub.w)};
    const Volume crop_v = crop(v, origin, sub);
    originals.push_back(to_tensor(crop_v));
    for (int view = 0; view < 2; ++view) {
      const int axis = axes[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(axes.size()) - 1))];
      const int k = static_cast<int>(rng.uniform_int(0, 3));
      Volume rotated = rotate90(crop_v, axis, k);
      const auto m = cutout_mask(sub, config.cutout_fraction, rng);
      targets.push_back(to_tensor(rotated));
      for (std::size_t j = 0; j < m.size(); ++j)
        if (m[j]) rotated.data[j] = static_cast<float>(config.cutout_fill);
      views.push_back(to_tensor(rotated));
      masks.push_back(torch::from_blob(const_cast<std::uint8_t*>(m.data()), shape, torch::kUInt8).to(torch::kBool));
      rotation.push_back(k);
      batch.axes.push_back(axis);
      batch.provenance.push_back(i);
    }
  }
  batch.originals = torch::cat(originals, 0);
  batch.targets = torch::cat(targets, 0);
  batch.views = torch::cat(views, 0);
  batch.masks = torch::cat(masks, 0);
  batch.rotation = torch::tensor(rotation, torch::kLong);
  return batch;
}

PretrainHeadsImpl::PretrainHeadsImpl(const ModelConfig& c, int projection_dim) {
  const int last = c.stages() - 1;
  const std::int64_t width = c.stage_dim(last);
  rot = register_module("rot", torch::nn::Linear(width, 4));
  proj1 = register_module("proj1", torch::nn::Linear(width, width));
  proj2 = register_module("proj2", torch::nn::Linear(width, projection_dim));
  auto up_list = register_module("ups", torch::nn::ModuleList());
  auto block_list = register_module("blocks", torch::nn::ModuleList());
  for (int s = last; s >= 1; --s) {
    torch::nn::ConvTranspose3d up(torch::nn::ConvTranspose3dOptions(c.stage_dim(s), c.stage_dim(s - 1), 2).stride(2));
    ConvBlock blk(c.stage_dim(s - 1), c.stage_dim(s - 1));
    up_list->push_back(up);
    block_list->push_back(blk);
    ups.push_back(up);
    blocks.push_back(blk);
  }
  const std::vector<std::int64_t> p{c.patch_size[0], c.patch_size[1], c.patch_size[2]};
  torch::nn::ConvTranspose3d up(torch::nn::ConvTranspose3dOptions(c.embed_dim, c.embed_dim, p).stride(p));
  ConvBlock blk(c.embed_dim, c.embed_dim);
  up_list->push_back(up);
  block_list->push_back(blk);
  ups.push_back(up);
  blocks.push_back(blk);
  out = register_module("out", torch::nn::Conv3d(torch::nn::Conv3dOptions(c.embed_dim, 1, 1)));
}

torch::Tensor PretrainHeadsImpl::rotation_logits(const torch::Tensor& bottleneck) {
  return rot(bottleneck.mean({2, 3, 4}));
}

torch::Tensor PretrainHeadsImpl::projection(const torch::Tensor& bottleneck) {
  return proj2(F::gelu(proj1(bottleneck.mean({2, 3, 4}))));
}

torch::Tensor PretrainHeadsImpl::reconstruct(const torch::Tensor& bottleneck) {
  auto h = bottleneck;
  for (std::size_t i = 0; i < ups.size(); ++i) h = blocks[i](ups[i](h));
  return out(h);
}

torch::Tensor rotation_loss(const torch::Tensor& logits, const torch::Tensor& targets) {
  return F::cross_entropy(logits, targets);
}

torch::Tensor inpaint_loss(const torch::Tensor& recon, const torch::Tensor& target, const torch::Tensor& mask) {
  auto m = mask.to(recon.dtype());
  auto n = m.sum();
  if (n.item<double>() == 0.0) return torch::zeros({}, recon.options());
  return ((recon - target).abs() * m).sum() / n;
}

torch::Tensor info_nce(const torch::Tensor& embeddings, double temperature) {
  const auto n = embeddings.size(0);
  if (n < 4 || n % 2 != 0)
    throw ValidationError("contrastive loss needs at least two sub-volumes (four views) to form negatives");
  auto z = F::normalize(embeddings, F::NormalizeFuncOptions().dim(1));
  auto sim = z.matmul(z.t()) / temperature;
  auto self = torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
  sim = sim.masked_fill(self, -std::numeric_limits<double>::infinity());
  auto positive = torch::arange(n, torch::kLong).bitwise_xor(1);
  return F::cross_entropy(sim, positive);
}

PretextLosses pretext_losses(const PretextBatch& batch, SwinEncoder& encoder, PretrainHeads& heads,
                             const PretrainConfig& config, const DropoutContext& ctx) {
  if (config.lambda_contrast > 0.0 && batch.views_count() < 4)
    throw ValidationError("contrastive loss needs at least two sub-volumes per batch");
  const auto dtype = encoder->parameters().front().dtype();
  auto features = encoder->forward(batch.views.to(dtype), ctx);
  const auto& bottleneck = features.back();
  PretextLosses l;
  l.rot = rotation_loss(heads->rotation_logits(bottleneck), batch.rotation);
  l.inpaint = inpaint_loss(heads->reconstruct(bottleneck), batch.targets.to(dtype), batch.masks);
  l.contrast = config.lambda_contrast > 0.0 ? info_nce(heads->projection(bottleneck), config.temperature)
                                            : torch::zeros({}, bottleneck.options());
  l.total = config.lambda_rot * l.rot + config.lambda_inpaint * l.inpaint + config.lambda_contrast * l.contrast;
  return l;
}

std::string PretrainResult::curve_csv() const {
  std::ostringstream os;
  os << "iteration,L_rot,L_inpaint,L_contrast,L_total\n";
  char buf[160];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", r.iteration, r.rot, r.inpaint, r.contrast, r.total);
    os << buf;
  }
  return os.str();
}

PretrainResult pretrain(const std::vector<Volume>& volumes, const ModelConfig& model, const PretrainConfig& config,
                        std::ostream* progress, const std::string& last_good_path) {
  validate(model);
  validate(config);
  if (volumes.size() < 2) throw ValidationError("pre-training needs at least two unlabeled volumes");
  const Shape3 sub{model.input_shape[0], model.input_shape[1], model.input_shape[2]};

  PretrainResult result;
  result.state = init_model(model, config.seed);
  torch::manual_seed(derive_stream(config.seed, 0x4EADull));
  result.heads = PretrainHeads(model, config.projection_dim);
  {
    // Same initialisation rule as the main network, seeded separately.
    auto gen = make_generator(derive_stream(config.seed, 0x4EADull));
    torch::NoGradGuard no_grad;
    for (auto& item : result.heads->named_parameters()) {
      auto& p = item.value();
      if (item.key().size() >= 5 && item.key().compare(item.key().size() - 5, 5, ".bias") == 0) {
        p.zero_();
      } else {
        p.normal_(0.0, 0.02, gen).clamp_(-0.04, 0.04);
      }
    }
  }
  auto encoder = result.state.net->encoder;
  std::vector<torch::Tensor> params = encoder->parameters();
  for (auto& p : result.heads->parameters()) params.push_back(p);
  const auto& o = config.optimizer;
  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(o.lr).betas({o.beta1, o.beta2}).eps(o.eps).weight_decay(
                                      o.weight_decay));
  auto dropout_gen = make_generator(derive_stream(config.seed, 0xD50Full));
  const DropoutContext ctx{config.dropout ? DropoutMode::On : DropoutMode::Off, model.dropout, &dropout_gen};

  ModelState last_good = clone_state(result.state);
  for (int it = 0; it < config.iterations; ++it) {
    const auto batch = make_pretext_batch(volumes, sub, config, derive_stream(config.seed, static_cast<std::uint64_t>(it)));
    const double lr = scheduled_lr(o, it, config.iterations);
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
    opt.zero_grad();
    auto losses = pretext_losses(batch, encoder, result.heads, config, ctx);
    const double total = losses.total.item<double>();
    if (!std::isfinite(total)) {
      if (!last_good_path.empty()) save_checkpoint(last_good, last_good_path);
      throw NumericError("pre-training diverged at iteration " + std::to_string(it + 1) +
                         (last_good_path.empty() ? "" : "; last good state saved to " + last_good_path));
    }
    losses.total.backward();
    opt.step();
    result.curve.push_back({it + 1, losses.rot.item<double>(), losses.inpaint.item<double>(),
                            losses.contrast.item<double>(), total});
    if ((it + 1) % 25 == 0) last_good = clone_state(result.state);
    if (progress && ((it + 1) % 25 == 0 || it == 0)) {
      char line[160];
      const auto& r = result.curve.back();
      std::snprintf(line, sizeof line, "pretrain %5d  rot %.4f  inpaint %.4f  contrast %.4f  total %.4f\n", r.iteration,
                    r.rot, r.inpaint, r.contrast, r.total);
      *progress << line << std::flush;
    }
  }
  result.state.metadata["pretrained"] = "true";
  result.state.metadata["pretrain_iterations"] = std::to_string(config.iterations);
  return result;
}

double rotation_accuracy(const ModelState& state, PretrainHeads& heads, const PretextBatch& batch) {
  torch::NoGradGuard no_grad;
  const auto dtype = state.net->parameters().front().dtype();
  SwinUNet net = state.net;
  auto features = net->encoder->forward(batch.views.to(dtype), DropoutContext{});
  auto pred = heads->rotation_logits(features.back()).argmax(1);
  return pred.eq(batch.rotation).to(torch::kDouble).mean().item<double>();
}

}  // namespace mcswin
