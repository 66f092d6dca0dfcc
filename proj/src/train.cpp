#include "mcswin/train.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <sstream>

#include "mcswin/checkpoint.hpp"
#include "mcswin/error.hpp"
#include "mcswin/inference.hpp"
#include "mcswin/metrics.hpp"
#include "mcswin/patch.hpp"
#include "mcswin/rng.hpp"

namespace mcswin {

SegLoss seg_loss(const torch::Tensor& logits, const torch::Tensor& labels, double dice_weight, double ce_weight) {
  if (logits.dim() != 5 || logits.size(1) != kNumClasses) throw ValidationError("seg_loss expects (B, 6, D, H, W)");
  if (labels.dim() != 4 || labels.size(0) != logits.size(0) || labels.size(1) != logits.size(2) ||
      labels.size(2) != logits.size(3) || labels.size(3) != logits.size(4))
    throw ValidationError("seg_loss label shape does not match logits");
  if (!torch::isfinite(logits).all().item<bool>()) throw NumericError("seg_loss received non-finite logits");
  if (labels.min().item<std::int64_t>() < 0 || labels.max().item<std::int64_t>() >= kNumClasses)
    throw ValidationError("seg_loss labels outside 0..5");

  auto probs = torch::softmax(logits, 1);
  auto onehot = torch::one_hot(labels, kNumClasses).permute({0, 4, 1, 2, 3}).to(logits.dtype());
  const std::vector<std::int64_t> dims{0, 2, 3, 4};
  auto inter = (probs * onehot).sum(dims);
  auto denom = probs.sum(dims) + onehot.sum(dims);
  auto soft_dice = (2.0 * inter + kSoftDiceEps) / (denom + kSoftDiceEps);
  SegLoss out;
  out.dice = 1.0 - soft_dice.mean();
  out.ce = torch::nn::functional::cross_entropy(logits, labels);
  out.total = dice_weight * out.dice + ce_weight * out.ce;
  return out;
}

double scheduled_lr(const OptimizerConfig& o, int it, int total) {
  if (it < o.warmup) return o.lr * double(it + 1) / double(o.warmup);
  const int span = std::max(1, total - o.warmup);
  const double progress = std::min(1.0, double(it - o.warmup) / double(span));
  return o.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string TrainLog::loss_csv() const {
  std::ostringstream os;
  os << "iteration,loss,lr\n";
  char buf[96];
  for (std::size_t i = 0; i < loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i + 1, loss[i], lr[i]);
    os << buf;
  }
  return os.str();
}

std::string TrainLog::validation_csv() const {
  std::ostringstream os;
  os << "iteration,mean_dice,lung_r,lung_l,spinal_cord,esophagus,gtv,best\n";
  char buf[64];
  for (const auto& v : validations) {
    os << v.iteration;
    std::snprintf(buf, sizeof buf, ",%.9g", v.mean_dice);
    os << buf;
    for (double d : v.class_dice) {
      std::snprintf(buf, sizeof buf, ",%.9g", d);
      os << buf;
    }
    os << ',' << (v.iteration == best_iteration ? 1 : 0) << '\n';
  }
  return os.str();
}

ModelState initialize_for_finetune(const ModelConfig& model, const TrainConfig& train) {
  auto state = init_model(model, train.seed);
  if (train.init != "random") {
    const auto pretrained = load_checkpoint(train.init);
    copy_encoder(pretrained, state);
    state.metadata["init"] = train.init;
  } else {
    state.metadata["init"] = "random";
  }
  state.metadata["pretrained"] = "false";
  return state;
}

ValidationRecord validate_model(const ModelState& state, const std::vector<LabeledCase>& cases, double overlap) {
  if (cases.empty()) throw ValidationError("validation set is empty");
  const auto& in = state.config.input_shape;
  const Shape3 patch{in[0], in[1], in[2]};
  ValidationRecord r;
  for (const auto& c : cases) {
    auto probs = sliding_window_predict(state, c.image, patch, overlap);
    const auto pred = argmax_labels(probs, c.image.spacing);
    double sum = 0.0;
    for (int k = 1; k < kNumClasses; ++k) {
      const double d = dice(pred, c.labels, k);
      r.class_dice[k - 1] += d / double(cases.size());
      sum += d;
    }
    r.mean_dice += sum / kNumForeground / double(cases.size());
  }
  return r;
}

namespace {

void set_lr(torch::optim::AdamW& opt, double lr) {
  for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
}

}  // namespace

FinetuneResult finetune(const std::vector<LabeledCase>& train_set, const std::vector<LabeledCase>& val_set,
                        const ModelConfig& model, const TrainConfig& train, const AugmentConfig& augment_config,
                        std::ostream* progress) {
  validate(model);
  validate(train);
  validate(augment_config);
  if (train_set.empty() || val_set.empty()) throw ValidationError("train and validation sets must be nonempty");
  for (const auto& c : train_set) require_paired(c.image, c.labels);
  for (const auto& c : val_set) require_paired(c.image, c.labels);

  ModelState state = initialize_for_finetune(model, train);
  const auto& o = train.optimizer;
  torch::optim::AdamW opt(state.net->parameters(),
                          torch::optim::AdamWOptions(o.lr).betas({o.beta1, o.beta2}).eps(o.eps).weight_decay(o.weight_decay));
  auto dropout_gen = make_generator(derive_stream(train.seed, 0xD50Full));
  const Shape3 patch{model.input_shape[0], model.input_shape[1], model.input_shape[2]};

  FinetuneResult result;
  TrainLog& log = result.log;
  result.best = clone_state(state);
  for (int it = 0; it < train.iterations; ++it) {
    const auto iter_seed = derive_stream(train.seed, static_cast<std::uint64_t>(it));
    std::vector<torch::Tensor> images, labels;
    for (int b = 0; b < train.batch_size; ++b) {
      const auto sample_seed = derive_stream(iter_seed, static_cast<std::uint64_t>(b));
      Rng rng(sample_seed);
      const auto& c = train_set[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(train_set.size()) - 1))];
      const auto aug_seed = rng.next_u64();
      const auto patch_seed = rng.next_u64();
      std::pair<Volume, LabelMap> patch_pair;
      if (train.augment) {
        auto [v, m] = augment(c.image, c.labels, augment_config, aug_seed);
        patch_pair = extract_patch(v, m, patch, patch_seed, train.fg_bias);
      } else {
        patch_pair = extract_patch(c.image, c.labels, patch, patch_seed, train.fg_bias);
      }
      images.push_back(to_tensor(patch_pair.first));
      labels.push_back(to_tensor(patch_pair.second).unsqueeze(0));
    }
    const double lr = scheduled_lr(o, it, train.iterations);
    set_lr(opt, lr);
    state.net->train();
    opt.zero_grad();
    auto logits = forward(state, torch::cat(images, 0), DropoutMode::On, &dropout_gen);
    auto loss = seg_loss(logits, torch::cat(labels, 0), train.dice_weight, train.ce_weight);
    const double value = loss.total.item<double>();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite training loss at iteration " << it + 1 << " (dice " << loss.dice.item<double>() << ", ce "
          << loss.ce.item<double>() << ", lr " << lr << ")";
      throw NumericError(msg.str());
    }
    loss.total.backward();
    opt.step();
    log.loss.push_back(value);
    log.lr.push_back(lr);

    const int done = it + 1;
    if (done % train.validate_every == 0) {
      auto record = validate_model(state, val_set, train.val_overlap);
      record.iteration = done;
      log.validations.push_back(record);
      if (record.mean_dice > log.best_dice) {
        log.best_dice = record.mean_dice;
        log.best_iteration = done;
        result.best = clone_state(state);
      }
      if (progress) {
        char line[160];
        std::snprintf(line, sizeof line, "iter %6d  loss %.5f  lr %.3e  val_dice %.4f  best %.4f@%d\n", done, value, lr,
                      record.mean_dice, log.best_dice, log.best_iteration);
        *progress << line << std::flush;
      }
    }
  }
  result.best.metadata["best_iteration"] = std::to_string(log.best_iteration);
  result.best.metadata["best_val_dice"] = std::to_string(log.best_dice);
  return result;
}

}  // namespace mcswin
