#include "nn_test.hpp"

#include <cmath>
#include <numbers>

#include "mcswin/checkpoint.hpp"
#include "mcswin/error.hpp"
#include "mcswin/train.hpp"
#include "support.hpp"

using namespace mcswin;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.embed_dim = 6;
  c.depths = {2, 2};
  c.heads = {3, 6};
  c.window = {2, 2, 2};
  c.input_shape = {8, 8, 8};
  return c;
}

/// Cube of class 1..5 blocks on background with intensity tied to the label.
LabeledCase blocky_case(const std::string& id, std::uint64_t seed) {
  Rng rng(seed);
  LabeledCase c{id, Volume({16, 16, 16}, {1, 1, 1}), LabelMap({16, 16, 16}, {1, 1, 1})};
  for (int k = 1; k <= 5; ++k) {
    const auto z0 = rng.uniform_int(0, 11), y0 = rng.uniform_int(0, 11), x0 = rng.uniform_int(0, 11);
    for (auto z = z0; z < z0 + 4; ++z)
      for (auto y = y0; y < y0 + 4; ++y)
        for (auto x = x0; x < x0 + 4; ++x) c.labels.at(z, y, x) = static_cast<std::uint8_t>(k);
  }
  for (std::size_t i = 0; i < c.image.data.size(); ++i)
    c.image.data[i] = static_cast<float>(0.3 * c.labels.data[i] + 0.1 * rng.normal());
  return c;
}

/// Soft Dice loss by explicit loops over a single-batch volume.
double brute_dice_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  auto p = torch::softmax(logits.to(torch::kDouble), 1).contiguous();
  auto l = labels.contiguous();
  const auto n = l.numel();
  const double* P = p.data_ptr<double>();
  const std::int64_t* L = l.data_ptr<std::int64_t>();
  double total = 0;
  for (int k = 0; k < 6; ++k) {
    double inter = 0, ps = 0, gs = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double pk = P[k * n + i], g = L[i] == k ? 1.0 : 0.0;
      inter += pk * g;
      ps += pk;
      gs += g;
    }
    total += (2 * inter + kSoftDiceEps) / (ps + gs + kSoftDiceEps);
  }
  return 1.0 - total / 6.0;
}

bool same_parameters(const ModelState& a, const ModelState& b) {
  auto pb = b.net->named_parameters();
  for (const auto& item : a.net->named_parameters())
    if (!torch::equal(item.value(), pb[item.key()])) return false;
  return true;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("soft Dice matches a loop oracle") {
    torch::manual_seed(1);
    for (int trial = 0; trial < 5; ++trial) {
      auto logits = torch::randn({1, 6, 4, 5, 3}, torch::kDouble) * 2;
      auto labels = torch::randint(0, 6, {1, 4, 5, 3}, torch::kLong);
      const auto l = seg_loss(logits, labels, 1.0, 1.0);
      CHECK(l.dice.item<double>() == doctest::Approx(brute_dice_loss(logits, labels)).epsilon(1e-6));
      CHECK(l.total.item<double>() == doctest::Approx(l.dice.item<double>() + l.ce.item<double>()).epsilon(1e-12));
    }
  }

  TEST_CASE("uniform logits give cross-entropy ln 6") {
    auto labels = torch::randint(0, 6, {2, 3, 3, 3}, torch::kLong);
    const auto l = seg_loss(torch::zeros({2, 6, 3, 3, 3}), labels, 0.0, 1.0);
    CHECK(l.ce.item<double>() == doctest::Approx(std::log(6.0)).epsilon(1e-6));
    CHECK(l.total.item<double>() == doctest::Approx(std::log(6.0)).epsilon(1e-6));
  }

  TEST_CASE("confident correct logits give a loss near zero") {
    auto labels = torch::randint(0, 6, {1, 4, 4, 4}, torch::kLong);
    auto logits = torch::one_hot(labels, 6).permute({0, 4, 1, 2, 3}).to(torch::kFloat) * 50.0;
    CHECK(seg_loss(logits, labels, 1.0, 1.0).total.item<double>() < 0.01);
  }

  TEST_CASE("bad inputs") {
    auto labels = torch::zeros({1, 2, 2, 2}, torch::kLong);
    auto logits = torch::zeros({1, 6, 2, 2, 2});
    logits[0][0][0][0][0] = std::nanf("");
    CHECK_THROWS_AS(seg_loss(logits, labels, 1, 1), NumericError);
    CHECK_THROWS_AS(seg_loss(torch::zeros({1, 5, 2, 2, 2}), labels, 1, 1), ValidationError);
    CHECK_THROWS_AS(seg_loss(torch::zeros({1, 6, 2, 2, 2}), labels + 6, 1, 1), ValidationError);
  }
}

TEST_SUITE("schedule") {
  TEST_CASE("linear warmup then cosine decay") {
    OptimizerConfig o;
    o.lr = 1e-3;
    o.warmup = 10;
    CHECK(scheduled_lr(o, 0, 110) == doctest::Approx(1e-4));
    CHECK(scheduled_lr(o, 9, 110) == doctest::Approx(1e-3));
    CHECK(scheduled_lr(o, 10, 110) == doctest::Approx(1e-3));
    CHECK(scheduled_lr(o, 60, 110) == doctest::Approx(5e-4));
    CHECK(scheduled_lr(o, 35, 110) == doctest::Approx(1e-3 * 0.5 * (1 + std::cos(std::numbers::pi / 4))));
    CHECK(scheduled_lr(o, 109, 110) < 1e-6);
    for (int it = 10; it < 109; ++it) CHECK(scheduled_lr(o, it + 1, 110) <= scheduled_lr(o, it, 110));
  }
}

TEST_SUITE("finetune") {
  TEST_CASE("short run logs one validation per cadence and is reproducible") {
    const std::vector<LabeledCase> train{blocky_case("a", 1), blocky_case("b", 2)};
    const std::vector<LabeledCase> val{blocky_case("c", 3)};
    TrainConfig t;
    t.iterations = 7;
    t.validate_every = 2;
    t.seed = 4;
    t.optimizer.warmup = 2;
    t.optimizer.lr = 1e-3;
    const auto a = finetune(train, val, tiny_config(), t, default_training_augment());
    const auto b = finetune(train, val, tiny_config(), t, default_training_augment());
    CHECK(a.log.validations.size() == 3);
    CHECK(a.log.loss.size() == 7);
    CHECK(a.log.validations[2].iteration == 6);
    CHECK(a.log.best_iteration == b.log.best_iteration);
    CHECK(a.log.loss == b.log.loss);
    CHECK(same_parameters(a.best, b.best));
    CHECK(a.best.metadata.at("best_iteration") == std::to_string(a.log.best_iteration));

    const auto csv = a.log.validation_csv();
    CHECK(csv.rfind("iteration,mean_dice,lung_r,lung_l,spinal_cord,esophagus,gtv,best\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(a.log.loss_csv().rfind("iteration,loss,lr\n1,", 0) == 0);

    t.seed = 5;
    const auto c = finetune(train, val, tiny_config(), t, default_training_augment());
    CHECK(c.log.loss != a.log.loss);
  }

  TEST_CASE("pretrained init copies the encoder exactly") {
    testing::TempDir dir("init");
    auto pre = init_model(tiny_config(), 77);
    pre.metadata["pretrained"] = "true";
    save_checkpoint(pre, dir.file("pre.ckpt"));
    TrainConfig t;
    t.seed = 1;
    t.init = dir.file("pre.ckpt");
    const auto s = initialize_for_finetune(tiny_config(), t);
    auto src = pre.net->named_parameters();
    std::size_t encoder_params = 0;
    for (const auto& item : s.net->named_parameters())
      if (item.key().rfind("encoder.", 0) == 0) {
        CHECK(torch::equal(item.value(), src[item.key()]));
        ++encoder_params;
      }
    CHECK(encoder_params > 0);
    CHECK(s.metadata.at("init") == t.init);

    t.init = dir.file("missing.ckpt");
    CHECK_THROWS_AS(initialize_for_finetune(tiny_config(), t), Error);
    auto other = tiny_config();
    other.embed_dim = 12;
    t.init = dir.file("pre.ckpt");
    CHECK_THROWS_AS(initialize_for_finetune(other, t), CheckpointMismatchError);
  }

  TEST_CASE("invalid setups are rejected") {
    const std::vector<LabeledCase> train{blocky_case("a", 1)};
    TrainConfig t;
    t.iterations = 4;
    t.validate_every = 8;
    CHECK_THROWS_AS(finetune(train, train, tiny_config(), t, AugmentConfig{}), ValidationError);
    t.validate_every = 2;
    CHECK_THROWS_AS(finetune(train, {}, tiny_config(), t, AugmentConfig{}), ValidationError);
  }

  TEST_CASE("validation mean is the average of the class Dice values") {
    auto s = init_model(tiny_config(), 1);
    const auto c = blocky_case("v", 9);
    const auto r = validate_model(s, {c}, 0.5);
    CHECK(r.mean_dice >= 0.0);
    CHECK(r.mean_dice <= 1.0);
    double sum = 0;
    for (double d : r.class_dice) sum += d;
    CHECK(r.mean_dice == doctest::Approx(sum / 5));
  }
}
