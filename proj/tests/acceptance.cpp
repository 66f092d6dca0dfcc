// Acceptance gates. One PASS/FAIL line per criterion; pass criterion numbers to
// run a subset (default: all). Exit status is nonzero if any selected gate fails.

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "mcswin/checkpoint.hpp"
#include "mcswin/inference.hpp"
#include "mcswin/metrics.hpp"
#include "mcswin/mvol.hpp"
#include "mcswin/patch.hpp"
#include "mcswin/phantom.hpp"
#include "mcswin/ssl.hpp"
#include "mcswin/train.hpp"
#include "mcswin/uncertainty.hpp"
#include "nn_oracles.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mcswin;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared settings for the training gates.

constexpr double kOverfitGate = 0.80;
constexpr int kOverfitIterations = 2000;
constexpr int kOverfitValidateEvery = 250;
constexpr double kOverfitLr = 6e-3;

constexpr int kSslPretrainVolumes = 16;
constexpr int kSslPretrainIterations = 300;
constexpr int kSslFinetuneIterations = 400;
constexpr int kSslValidateEvery = 100;
constexpr double kSslLr = 3e-3;

TrainConfig gate_train_config(int iterations, int validate_every, double lr, std::uint64_t seed) {
  TrainConfig t;
  t.batch_size = 2;
  t.iterations = iterations;
  t.validate_every = validate_every;
  t.optimizer.lr = lr;
  t.fg_bias = 1.0;
  t.augment = false;
  t.seed = seed;
  return t;
}

double smoothed(const std::vector<double>& v, std::size_t from, std::size_t window) {
  double s = 0;
  for (std::size_t i = from; i < from + window; ++i) s += v[i];
  return s / double(window);
}

// ---------------------------------------------------------------------------

Verdict metric_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  int dice_exact = 0, hd_ok = 0, hd_defined = 0;
  double worst = 0;
  const int pairs = 200;
  for (int i = 0; i < pairs; ++i) {
    const Shape3 s{rng.uniform_int(1, 6), rng.uniform_int(1, 6), rng.uniform_int(1, 6)};
    const int c = static_cast<int>(rng.uniform_int(1, 5));
    const auto p = testing::random_mask(s, c, rng.uniform(0.05, 0.95), rng);
    const auto g = testing::random_mask(s, c, rng.uniform(0.05, 0.95), rng);
    const Spacing sp{rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)};
    dice_exact += dice(p, g, c) == oracle::dice(p, g, c);
    const auto got = hd95(p, g, c, sp);
    const auto want = oracle::hd(p, g, c, sp);
    if (got.has_value() != want.has_value()) continue;
    if (!got) {
      ++hd_ok;
      continue;
    }
    ++hd_defined;
    const double err = std::abs(*got - *want);
    worst = std::max(worst, err);
    hd_ok += err <= 1e-9;
  }
  const double secs = seconds_since(t0);
  return {dice_exact == pairs && hd_ok == pairs && secs < 30.0,
          fmt("Dice exact on %d/%d pairs; HD95 agrees on %d/%d (%d defined), max |err| %.3g (tol 1e-9); %.1f s (limit 30 s)",
              dice_exact, pairs, hd_ok, pairs, hd_defined, worst, secs)};
}

Verdict attention_correctness() {
  double worst_dense = 0;
  for (const auto& [w, seed] : {std::pair<std::array<std::int64_t, 3>, int>{{4, 4, 4}, 1}, {{4, 4, 2}, 2}, {{2, 4, 3}, 3}})
    worst_dense = std::max(worst_dense, oracle::dense_attention_error(w, 12, 3, seed));
  float worst_leak = 0;
  double worst_mass = 0;
  for (const auto& grid : {std::array<std::int64_t, 3>{8, 8, 8}, {6, 8, 5}, {16, 16, 16}}) {
    const auto r = oracle::shifted_window_leak(grid, {4, 4, 4}, 7);
    worst_leak = std::max(worst_leak, r.worst_blocked);
    worst_mass = std::max(worst_mass, r.worst_mass_error);
  }
  return {worst_dense <= 1e-5 && worst_leak < 1e-6f,
          fmt("dense oracle max rel err %.2g (tol 1e-5, <=64 tokens); SW-MSA max weight across pre-shift regions "
              "%.2g (tol 1e-6), allowed mass error %.2g",
              worst_dense, double(worst_leak), worst_mass)};
}

Verdict gradient_check() {
  const auto t0 = Clock::now();
  auto s = init_model(oracle::micro_config(), 9);
  Rng rng(9);
  const auto x = to_tensor(testing::random_volume({4, 4, 4}, rng));
  LabelMap labels({4, 4, 4}, {1, 1, 1});
  for (auto& l : labels.data) l = static_cast<std::uint8_t>(rng.uniform_int(0, 5));
  const auto r = oracle::gradient_check(s, x, to_tensor(labels).unsqueeze(0));
  const double secs = seconds_since(t0);
  return {r.failed == 0 && secs < 120.0,
          fmt("%lld/%lld parameter elements within 1e-3 relative (abs floor 1e-5), worst %.2g at %s; %.1f s (limit 120 s)",
              static_cast<long long>(r.checked - r.failed), static_cast<long long>(r.checked), r.worst_rel,
              r.worst_name.c_str(), secs)};
}

Verdict mc_dropout_contract() {
  auto [image, labels] = generate_phantom(PhantomSpec{}, 3);
  const auto v = crop(image, {16, 16, 16}, {32, 32, 32});
  ModelConfig c;
  c.dropout = 0.0;
  const auto still = mc_predict(init_model(c, 1), v, 10, 5, {32, 32, 32}, 0.5);
  bool identical = true;
  for (const auto& m : still.samples) identical &= m == still.samples[0];
  const auto still_vote = vote(still, 5);
  const auto n_uncertain = std::count(still_vote.uncertain.data.begin(), still_vote.uncertain.data.end(), 1);

  c.dropout = 0.5;
  const auto noisy = mc_predict(init_model(c, 1), v, 10, 5, {32, 32, 32}, 0.5);
  int distinct = 0;
  for (const auto& m : noisy.samples) distinct += !(m == noisy.samples[0]);

  Rng rng(44);
  int pigeon = 0, monotone = 0, perm = 0;
  for (int trial = 0; trial < 100; ++trial) {
    PredictionStack s;
    for (int t = 0; t < 10; ++t) {
      LabelMap m({3, 4, 5}, {1, 1, 1});
      for (auto& x : m.data) x = static_cast<std::uint8_t>(rng.uniform_int(0, 5));
      s.samples.push_back(m);
    }
    const auto base = vote(s, 5);
    pigeon += std::all_of(base.agreement.data.begin(), base.agreement.data.end(), [](auto a) { return a >= 2; });
    bool mono = true;
    for (int k = 1; k < 10; ++k) {
      const auto lo = vote(s, k), hi = vote(s, k + 1);
      for (std::size_t i = 0; i < lo.uncertain.data.size(); ++i) mono &= lo.uncertain.data[i] <= hi.uncertain.data[i];
    }
    monotone += mono;
    for (int i = 9; i > 0; --i)
      std::swap(s.samples[std::size_t(i)], s.samples[std::size_t(rng.uniform_int(0, i))]);
    const auto shuffled = vote(s, 5);
    perm += shuffled.agreement == base.agreement && shuffled.consensus == base.consensus &&
            shuffled.uncertain == base.uncertain;
  }
  return {identical && n_uncertain == 0 && distinct > 0 && pigeon == 100 && monotone == 100 && perm == 100,
          fmt("rate 0: samples identical=%s, uncertain voxels %lld (need 0); rate 0.5: %d/9 samples differ from the "
              "first (need >0); pigeonhole %d/100, k-monotone %d/100, permutation-invariant %d/100",
              identical ? "yes" : "no", static_cast<long long>(n_uncertain), distinct, pigeon, monotone, perm)};
}

Verdict overfit_gate() {
  const auto t0 = Clock::now();
  auto [image, labels] = generate_phantom(PhantomSpec{}, 0);
  const std::vector<LabeledCase> one{{"case_000", image, labels}};
  const auto t = gate_train_config(kOverfitIterations, kOverfitValidateEvery, kOverfitLr, 0);
  const auto r = finetune(one, one, ModelConfig{}, t, AugmentConfig{}, &std::cerr);
  const double secs = seconds_since(t0);
  const double first = smoothed(r.log.loss, 0, 50), last = smoothed(r.log.loss, r.log.loss.size() - 50, 50);
  std::string classes;
  for (const auto& v : r.log.validations)
    if (v.iteration == r.log.best_iteration)
      for (double d : v.class_dice) classes += fmt(" %.3f", d);
  return {r.log.best_dice >= kOverfitGate && last < first,
          fmt("best mean foreground Dice %.4f at iteration %d of %d (gate >= %.2f; per class%s); smoothed loss %.3f -> "
              "%.3f; %.0f s on %d thread(s) (budget 15 min on 4 cores)",
              r.log.best_dice, r.log.best_iteration, kOverfitIterations, kOverfitGate, classes.c_str(), first, last,
              secs, torch::get_num_threads())};
}

Verdict ssl_directionality() {
  const auto t0 = Clock::now();
  std::vector<Volume> unlabeled;
  for (int i = 0; i < kSslPretrainVolumes; ++i)
    unlabeled.push_back(generate_phantom(PhantomSpec{}, derive_stream(1000, std::uint64_t(i))).first);
  std::vector<LabeledCase> train, val;
  for (int i = 0; i < 2; ++i) {
    auto [v, l] = generate_phantom(PhantomSpec{}, derive_stream(2000, std::uint64_t(i)));
    train.push_back({"train_" + std::to_string(i), v, l});
    auto [vv, vl] = generate_phantom(PhantomSpec{}, derive_stream(3000, std::uint64_t(i)));
    val.push_back({"val_" + std::to_string(i), vv, vl});
  }

  PretrainConfig pc;
  pc.iterations = kSslPretrainIterations;
  const auto pre = pretrain(unlabeled, ModelConfig{}, pc, &std::cerr);
  const std::size_t w = 50;
  std::vector<double> totals;
  for (const auto& row : pre.curve) totals.push_back(row.total);
  const double pre_first = smoothed(totals, 0, w), pre_last = smoothed(totals, totals.size() - w, w);

  testing::TempDir dir("acceptance_ssl");
  save_checkpoint(pre.state, dir.file("pre.ckpt"));
  int wins = 0;
  std::string pairs;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto t = gate_train_config(kSslFinetuneIterations, kSslValidateEvery, kSslLr, seed);
    const double random = finetune(train, val, ModelConfig{}, t, AugmentConfig{}, &std::cerr).log.best_dice;
    t.init = dir.file("pre.ckpt");
    const double pretrained = finetune(train, val, ModelConfig{}, t, AugmentConfig{}, &std::cerr).log.best_dice;
    wins += pretrained >= random;
    pairs += fmt(" seed %d: pretrained %.4f vs random %.4f;", int(seed), pretrained, random);
  }
  return {wins >= 2, fmt("pretrained >= random in %d/3 seeds (need 2);%s pretext loss (window 50) %.3f -> %.3f; %.0f s",
                         wins, pairs.c_str(), pre_first, pre_last, seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// CLI-driven gates

int run_cli(const std::string& args, const std::string& log, const std::string& cwd = ".") {
  const std::string cmd = "cd " + cwd + " && " + std::string(MCSWIN_CLI) + " " + args + " >> " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> tree(const fs::path& root) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root).string());
  std::sort(files.begin(), files.end());
  return files;
}

Verdict determinism() {
  testing::TempDir dir("acceptance_det");
  const auto log = dir.file("cli.log");
  int failures = 0;
  // Same relative paths in both runs; checkpoints record the init path.
  for (const char* run : {"a", "b"}) {
    const auto r = dir.file(run);
    fs::create_directories(r);
    failures += run_cli("phantom --count 4 --out data", log, r) != 0;
    failures += run_cli("pretrain --data data --iterations 4 --out pre.ckpt", log, r) != 0;
    failures += run_cli("finetune --data data --init pre.ckpt --iterations 4 --validate-every 2 --out ft.ckpt", log, r) != 0;
    failures +=
        run_cli("predict --ckpt ft.ckpt --in data/case_000_image.mvol --mc-samples 2 --threshold 2 --out pred", log, r) != 0;
  }
  const auto files_a = tree(dir.file("a")), files_b = tree(dir.file("b"));
  int differing = 0;
  for (const auto& f : files_a) differing += testing::slurp(dir.file("a/" + f)) != testing::slurp(dir.file("b/" + f));

  Rng rng(7);
  int mvol_ok = 0;
  for (int i = 0; i < 20; ++i) {
    const auto v = testing::random_volume({rng.uniform_int(1, 9), rng.uniform_int(1, 9), rng.uniform_int(1, 9)}, rng);
    write_volume(dir.file("v.mvol"), v);
    mvol_ok += read_intensity(dir.file("v.mvol")) == v;
  }
  const auto state = load_checkpoint(dir.file("a/ft.ckpt"));
  save_checkpoint(state, dir.file("again.ckpt"));
  const bool ckpt_ok = testing::slurp(dir.file("again.ckpt")) == testing::slurp(dir.file("a/ft.ckpt"));

  return {failures == 0 && files_a == files_b && differing == 0 && !files_a.empty() && mvol_ok == 20 && ckpt_ok,
          fmt("%d CLI failures; %zu output files per run, %d differ between same-seed runs; .mvol round trips exact "
              "%d/20; checkpoint re-save byte-identical: %s",
              failures, files_a.size(), differing, mvol_ok, ckpt_ok ? "yes" : "no")};
}

Verdict pipeline_smoke() {
  const auto t0 = Clock::now();
  testing::TempDir dir("acceptance_smoke");
  const auto log = dir.file("cli.log");
  const auto d = dir.file("data");
  std::vector<std::pair<std::string, int>> steps;
  auto step = [&](const std::string& name, const std::string& args, const std::string& out) {
    steps.push_back({name, run_cli(args, out)});
  };
  step("phantom", "phantom --count 6 --out " + d, log);
  step("pretrain", "pretrain --data " + d + " --iterations 20 --out " + dir.file("pre.ckpt"), log);
  step("finetune", "finetune --data " + d + " --init " + dir.file("pre.ckpt") +
                       " --iterations 100 --validate-every 50 --out " + dir.file("ft.ckpt"),
       log);
  std::vector<std::string> test_ids;
  if (std::ifstream manifest(d + "/manifest.json"); manifest)
    test_ids = nlohmann::json::parse(manifest).at("split").at("test").get<std::vector<std::string>>();
  for (const auto& id : test_ids)
    step("predict " + id, "predict --ckpt " + dir.file("ft.ckpt") + " --in " + d + "/" + id + "_image.mvol --out " +
                              dir.file("pred/" + id),
         log);
  step("evaluate", "evaluate --pred " + dir.file("pred") + " --gt " + d + " --out " + dir.file("report.csv"),
       dir.file("table.txt"));
  const double secs = seconds_since(t0);

  const auto table_bytes = testing::slurp(dir.file("table.txt"));
  const std::string table(table_bytes.begin(), table_bytes.end());
  int rows = 0;
  for (const char* name : {"Lung R", "Lung L", "Spinal Cord", "Esophagus", "GTV", "Overall"})
    rows += table.find(name) != std::string::npos;
  bool all_zero = !test_ids.empty();
  std::string codes;
  for (const auto& [name, code] : steps) {
    all_zero &= code == 0;
    codes += fmt(" %s=%d", name.c_str(), code);
  }
  if (!all_zero) std::cerr << testing::slurp(log).data() << "\n";
  return {all_zero && rows == 6 && secs <= 1800.0,
          fmt("exit codes:%s; report rows found %d/6; %.0f s (limit 1800 s)", codes.c_str(), rows, secs)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> gates{
      {"metric oracle", metric_oracle},
      {"attention correctness", attention_correctness},
      {"gradient check", gradient_check},
      {"MC dropout contract", mc_dropout_contract},
      {"overfit gate", overfit_gate},
      {"SSL directionality", ssl_directionality},
      {"determinism and round trips", determinism},
      {"pipeline smoke test", pipeline_smoke},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    selected.resize(gates.size());
    std::iota(selected.begin(), selected.end(), 1);
  }
  bool ok = true;
  for (int n : selected) {
    if (n < 1 || n > int(gates.size())) {
      std::cerr << "unknown criterion " << n << "\n";
      return 2;
    }
    const auto& [name, fn] = gates[std::size_t(n - 1)];
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    ok &= v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  [" << n << "] " << name << ": " << v.detail << std::endl;
  }
  return ok ? 0 : 1;
}
