#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mcswin/checkpoint.hpp"
#include "mcswin/config.hpp"
#include "mcswin/error.hpp"
#include "mcswin/inference.hpp"
#include "mcswin/metrics.hpp"
#include "mcswin/mvol.hpp"
#include "mcswin/phantom.hpp"
#include "mcswin/rng.hpp"
#include "mcswin/split.hpp"
#include "mcswin/ssl.hpp"
#include "mcswin/train.hpp"
#include "mcswin/uncertainty.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mcswin;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Manifest {
  std::vector<std::string> ids;
  DatasetSplit split;
};

std::string case_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03d", i);
  return buf;
}

fs::path image_path(const fs::path& dir, const std::string& id) { return dir / (id + "_image.mvol"); }
fs::path label_path(const fs::path& dir, const std::string& id) { return dir / (id + "_label.mvol"); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

Manifest read_manifest(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir.string());
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("missing manifest: " + path.string());
  Manifest m;
  try {
    const auto j = json::parse(in);
    m.ids = j.at("ids").get<std::vector<std::string>>();
    m.split.train = j.at("split").at("train").get<std::vector<std::string>>();
    m.split.val = j.at("split").at("val").get<std::vector<std::string>>();
    m.split.test = j.at("split").at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

std::vector<LabeledCase> load_cases(const fs::path& dir, const std::vector<std::string>& ids) {
  std::vector<LabeledCase> cases;
  for (const auto& id : ids) {
    LabeledCase c{id, read_intensity(image_path(dir, id).string()), read_labels(label_path(dir, id).string())};
    require_paired(c.image, c.labels);
    cases.push_back(std::move(c));
  }
  return cases;
}

GlobalConfig load_or_default(const std::string& path) { return path.empty() ? GlobalConfig{} : load_config(path); }

// Re-validates after flag overrides so that bad flag values surface as config errors.
void revalidate(const GlobalConfig& c) {
  try {
    validate(c);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  } catch (const GenerationError& e) {
    throw ConfigError(e.what());
  }
}

int cmd_phantom(const std::string& config_path, const std::string& out, int count, std::optional<std::uint64_t> seed) {
  auto c = load_or_default(config_path);
  if (seed) c.data.seed = *seed;
  revalidate(c);
  if (count < 1) throw ConfigError("--count must be at least 1");
  const fs::path dir(out);
  ensure_dir(dir);
  std::vector<std::string> ids;
  for (int i = 0; i < count; ++i) {
    const auto id = case_id(i);
    auto [volume, labels] = generate_phantom(c.data.phantom, derive_stream(c.data.seed, static_cast<std::uint64_t>(i)));
    write_volume(image_path(dir, id).string(), volume);
    write_volume(label_path(dir, id).string(), labels);
    ids.push_back(id);
  }
  const auto split = split_dataset(ids, c.data.split, c.data.seed);
  json j;
  j["ids"] = ids;
  j["seed"] = c.data.seed;
  j["split"] = {{"train", split.train}, {"val", split.val}, {"test", split.test}};
  write_text(dir / "manifest.json", j.dump(2) + "\n");
  std::cout << "wrote " << count << " phantoms to " << dir.string() << " (train " << split.train.size() << ", val "
            << split.val.size() << ", test " << split.test.size() << ")\n";
  return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& data, const std::string& out,
                 std::optional<int> iterations, std::optional<std::uint64_t> seed) {
  auto c = load_or_default(config_path);
  if (iterations) c.pretrain.iterations = *iterations;
  if (seed) c.pretrain.seed = *seed;
  revalidate(c);
  const auto manifest = read_manifest(data);
  std::vector<Volume> volumes;
  for (const auto& id : manifest.split.train) volumes.push_back(read_intensity(image_path(data, id).string()));
  ensure_parent(out);
  auto result = pretrain(volumes, c.model, c.pretrain, &std::cout, out + ".lastgood");
  save_checkpoint(result.state, out);
  write_text(out + ".loss.csv", result.curve_csv());
  const auto& first = result.curve.front();
  const auto& last = result.curve.back();
  std::cout << "pretrained checkpoint " << out << "  L_total " << first.total << " -> " << last.total << "\n";
  return kExitOk;
}

int cmd_finetune(const std::string& config_path, const std::string& data, const std::string& init,
                 const std::string& out, std::optional<int> iterations, std::optional<int> validate_every,
                 std::optional<std::uint64_t> seed) {
  auto c = load_or_default(config_path);
  if (!init.empty()) c.train.init = init;
  if (iterations) c.train.iterations = *iterations;
  if (validate_every) c.train.validate_every = *validate_every;
  if (seed) c.train.seed = *seed;
  revalidate(c);
  if (c.train.init != "random" && !fs::exists(c.train.init))
    throw IoError("initial checkpoint not found: " + c.train.init);
  const auto manifest = read_manifest(data);
  if (manifest.split.train.empty()) throw ValidationError("manifest has no training cases");
  if (manifest.split.val.empty()) throw ValidationError("manifest has no validation cases");
  const auto train_set = load_cases(data, manifest.split.train);
  const auto val_set = load_cases(data, manifest.split.val);
  ensure_parent(out);
  const auto augment = c.train.augment ? c.augment : AugmentConfig{};
  auto result = finetune(train_set, val_set, c.model, c.train, augment, &std::cout);
  save_checkpoint(result.best, out);
  write_text(out + ".train.csv", result.log.loss_csv());
  write_text(out + ".val.csv", result.log.validation_csv());
  std::cout << "best checkpoint " << out << "  iteration " << result.log.best_iteration << "  val dice "
            << result.log.best_dice << "\n";
  return kExitOk;
}

int cmd_predict(const std::string& config_path, const std::string& ckpt, const std::string& in, const std::string& out,
                std::optional<int> samples, std::optional<int> threshold, std::optional<std::uint64_t> seed) {
  auto c = load_or_default(config_path);
  if (samples) c.mc.samples = *samples;
  if (threshold) c.mc.threshold = *threshold;
  if (seed) c.mc.seed = *seed;
  revalidate(c);
  const auto state = load_checkpoint(ckpt);
  const auto volume = read_intensity(in);
  const Shape3 patch{state.config.input_shape[0], state.config.input_shape[1], state.config.input_shape[2]};
  const auto stack = mc_predict(state, volume, c.mc.samples, c.mc.seed, patch, c.mc.overlap);
  const auto map = vote(stack, c.mc.threshold);
  ensure_dir(out);
  const auto files = export_uncertainty(map, (fs::path(out) / "").string());
  std::int64_t uncertain = 0;
  for (auto v : map.uncertain.data) uncertain += v;
  std::cout << "T=" << c.mc.samples << " k=" << c.mc.threshold << "  uncertain voxels " << uncertain << " / "
            << map.uncertain.data.size() << "\nwrote " << files.consensus << ", " << files.agreement << ", "
            << files.uncertain << " and " << files.slices.size() << " heatmap slices\n";
  return kExitOk;
}

std::optional<fs::path> find_prediction(const fs::path& pred, const std::string& id) {
  for (const auto& p : {label_path(pred, id), pred / id / "consensus.mvol"})
    if (fs::is_regular_file(p)) return p;
  return std::nullopt;
}

int cmd_evaluate(const std::string& config_path, const std::string& pred, const std::string& gt,
                 const std::string& out) {
  const auto c = load_or_default(config_path);
  if (!fs::is_directory(gt)) throw IoError("ground-truth directory not found: " + gt);
  if (!fs::is_directory(pred)) throw IoError("prediction directory not found: " + pred);
  std::vector<std::string> gt_ids;
  const std::string suffix = "_label.mvol";
  for (const auto& entry : fs::directory_iterator(gt)) {
    const auto name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      gt_ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(gt_ids.begin(), gt_ids.end());

  std::vector<std::string> ids, skipped, errors;
  std::vector<LabelMap> preds, gts;
  for (const auto& id : gt_ids) {
    const auto p = find_prediction(pred, id);
    if (!p) {
      skipped.push_back(id);
      continue;
    }
    try {
      auto pm = read_labels(p->string());
      auto gm = read_labels(label_path(gt, id).string());
      if (!(pm.shape == gm.shape)) {
        errors.push_back(id + ": prediction shape differs from ground truth");
        continue;
      }
      ids.push_back(id);
      preds.push_back(std::move(pm));
      gts.push_back(std::move(gm));
    } catch (const Error& e) {
      errors.push_back(id + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "error: " << e << "\n";
    throw ValidationError(std::to_string(errors.size()) + " case(s) could not be evaluated");
  }
  if (ids.empty()) throw ValidationError("no predictions found for any ground-truth case");
  if (!skipped.empty()) std::cerr << "skipped " << skipped.size() << " case(s) without a prediction\n";
  const auto report = evaluate(ids, preds, gts, c.eval.spacing);
  ensure_parent(out);
  write_text(out, report.to_csv());
  std::cout << report.to_table();
  return kExitOk;
}

int cmd_config(const std::string& config_path) {
  std::cout << dump_config(load_or_default(config_path));
  return kExitOk;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MC-Swin-U: 3D Swin U-Net segmentation with self-supervised pre-training and MC dropout"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mcswin 0.1.0");

  std::string config_path;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config (defaults used when omitted)")->check(CLI::ExistingFile);
  };

  auto* phantom = app.add_subcommand("phantom", "Generate labelled thoracic phantoms and a split manifest");
  add_config(phantom);
  std::string phantom_out;
  int count = 0;
  std::optional<std::uint64_t> phantom_seed;
  phantom->add_option("--out", phantom_out, "Output directory")->required();
  phantom->add_option("--count", count, "Number of phantoms")->required();
  phantom->add_option("--seed", phantom_seed, "Overrides data.seed");

  auto* pre = app.add_subcommand("pretrain", "Self-supervised encoder pre-training on the training split images");
  add_config(pre);
  std::string pre_data, pre_out;
  std::optional<int> pre_iterations;
  std::optional<std::uint64_t> pre_seed;
  pre->add_option("--data", pre_data, "Phantom directory with manifest.json")->required();
  pre->add_option("--out", pre_out, "Output checkpoint")->required();
  pre->add_option("--iterations", pre_iterations, "Overrides pretrain.iterations");
  pre->add_option("--seed", pre_seed, "Overrides pretrain.seed");

  auto* fine = app.add_subcommand("finetune", "Supervised segmentation training with best-checkpoint selection");
  add_config(fine);
  std::string fine_data, fine_init, fine_out;
  std::optional<int> fine_iterations, fine_validate_every;
  std::optional<std::uint64_t> fine_seed;
  fine->add_option("--data", fine_data, "Phantom directory with manifest.json")->required();
  fine->add_option("--init", fine_init, "'random' or a pre-trained checkpoint (overrides train.init)");
  fine->add_option("--out", fine_out, "Output checkpoint (best validation Dice)")->required();
  fine->add_option("--iterations", fine_iterations, "Overrides train.iterations");
  fine->add_option("--validate-every", fine_validate_every, "Overrides train.validate_every");
  fine->add_option("--seed", fine_seed, "Overrides train.seed");

  auto* predict = app.add_subcommand("predict", "Monte Carlo dropout prediction with uncertainty maps");
  add_config(predict);
  std::string ckpt, predict_in, predict_out;
  std::optional<int> samples, threshold;
  std::optional<std::uint64_t> predict_seed;
  predict->add_option("--ckpt", ckpt, "Trained checkpoint")->required();
  predict->add_option("--in", predict_in, "Input intensity volume (.mvol)")->required();
  predict->add_option("--out", predict_out, "Output directory")->required();
  predict->add_option("--mc-samples", samples, "Stochastic passes T (overrides mc.samples, default 10)");
  predict->add_option("--threshold", threshold, "Agreement threshold k (overrides mc.threshold, default 5)");
  predict->add_option("--seed", predict_seed, "Overrides mc.seed");

  auto* eval = app.add_subcommand("evaluate", "Dice and HD95 per case and per structure");
  add_config(eval);
  std::string eval_pred, eval_gt, eval_out;
  eval->add_option("--pred", eval_pred, "Predictions: <id>_label.mvol or <id>/consensus.mvol")->required();
  eval->add_option("--gt", eval_gt, "Ground truth directory with <id>_label.mvol")->required();
  eval->add_option("--out", eval_out, "Per-case CSV report")->required();

  auto* config = app.add_subcommand("config", "Print the effective configuration as JSON");
  add_config(config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*phantom) return cmd_phantom(config_path, phantom_out, count, phantom_seed);
    if (*pre) return cmd_pretrain(config_path, pre_data, pre_out, pre_iterations, pre_seed);
    if (*fine)
      return cmd_finetune(config_path, fine_data, fine_init, fine_out, fine_iterations, fine_validate_every, fine_seed);
    if (*predict) return cmd_predict(config_path, ckpt, predict_in, predict_out, samples, threshold, predict_seed);
    if (*eval) return cmd_evaluate(config_path, eval_pred, eval_gt, eval_out);
    if (*config) return cmd_config(config_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const c10::Error& e) {
    std::cerr << "error: " << e.what_without_backtrace() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
