#include "mcswin/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mcswin/error.hpp"

namespace mcswin {
namespace {

using nlohmann::json;

// Reads fields of one JSON object, remembering which keys were consumed so that
// leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void field(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    read(*it, out, child(key));
  }

  template <typename Fn>
  void object(const char* key, Fn&& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    ObjectReader sub(*it, child(key));
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key: " + child(it.key().c_str()));
  }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  static void read(const json& v, double& out, const std::string& p) {
    if (!v.is_number()) throw ConfigError(p + ": expected a number");
    out = v.get<double>();
  }
  static void read(const json& v, int& out, const std::string& p) {
    if (!v.is_number_integer()) throw ConfigError(p + ": expected an integer");
    out = v.get<int>();
  }
  static void read(const json& v, std::int64_t& out, const std::string& p) {
    if (!v.is_number_integer()) throw ConfigError(p + ": expected an integer");
    out = v.get<std::int64_t>();
  }
  static void read(const json& v, std::uint64_t& out, const std::string& p) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(p + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void read(const json& v, bool& out, const std::string& p) {
    if (!v.is_boolean()) throw ConfigError(p + ": expected a boolean");
    out = v.get<bool>();
  }
  static void read(const json& v, std::string& out, const std::string& p) {
    if (!v.is_string()) throw ConfigError(p + ": expected a string");
    out = v.get<std::string>();
  }
  template <typename T, std::size_t N>
  static void read(const json& v, std::array<T, N>& out, const std::string& p) {
    if (!v.is_array() || v.size() != N) throw ConfigError(p + ": expected an array of " + std::to_string(N));
    for (std::size_t i = 0; i < N; ++i) read(v[i], out[i], p + "[" + std::to_string(i) + "]");
  }
  template <typename T>
  static void read(const json& v, std::vector<T>& out, const std::string& p) {
    if (!v.is_array()) throw ConfigError(p + ": expected an array");
    out.assign(v.size(), T{});
    for (std::size_t i = 0; i < v.size(); ++i) read(v[i], out[i], p + "[" + std::to_string(i) + "]");
  }
  static void read(const json& v, Range& out, const std::string& p) {
    std::array<double, 2> a{};
    read(v, a, p);
    out = {a[0], a[1]};
  }
  static void read(const json& v, Shape3& out, const std::string& p) {
    std::array<std::int64_t, 3> a{};
    read(v, a, p);
    out = {a[0], a[1], a[2]};
  }
  static void read(const json& v, Spacing& out, const std::string& p) {
    std::array<double, 3> a{};
    read(v, a, p);
    out = {a[0], a[1], a[2]};
  }
  static void read(const json& v, std::optional<Spacing>& out, const std::string& p) {
    if (v.is_null()) {
      out.reset();
      return;
    }
    Spacing s;
    read(v, s, p);
    out = s;
  }
  static void read(const json& v, HeadActivation& out, const std::string& p) {
    if (v == "sigmoid") out = HeadActivation::Sigmoid;
    else if (v == "softmax") out = HeadActivation::Softmax;
    else throw ConfigError(p + ": expected \"sigmoid\" or \"softmax\"");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_intensity(ObjectReader& r, const char* key, StructureIntensity& s) {
  r.object(key, [&](ObjectReader& o) {
    o.field("mean", s.mean);
    o.field("texture_stddev", s.texture_stddev);
  });
}

void read_phantom(ObjectReader& r, PhantomSpec& p) {
  r.field("shape", p.shape);
  r.field("spacing", p.spacing);
  r.field("lung_semi_axes", p.lung_semi_axes);
  r.field("lung_jitter", p.lung_jitter);
  r.field("cord_radius", p.cord_radius);
  r.field("esophagus_radius", p.esophagus_radius);
  std::array<double, 2> tumor{p.tumor_radius_min, p.tumor_radius_max};
  r.field("tumor_radius", tumor);
  p.tumor_radius_min = tumor[0];
  p.tumor_radius_max = tumor[1];
  r.object("intensity", [&](ObjectReader& o) {
    read_intensity(o, "air", p.air);
    read_intensity(o, "tissue", p.tissue);
    read_intensity(o, "bone", p.bone);
    read_intensity(o, "lung", p.lung);
    read_intensity(o, "cord", p.cord);
    read_intensity(o, "esophagus", p.esophagus);
    read_intensity(o, "tumor", p.tumor);
  });
  r.field("noise_stddev", p.noise_stddev);
}

void read_model(ObjectReader& r, ModelConfig& m) {
  r.field("in_channels", m.in_channels);
  r.field("num_classes", m.num_classes);
  r.field("patch_size", m.patch_size);
  r.field("embed_dim", m.embed_dim);
  r.field("depths", m.depths);
  r.field("heads", m.heads);
  r.field("window", m.window);
  r.field("mlp_ratio", m.mlp_ratio);
  r.field("dropout", m.dropout);
  r.field("input_shape", m.input_shape);
  r.field("head", m.head);
}

void read_optimizer(ObjectReader& r, OptimizerConfig& o) {
  r.field("lr", o.lr);
  r.field("weight_decay", o.weight_decay);
  r.field("beta1", o.beta1);
  r.field("beta2", o.beta2);
  r.field("eps", o.eps);
  r.field("warmup", o.warmup);
}

void read_augment(ObjectReader& r, AugmentConfig& a) {
  r.field("p_scale", a.p_scale);
  r.field("scale", a.scale);
  r.field("p_shift", a.p_shift);
  r.field("shift", a.shift);
  r.field("p_crop", a.p_crop);
  r.field("crop_margin", a.crop_margin);
  r.field("p_affine", a.p_affine);
  r.field("rotation_deg", a.rotation_deg);
  r.field("zoom", a.zoom);
  r.field("translation", a.translation);
  r.field("p_elastic", a.p_elastic);
  r.field("elastic_grid_spacing", a.elastic_grid_spacing);
  r.field("elastic_max_displacement", a.elastic_max_displacement);
  r.field("p_noise", a.p_noise);
  r.field("noise_stddev", a.noise_stddev);
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }
json spacing_json(const Spacing& s) { return json::array({s.z, s.y, s.x}); }
json intensity_json(const StructureIntensity& s) {
  return {{"mean", s.mean}, {"texture_stddev", s.texture_stddev}};
}

json model_json(const ModelConfig& m) {
  return {{"in_channels", m.in_channels},
          {"num_classes", m.num_classes},
          {"patch_size", m.patch_size},
          {"embed_dim", m.embed_dim},
          {"depths", m.depths},
          {"heads", m.heads},
          {"window", m.window},
          {"mlp_ratio", m.mlp_ratio},
          {"dropout", m.dropout},
          {"input_shape", m.input_shape},
          {"head", m.head == HeadActivation::Sigmoid ? "sigmoid" : "softmax"}};
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"lr", o.lr}, {"weight_decay", o.weight_decay}, {"beta1", o.beta1},
          {"beta2", o.beta2}, {"eps", o.eps}, {"warmup", o.warmup}};
}

// Wraps ValidationError from nested validators so every load failure is a
// configuration error.
template <typename Fn>
void as_config_error(Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  } catch (const GenerationError& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.validate_every < 1) throw ValidationError("train.validate_every must be >= 1");
  if (c.iterations < c.validate_every)
    throw ValidationError("train.iterations must be >= train.validate_every");
  if (c.batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (!(c.optimizer.lr > 0.0)) throw ValidationError("train.optimizer.lr must be > 0");
  if (c.optimizer.warmup < 0) throw ValidationError("train.optimizer.warmup must be >= 0");
  if (!(c.fg_bias >= 0.0 && c.fg_bias <= 1.0)) throw ValidationError("train.fg_bias must lie in [0, 1]");
  if (!(c.dice_weight >= 0.0 && c.ce_weight >= 0.0) || c.dice_weight + c.ce_weight <= 0.0)
    throw ValidationError("train loss weights must be >= 0 and not both 0");
  if (!(c.val_overlap >= 0.0 && c.val_overlap <= 0.9))
    throw ValidationError("train.val_overlap must lie in [0, 0.9]");
  if (c.init.empty()) throw ValidationError("train.init must be \"random\" or a checkpoint path");
}

void validate(const PretrainConfig& c) {
  if (c.iterations < 1) throw ValidationError("pretrain.iterations must be >= 1");
  if (c.batch_size < 1) throw ValidationError("pretrain.batch_size must be >= 1");
  if (!(c.optimizer.lr > 0.0)) throw ValidationError("pretrain.optimizer.lr must be > 0");
  if (!(c.temperature > 0.0)) throw ValidationError("pretrain.temperature must be > 0");
  if (!(c.lambda_rot >= 0.0 && c.lambda_inpaint >= 0.0 && c.lambda_contrast >= 0.0))
    throw ValidationError("pretrain loss weights must be >= 0");
  if (!(c.cutout_fraction >= 0.1 && c.cutout_fraction <= 0.5))
    throw ValidationError("pretrain.cutout_fraction must lie in [0.1, 0.5]");
  if (c.projection_dim < 1) throw ValidationError("pretrain.projection_dim must be >= 1");
  if (c.rotation_axes.empty()) throw ValidationError("pretrain.rotation_axes must not be empty");
  for (int a : c.rotation_axes)
    if (a < 0 || a > 2) throw ValidationError("pretrain.rotation_axes entries must be 0, 1 or 2");
  if (c.lambda_contrast > 0.0 && c.batch_size < 2)
    throw ValidationError("contrastive loss needs pretrain.batch_size >= 2 (no negatives otherwise)");
}

void validate(const McConfig& c) {
  if (c.samples < 1 || c.samples > 255) throw ValidationError("mc.samples must lie in 1..255");
  if (c.threshold < 1 || c.threshold > c.samples) throw ValidationError("mc.threshold must lie in 1..samples");
  if (!(c.overlap >= 0.0 && c.overlap <= 0.9)) throw ValidationError("mc.overlap must lie in [0, 0.9]");
}

void validate(const GlobalConfig& c) {
  validate(c.data.phantom);
  validate(c.data.split);
  validate(c.model);
  validate(c.augment);
  validate(c.pretrain);
  validate(c.train);
  validate(c.mc);
  if (c.eval.spacing && !(c.eval.spacing->z > 0 && c.eval.spacing->y > 0 && c.eval.spacing->x > 0))
    throw ValidationError("eval.spacing must be positive");
}

GlobalConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  GlobalConfig c;
  ObjectReader root(j, "");
  root.object("data", [&](ObjectReader& r) {
    r.field("seed", c.data.seed);
    r.object("split", [&](ObjectReader& s) {
      s.field("train", c.data.split.train);
      s.field("val", c.data.split.val);
      s.field("test", c.data.split.test);
    });
    r.object("phantom", [&](ObjectReader& p) { read_phantom(p, c.data.phantom); });
  });
  root.object("model", [&](ObjectReader& r) { read_model(r, c.model); });
  root.object("augment", [&](ObjectReader& r) { read_augment(r, c.augment); });
  root.object("pretrain", [&](ObjectReader& r) {
    r.field("iterations", c.pretrain.iterations);
    r.field("batch_size", c.pretrain.batch_size);
    r.object("optimizer", [&](ObjectReader& o) { read_optimizer(o, c.pretrain.optimizer); });
    r.field("temperature", c.pretrain.temperature);
    r.field("lambda_rot", c.pretrain.lambda_rot);
    r.field("lambda_inpaint", c.pretrain.lambda_inpaint);
    r.field("lambda_contrast", c.pretrain.lambda_contrast);
    r.field("cutout_fraction", c.pretrain.cutout_fraction);
    r.field("cutout_fill", c.pretrain.cutout_fill);
    r.field("projection_dim", c.pretrain.projection_dim);
    r.field("rotation_axes", c.pretrain.rotation_axes);
    r.field("dropout", c.pretrain.dropout);
    r.field("seed", c.pretrain.seed);
  });
  root.object("train", [&](ObjectReader& r) {
    r.field("iterations", c.train.iterations);
    r.field("validate_every", c.train.validate_every);
    r.field("batch_size", c.train.batch_size);
    r.object("optimizer", [&](ObjectReader& o) { read_optimizer(o, c.train.optimizer); });
    r.field("fg_bias", c.train.fg_bias);
    r.field("dice_weight", c.train.dice_weight);
    r.field("ce_weight", c.train.ce_weight);
    r.field("val_overlap", c.train.val_overlap);
    r.field("augment", c.train.augment);
    r.field("seed", c.train.seed);
    r.field("init", c.train.init);
  });
  root.object("mc", [&](ObjectReader& r) {
    r.field("samples", c.mc.samples);
    r.field("threshold", c.mc.threshold);
    r.field("overlap", c.mc.overlap);
    r.field("seed", c.mc.seed);
  });
  root.object("eval", [&](ObjectReader& r) { r.field("spacing", c.eval.spacing); });
  root.finish();
  as_config_error([&] { validate(c); });
  return c;
}

GlobalConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const GlobalConfig& c) {
  const auto& p = c.data.phantom;
  const auto& a = c.augment;
  json j;
  j["data"] = {
      {"seed", c.data.seed},
      {"split", {{"train", c.data.split.train}, {"val", c.data.split.val}, {"test", c.data.split.test}}},
      {"phantom",
       {{"shape", json::array({p.shape.d, p.shape.h, p.shape.w})},
        {"spacing", spacing_json(p.spacing)},
        {"lung_semi_axes", p.lung_semi_axes},
        {"lung_jitter", p.lung_jitter},
        {"cord_radius", p.cord_radius},
        {"esophagus_radius", p.esophagus_radius},
        {"tumor_radius", json::array({p.tumor_radius_min, p.tumor_radius_max})},
        {"intensity",
         {{"air", intensity_json(p.air)},
          {"tissue", intensity_json(p.tissue)},
          {"bone", intensity_json(p.bone)},
          {"lung", intensity_json(p.lung)},
          {"cord", intensity_json(p.cord)},
          {"esophagus", intensity_json(p.esophagus)},
          {"tumor", intensity_json(p.tumor)}}},
        {"noise_stddev", p.noise_stddev}}}};
  j["model"] = model_json(c.model);
  j["augment"] = {{"p_scale", a.p_scale},
                  {"scale", range_json(a.scale)},
                  {"p_shift", a.p_shift},
                  {"shift", range_json(a.shift)},
                  {"p_crop", a.p_crop},
                  {"crop_margin", a.crop_margin},
                  {"p_affine", a.p_affine},
                  {"rotation_deg", json::array({range_json(a.rotation_deg[0]), range_json(a.rotation_deg[1]),
                                                range_json(a.rotation_deg[2])})},
                  {"zoom", range_json(a.zoom)},
                  {"translation", range_json(a.translation)},
                  {"p_elastic", a.p_elastic},
                  {"elastic_grid_spacing", a.elastic_grid_spacing},
                  {"elastic_max_displacement", a.elastic_max_displacement},
                  {"p_noise", a.p_noise},
                  {"noise_stddev", a.noise_stddev}};
  j["pretrain"] = {{"iterations", c.pretrain.iterations},
                   {"batch_size", c.pretrain.batch_size},
                   {"optimizer", optimizer_json(c.pretrain.optimizer)},
                   {"temperature", c.pretrain.temperature},
                   {"lambda_rot", c.pretrain.lambda_rot},
                   {"lambda_inpaint", c.pretrain.lambda_inpaint},
                   {"lambda_contrast", c.pretrain.lambda_contrast},
                   {"cutout_fraction", c.pretrain.cutout_fraction},
                   {"cutout_fill", c.pretrain.cutout_fill},
                   {"projection_dim", c.pretrain.projection_dim},
                   {"rotation_axes", c.pretrain.rotation_axes},
                   {"dropout", c.pretrain.dropout},
                   {"seed", c.pretrain.seed}};
  j["train"] = {{"iterations", c.train.iterations},
                {"validate_every", c.train.validate_every},
                {"batch_size", c.train.batch_size},
                {"optimizer", optimizer_json(c.train.optimizer)},
                {"fg_bias", c.train.fg_bias},
                {"dice_weight", c.train.dice_weight},
                {"ce_weight", c.train.ce_weight},
                {"val_overlap", c.train.val_overlap},
                {"augment", c.train.augment},
                {"seed", c.train.seed},
                {"init", c.train.init}};
  j["mc"] = {{"samples", c.mc.samples}, {"threshold", c.mc.threshold}, {"overlap", c.mc.overlap},
             {"seed", c.mc.seed}};
  j["eval"] = {{"spacing", c.eval.spacing ? spacing_json(*c.eval.spacing) : json(nullptr)}};
  return j.dump(2);
}

std::string model_config_to_json(const ModelConfig& c) { return model_json(c).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig m;
  ObjectReader r(j, "model");
  read_model(r, m);
  r.finish();
  as_config_error([&] { validate(m); });
  return m;
}

}  // namespace mcswin
