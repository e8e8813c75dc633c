#include "mhal/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mhal {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: section '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + k + "' in section '" + name_ + "'");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }
  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  Section sub(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), name_ + "." + key);
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_schedule(Section s, ScheduleConfig& c) {
  s.get("ramp_max", c.ramp_max);
  s.get("ramp_sharpness", c.ramp_sharpness);
  s.get("horizon", c.horizon);
  s.get("warmup_epochs", c.warmup_epochs);
  s.get("peak_lr", c.peak_lr);
  s.get("inner_lr", c.inner_lr);
}

void read_unet(Section s, UNetConfig& c) {
  s.get("depth", c.depth);
  s.get("base_channels", c.base_channels);
  s.get("classes", c.classes);
  s.get("in_channels", c.in_channels);
  s.get("leaky_slope", c.leaky_slope);
}

void read_hal(Section s, HallucinatorConfig& c) {
  if (s.has("kind")) {
    std::string k;
    s.get("kind", k);
    if (k == "affine") c.kind = TransformKind::affine;
    else if (k == "dense") c.kind = TransformKind::dense;
    else throw ConfigError("config: train.hallucinator.kind must be 'affine' or 'dense', got '" + k + "'");
  }
  s.get("channels", c.channels);
  s.get("hidden", c.hidden);
  s.get("leaky_slope", c.leaky_slope);
  s.get("smoothness_weight", c.smoothness_weight);
  s.get("max_offset", c.max_offset);
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  {
    Section root(j, "<root>");
    if (root.has("data")) {
      auto s = root.sub("data");
      s.get("height", c.data.height);
      s.get("width", c.data.width);
      s.get("source_subjects", c.data.source_subjects);
      s.get("shots", c.data.shots);
      s.get("target_train", c.data.target_train);
      s.get("target_val", c.data.target_val);
      s.get("target_test", c.data.target_test);
      s.get("deformation", c.data.deformation);
      s.get("gamma", c.data.gamma);
      s.get("remap_intensity", c.data.remap_intensity);
      s.get("noise_sigma", c.data.noise_sigma);
      s.get("intensity_jitter", c.data.intensity_jitter);
      s.get("seed", c.data.seed);
      s.get("split_seed", c.split_seed);
    }
    if (root.has("train")) {
      auto s = root.sub("train");
      if (s.has("mode")) {
        std::string m;
        s.get("mode", m);
        try {
          c.train.mode = parse_mode(m);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("config: ") + e.what());
        }
      }
      s.get("epochs", c.train.epochs);
      s.get("train_pairs", c.train.train_pairs);
      s.get("test_pairs", c.train.test_pairs);
      s.get("labeled_batch", c.train.labeled_batch);
      s.get("unlabeled_batch", c.train.unlabeled_batch);
      s.get("augmented", c.train.augmented);
      s.get("ema_beta", c.train.ema_beta);
      s.get("second_order", c.train.second_order);
      s.get("hvp_eps", c.train.hvp_eps);
      s.get("noise_sigma", c.train.noise_sigma);
      s.get("rotation_degrees", c.train.rotation_degrees);
      s.get("divergence_threshold", c.train.divergence_threshold);
      s.get("checkpoint_every", c.train.checkpoint_every);
      s.get("evaluate_teacher", c.train.evaluate_teacher);
      s.get("seed", c.train.seed);
      if (s.has("schedule")) read_schedule(s.sub("schedule"), c.train.schedule);
      if (s.has("unet")) read_unet(s.sub("unet"), c.train.unet);
      if (s.has("hallucinator")) read_hal(s.sub("hallucinator"), c.train.hallucinator);
    }
    if (root.has("paths")) {
      auto s = root.sub("paths");
      s.get("data_dir", c.data_dir);
      s.get("run_dir", c.run_dir);
    }
  }
  c.train.hallucinator.height = c.data.height;
  c.train.hallucinator.width = c.data.width;
  try {
    c.data.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& c) {
  ordered_json j;
  const auto& d = c.data;
  j["data"] = {{"height", d.height},
               {"width", d.width},
               {"source_subjects", d.source_subjects},
               {"shots", d.shots},
               {"target_train", d.target_train},
               {"target_val", d.target_val},
               {"target_test", d.target_test},
               {"deformation", d.deformation},
               {"gamma", d.gamma},
               {"remap_intensity", d.remap_intensity},
               {"noise_sigma", d.noise_sigma},
               {"intensity_jitter", d.intensity_jitter},
               {"seed", d.seed},
               {"split_seed", c.split_seed}};
  const auto& t = c.train;
  ordered_json tr;
  tr["mode"] = mode_name(t.mode);
  tr["epochs"] = t.epochs;
  tr["train_pairs"] = t.train_pairs;
  tr["test_pairs"] = t.test_pairs;
  tr["labeled_batch"] = t.labeled_batch;
  tr["unlabeled_batch"] = t.unlabeled_batch;
  tr["augmented"] = t.augmented;
  tr["ema_beta"] = t.ema_beta;
  tr["second_order"] = t.second_order;
  tr["hvp_eps"] = t.hvp_eps;
  tr["noise_sigma"] = t.noise_sigma;
  tr["rotation_degrees"] = t.rotation_degrees;
  tr["divergence_threshold"] = t.divergence_threshold;
  tr["checkpoint_every"] = t.checkpoint_every;
  tr["evaluate_teacher"] = t.evaluate_teacher;
  tr["seed"] = t.seed;
  tr["schedule"] = {{"ramp_max", t.schedule.ramp_max},         {"ramp_sharpness", t.schedule.ramp_sharpness},
                    {"horizon", t.schedule.horizon},           {"warmup_epochs", t.schedule.warmup_epochs},
                    {"peak_lr", t.schedule.peak_lr},           {"inner_lr", t.schedule.inner_lr}};
  tr["unet"] = {{"depth", t.unet.depth},
                {"base_channels", t.unet.base_channels},
                {"classes", t.unet.classes},
                {"in_channels", t.unet.in_channels},
                {"leaky_slope", t.unet.leaky_slope}};
  tr["hallucinator"] = {{"kind", t.hallucinator.kind == TransformKind::affine ? "affine" : "dense"},
                        {"channels", t.hallucinator.channels},
                        {"hidden", t.hallucinator.hidden},
                        {"leaky_slope", t.hallucinator.leaky_slope},
                        {"smoothness_weight", t.hallucinator.smoothness_weight},
                        {"max_offset", t.hallucinator.max_offset}};
  j["train"] = tr;
  j["paths"] = {{"data_dir", c.data_dir}, {"run_dir", c.run_dir}};
  return j.dump(2) + "\n";
}

}  // namespace mhal
