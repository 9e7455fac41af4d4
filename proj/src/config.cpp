#include "fpemb/config.hpp"

#include <fstream>
#include <set>

#include "fpemb/common.hpp"
#include "fpemb/dataset.hpp"

namespace fpemb {

namespace {

// Strict field reader: every get() validates the JSON type and records the
// key so finish() can reject unknown ones.
class Fields {
 public:
  Fields(const nlohmann::json& j, std::string section)
      : j_(j), section_(std::move(section)) {
    FPEMB_CHECK(j_.is_object(), ErrorKind::kConfig,
                "config section '" + section_ + "' must be a JSON object");
  }

  void get(const char* key, double& out) {
    const nlohmann::json* v = take(key);
    if (!v) return;
    FPEMB_CHECK(v->is_number(), ErrorKind::kConfig, expect(key, "a number"));
    out = v->get<double>();
  }

  void get(const char* key, int& out) {
    const nlohmann::json* v = take(key);
    if (!v) return;
    FPEMB_CHECK(v->is_number_integer(), ErrorKind::kConfig,
                expect(key, "an integer"));
    out = v->get<int>();
  }

  void get(const char* key, std::uint64_t& out) {
    const nlohmann::json* v = take(key);
    if (!v) return;
    FPEMB_CHECK(v->is_number_integer() &&
                    (v->is_number_unsigned() || v->get<std::int64_t>() >= 0),
                ErrorKind::kConfig, expect(key, "a non-negative integer"));
    out = v->get<std::uint64_t>();
  }

  void get(const char* key, bool& out) {
    const nlohmann::json* v = take(key);
    if (!v) return;
    FPEMB_CHECK(v->is_boolean(), ErrorKind::kConfig, expect(key, "a boolean"));
    out = v->get<bool>();
  }

  void get(const char* key, std::string& out) {
    const nlohmann::json* v = take(key);
    if (!v) return;
    FPEMB_CHECK(v->is_string(), ErrorKind::kConfig, expect(key, "a string"));
    out = v->get<std::string>();
  }

  void get(const char* key, std::vector<int>& out) {
    const nlohmann::json* v = take(key);
    if (!v) return;
    FPEMB_CHECK(v->is_array(), ErrorKind::kConfig,
                expect(key, "an array of integers"));
    std::vector<int> parsed;
    for (const auto& item : *v) {
      FPEMB_CHECK(item.is_number_integer(), ErrorKind::kConfig,
                  expect(key, "an array of integers"));
      parsed.push_back(item.get<int>());
    }
    out = std::move(parsed);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      FPEMB_CHECK(seen_.count(it.key()) != 0, ErrorKind::kConfig,
                  "unknown config key '" + section_ + "." + it.key() + "'");
  }

 private:
  const nlohmann::json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string expect(const char* key, const char* what) const {
    return "config key '" + section_ + "." + key + "' must be " + what;
  }

  const nlohmann::json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["input_side"] = c.input_side;
  j["map_side"] = c.map_side;
  j["map_channels"] = c.map_channels;
  j["cl"] = c.cl;
  j["k"] = c.k;
  j["c_prime"] = c.c_prime;
  j["band_fraction"] = c.band_fraction;
  j["use_mam"] = c.use_mam;
  j["use_frequency"] = c.use_frequency;
  j["mask_from_ground_truth"] = c.mask_from_ground_truth;
  j["rotation_bound"] = c.rotation_bound;
  j["norm_groups"] = c.norm_groups;
  j["stem_channels"] = c.stem_channels;
  j["trunk_widths"] = c.trunk_widths;
  j["texture_widths"] = c.texture_widths;
  j["minutia_widths"] = c.minutia_widths;
  j["freq_stem_channels"] = c.freq_stem_channels;
  j["freq_widths"] = c.freq_widths;
  j["decoder_widths"] = c.decoder_widths;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  Fields f(j, "model");
  f.get("input_side", c.input_side);
  f.get("map_side", c.map_side);
  f.get("map_channels", c.map_channels);
  f.get("cl", c.cl);
  f.get("k", c.k);
  f.get("c_prime", c.c_prime);
  f.get("band_fraction", c.band_fraction);
  f.get("use_mam", c.use_mam);
  f.get("use_frequency", c.use_frequency);
  f.get("mask_from_ground_truth", c.mask_from_ground_truth);
  f.get("rotation_bound", c.rotation_bound);
  f.get("norm_groups", c.norm_groups);
  f.get("stem_channels", c.stem_channels);
  f.get("trunk_widths", c.trunk_widths);
  f.get("texture_widths", c.texture_widths);
  f.get("minutia_widths", c.minutia_widths);
  f.get("freq_stem_channels", c.freq_stem_channels);
  f.get("freq_widths", c.freq_widths);
  f.get("decoder_widths", c.decoder_widths);
  f.finish();
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["lr_features"] = c.lr_features;
  j["lr_stn"] = c.lr_stn;
  j["weight_decay"] = c.weight_decay;
  j["lambda_map"] = c.lambda_map;
  j["rho"] = c.rho;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["use_frequency"] = c.use_frequency;
  j["use_adacos"] = c.use_adacos;
  j["use_augment"] = c.use_augment;
  j["use_mam"] = c.use_mam;
  j["enhance"] = c.enhance;
  j["checkpoint_dir"] = c.checkpoint_dir;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  Fields f(j, "train");
  f.get("lr_features", c.lr_features);
  f.get("lr_stn", c.lr_stn);
  f.get("weight_decay", c.weight_decay);
  f.get("lambda_map", c.lambda_map);
  f.get("rho", c.rho);
  f.get("batch_size", c.batch_size);
  f.get("epochs", c.epochs);
  f.get("seed", c.seed);
  f.get("use_frequency", c.use_frequency);
  f.get("use_adacos", c.use_adacos);
  f.get("use_augment", c.use_augment);
  f.get("use_mam", c.use_mam);
  f.get("enhance", c.enhance);
  f.get("checkpoint_dir", c.checkpoint_dir);
  f.finish();
  return c;
}

nlohmann::json augment_config_to_json(const AugmentConfig& c) {
  nlohmann::json j;
  j["p_contrast"] = c.p_contrast;
  j["p_noise"] = c.p_noise;
  j["p_deform"] = c.p_deform;
  j["p_morph"] = c.p_morph;
  j["gamma_min"] = c.gamma_min;
  j["gamma_max"] = c.gamma_max;
  j["gain_min"] = c.gain_min;
  j["gain_max"] = c.gain_max;
  j["noise_sigma_min"] = c.noise_sigma_min;
  j["noise_sigma_max"] = c.noise_sigma_max;
  j["morph_area_min"] = c.morph_area_min;
  j["morph_area_max"] = c.morph_area_max;
  j["deform_inner"] = c.deform_inner;
  j["deform_outer"] = c.deform_outer;
  j["deform_max_shift"] = c.deform_max_shift;
  j["deform_max_rotate"] = c.deform_max_rotate;
  return j;
}

AugmentConfig augment_config_from_json(const nlohmann::json& j) {
  AugmentConfig c;
  Fields f(j, "augment");
  f.get("p_contrast", c.p_contrast);
  f.get("p_noise", c.p_noise);
  f.get("p_deform", c.p_deform);
  f.get("p_morph", c.p_morph);
  f.get("gamma_min", c.gamma_min);
  f.get("gamma_max", c.gamma_max);
  f.get("gain_min", c.gain_min);
  f.get("gain_max", c.gain_max);
  f.get("noise_sigma_min", c.noise_sigma_min);
  f.get("noise_sigma_max", c.noise_sigma_max);
  f.get("morph_area_min", c.morph_area_min);
  f.get("morph_area_max", c.morph_area_max);
  f.get("deform_inner", c.deform_inner);
  f.get("deform_outer", c.deform_outer);
  f.get("deform_max_shift", c.deform_max_shift);
  f.get("deform_max_rotate", c.deform_max_rotate);
  f.finish();
  return c;
}

nlohmann::json synth_spec_to_json(const SynthSpec& s) {
  nlohmann::json j;
  j["side"] = s.side;
  j["freq_min"] = s.freq_min;
  j["freq_max"] = s.freq_max;
  j["minutia_count"] = s.minutia_count;
  j["warp_terms"] = s.warp_terms;
  j["warp_amp"] = s.warp_amp;
  j["allow_core"] = s.allow_core;
  j["notch_sigma"] = s.notch_sigma;
  j["jitter_rotation"] = s.jitter_rotation;
  j["jitter_translation"] = s.jitter_translation;
  j["jitter_phase"] = s.jitter_phase;
  j["contrast_jitter"] = s.contrast_jitter;
  return j;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  Fields f(j, "synth");
  f.get("side", s.side);
  f.get("freq_min", s.freq_min);
  f.get("freq_max", s.freq_max);
  f.get("minutia_count", s.minutia_count);
  f.get("warp_terms", s.warp_terms);
  f.get("warp_amp", s.warp_amp);
  f.get("allow_core", s.allow_core);
  f.get("notch_sigma", s.notch_sigma);
  f.get("jitter_rotation", s.jitter_rotation);
  f.get("jitter_translation", s.jitter_translation);
  f.get("jitter_phase", s.jitter_phase);
  f.get("contrast_jitter", s.contrast_jitter);
  f.finish();
  return s;
}

namespace {

DataConfig data_config_from_json(const nlohmann::json& j) {
  DataConfig c;
  Fields f(j, "data");
  f.get("root", c.root);
  f.get("layout", c.layout);
  f.get("val_impressions", c.val_impressions);
  f.get("fingers", c.fingers);
  f.get("impressions", c.impressions);
  f.get("seed", c.seed);
  f.finish();
  return c;
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  Fields f(j, "eval");
  f.get("protocol", c.protocol);
  f.finish();
  return c;
}

}  // namespace

AppConfig app_config_from_json(const nlohmann::json& j) {
  FPEMB_CHECK(j.is_object(), ErrorKind::kConfig,
              "config root must be a JSON object");
  static const std::set<std::string> sections{"model", "train", "augment",
                                              "data",  "eval",  "synth"};
  for (auto it = j.begin(); it != j.end(); ++it)
    FPEMB_CHECK(sections.count(it.key()) != 0, ErrorKind::kConfig,
                "unknown config section '" + it.key() + "'");
  AppConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("augment"))
    c.augment = augment_config_from_json(j.at("augment"));
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
  if (j.contains("eval")) c.eval = eval_config_from_json(j.at("eval"));
  if (j.contains("synth")) c.synth = synth_spec_from_json(j.at("synth"));
  return c;
}

nlohmann::json app_config_to_json(const AppConfig& c) {
  nlohmann::json j;
  j["model"] = model_config_to_json(c.model);
  j["train"] = train_config_to_json(c.train);
  j["augment"] = augment_config_to_json(c.augment);
  j["data"] = {{"root", c.data.root},
               {"layout", c.data.layout},
               {"val_impressions", c.data.val_impressions},
               {"fingers", c.data.fingers},
               {"impressions", c.data.impressions},
               {"seed", c.data.seed}};
  j["eval"] = {{"protocol", c.eval.protocol}};
  j["synth"] = synth_spec_to_json(c.synth);
  return j;
}

AppConfig load_app_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    FPEMB_CHECK(in.good(), ErrorKind::kInput,
                "cannot open config file: " + path);
    j = nlohmann::json::parse(in, nullptr, false);
    FPEMB_CHECK(!j.is_discarded(), ErrorKind::kConfig,
                "config file is not valid JSON: " + path);
  }
  for (const auto& [key, raw] : overrides) {
    FPEMB_CHECK(!key.empty() && key.front() != '.' && key.back() != '.',
                ErrorKind::kConfig, "bad override key '" + key + "'");
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded() || value.is_object() || value.is_null())
      value = raw;  // unquoted strings like "molf" arrive here
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
      std::size_t dot = key.find('.', start);
      std::string part = key.substr(start, dot - start);
      FPEMB_CHECK(!part.empty(), ErrorKind::kConfig,
                  "bad override key '" + key + "'");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      nlohmann::json& next = (*node)[part];
      if (next.is_null()) next = nlohmann::json::object();
      FPEMB_CHECK(next.is_object(), ErrorKind::kConfig,
                  "override '" + key + "' descends into a non-object");
      node = &next;
      start = dot + 1;
    }
  }
  return app_config_from_json(j);
}

DatasetIndex dataset_from_config(const AppConfig& config) {
  DatasetLayout layout = dataset_layout_from_name(config.data.layout);
  if (layout == DatasetLayout::kSynthetic) {
    FPEMB_CHECK(config.data.fingers > 0 && config.data.impressions > 0,
                ErrorKind::kConfig,
                "synthetic data needs positive data.fingers and "
                "data.impressions");
    return make_synthetic_index(config.data.fingers, config.data.impressions,
                                config.data.seed, config.synth);
  }
  FPEMB_CHECK(!config.data.root.empty(), ErrorKind::kConfig,
              "data.root is required for on-disk datasets");
  return load_dataset(config.data.root, layout);
}

}  // namespace fpemb
