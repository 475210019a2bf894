#include "elsnet/config.hpp"

#include <fstream>

#include "elsnet/checkpoint.hpp"

#ifndef ELSNET_VERSION
#define ELSNET_VERSION "0.0.0"
#endif

namespace elsnet {

using nlohmann::json;

std::string version_string() { return "v" ELSNET_VERSION; }

void HyperParams::validate() const {
  if (!(lr > 0.0)) throw ConfigError("trainer.lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("trainer.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("trainer.batch_size must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("trainer.tau must be positive");
  if (lambda_s < 0.0 || lambda_c < 0.0 || lambda_u < 0.0) throw ConfigError("trainer lambdas must be >= 0");
  if (steps_stage1 < 0 || steps_stage2 < 0) throw ConfigError("trainer stage lengths must be >= 0");
  if ((pcem_stage1 || pcem_stage2) && batch_size < 2)
    throw ConfigError("trainer.batch_size must be >= 2 when the contrastive loss is enabled");
  if (pcem_stage1 && !use_esm)
    throw ConfigError("trainer.pcem_stage1 needs trainer.use_esm: an exemplar-only batch has a single image");
  if (use_esm && synthetic_count < 1) throw ConfigError("trainer.synthetic_count must be >= 1 when ESM is on");
  if (checkpoint_every < 0) throw ConfigError("trainer.checkpoint_every must be >= 0");
}

pcem::PcemOptions HyperParams::pcem_options() const {
  return {tau, pcem_normalize, pcem_half_threshold, pcem_include_background};
}

void to_json(json& j, const HyperParams& h) {
  j = json{{"lr", h.lr},
           {"weight_decay", h.weight_decay},
           {"batch_size", h.batch_size},
           {"tau", h.tau},
           {"lambda_s", h.lambda_s},
           {"lambda_c", h.lambda_c},
           {"lambda_u", h.lambda_u},
           {"steps_stage1", h.steps_stage1},
           {"steps_stage2", h.steps_stage2},
           {"seed", h.seed},
           {"use_esm", h.use_esm},
           {"pcem_stage1", h.pcem_stage1},
           {"pcem_stage2", h.pcem_stage2},
           {"pseudo_labels", h.pseudo_labels},
           {"warm_start", h.warm_start},
           {"augment", h.augment},
           {"augment_rotation_deg", h.augment_rotation_deg},
           {"synthetic_count", h.synthetic_count},
           {"checkpoint_every", h.checkpoint_every},
           {"pcem_normalize", h.pcem_normalize},
           {"pcem_half_threshold", h.pcem_half_threshold},
           {"pcem_include_background", h.pcem_include_background}};
}

void from_json(const json& j, HyperParams& h) {
#define ELSNET_FIELD(name) h.name = j.value(#name, h.name)
  ELSNET_FIELD(lr);
  ELSNET_FIELD(weight_decay);
  ELSNET_FIELD(batch_size);
  ELSNET_FIELD(tau);
  ELSNET_FIELD(lambda_s);
  ELSNET_FIELD(lambda_c);
  ELSNET_FIELD(lambda_u);
  ELSNET_FIELD(steps_stage1);
  ELSNET_FIELD(steps_stage2);
  ELSNET_FIELD(seed);
  ELSNET_FIELD(use_esm);
  ELSNET_FIELD(pcem_stage1);
  ELSNET_FIELD(pcem_stage2);
  ELSNET_FIELD(pseudo_labels);
  ELSNET_FIELD(warm_start);
  ELSNET_FIELD(augment);
  ELSNET_FIELD(augment_rotation_deg);
  ELSNET_FIELD(synthetic_count);
  ELSNET_FIELD(checkpoint_every);
  ELSNET_FIELD(pcem_normalize);
  ELSNET_FIELD(pcem_half_threshold);
  ELSNET_FIELD(pcem_include_background);
#undef ELSNET_FIELD
}

SegNetConfig PipelineConfig::network() const {
  SegNetConfig c;
  c.num_outputs = phantom.num_classes + 1;
  c.height = c.width = static_cast<std::size_t>(phantom.size);
  c.widths = widths;
  c.embed_channels = embed_channels;
  return c;
}

void PipelineConfig::validate() const {
  phantom.validate();
  network().validate();
  trainer.validate();
  if (esm.max_retries < 1) throw ConfigError("esm.max_retries must be >= 1");
  if (esm.black_background_prob < 0.0 || esm.black_background_prob > 1.0)
    throw ConfigError("esm.black_background_prob must lie in [0, 1]");
  esm.ranges.check(esm::TransformSpec{esm.ranges.scale_min});
}

std::string PipelineConfig::hash() const { return hex64(fnv1a64(json(*this).dump())); }

void to_json(json& j, const PipelineConfig& c) {
  j = json{{"phantom", c.phantom},
           {"esm", c.esm},
           {"network", {{"widths", c.widths}, {"embed_channels", c.embed_channels}}},
           {"trainer", c.trainer}};
}

void from_json(const json& j, PipelineConfig& c) {
  if (j.contains("phantom")) j.at("phantom").get_to(c.phantom);
  if (j.contains("esm")) j.at("esm").get_to(c.esm);
  if (j.contains("network")) {
    c.widths = j.at("network").value("widths", c.widths);
    c.embed_channels = j.at("network").value("embed_channels", c.embed_channels);
  }
  if (j.contains("trainer")) j.at("trainer").get_to(c.trainer);
}

namespace {

bool compatible(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integers may not be given as fractions.
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

}  // namespace

void check_known_keys(const json& reference, const json& given, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!reference.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    const json& ref = reference.at(key);
    if (ref.is_object()) {
      check_known_keys(ref, value, path);
    } else if (!compatible(ref, value)) {
      throw ConfigError("config key '" + path + "' expects " + std::string(ref.type_name()) + ", got " +
                        value.type_name());
    }
  }
}

void apply_overrides(json& config, const std::vector<std::string>& overrides) {
  const json reference = PipelineConfig{};
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not of the form key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json patch = value;
    std::vector<std::string> parts;
    for (std::size_t start = 0;;) {
      const auto dot = key.find('.', start);
      parts.push_back(key.substr(start, dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    check_known_keys(reference, patch);
    json* node = &config;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
      node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = value;
  }
}

PipelineConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + file.string() + ": " + e.what());
    }
    check_known_keys(json(PipelineConfig{}), j);
  }
  apply_overrides(j, overrides);
  PipelineConfig c = j.get<PipelineConfig>();
  c.validate();
  return c;
}

}  // namespace elsnet
