#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elsnet/esm.hpp"
#include "elsnet/pcem.hpp"
#include "elsnet/phantom.hpp"
#include "elsnet/segnet.hpp"

namespace elsnet {

struct HyperParams {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int batch_size = 4;
  double tau = 0.07;
  double lambda_s = 1.0;
  double lambda_c = 1.0;
  double lambda_u = 1.0;
  int steps_stage1 = 1500;
  int steps_stage2 = 1500;
  std::uint64_t seed = 0;

  bool use_esm = true;
  bool pcem_stage1 = true;
  bool pcem_stage2 = true;
  bool pseudo_labels = true;  // runs stage 2

  bool warm_start = false;  // stage-2 network starts from the stage-1 weights
  bool augment = true;
  double augment_rotation_deg = 15.0;
  int synthetic_count = 300;
  int checkpoint_every = 500;

  bool pcem_normalize = true;
  bool pcem_half_threshold = false;
  bool pcem_include_background = true;

  void validate() const;
  pcem::PcemOptions pcem_options() const;
};

void to_json(nlohmann::json& j, const HyperParams& h);
void from_json(const nlohmann::json& j, HyperParams& h);

/// Everything a run depends on. Sections: phantom, esm, network, trainer.
struct PipelineConfig {
  PhantomConfig phantom;
  esm::SynthesisOptions esm;
  std::vector<int> widths{16, 32, 32};
  int embed_channels = 32;
  HyperParams trainer;

  /// Network shape for this dataset: background + K outputs at the phantom size.
  SegNetConfig network() const;
  void validate() const;
  /// FNV-1a of the canonical JSON, as 16 hex digits.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

/// Throws ConfigError naming the first key of `given` that has no counterpart
/// in `reference` (the defaults), or whose JSON type differs.
void check_known_keys(const nlohmann::json& reference, const nlohmann::json& given, const std::string& prefix = "");

/// Applies `section.key=value` overrides in order. Values are parsed as JSON
/// when possible and taken as strings otherwise. Unknown keys are rejected.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides);

/// Defaults, then the optional file, then the overrides; validated.
PipelineConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

std::string version_string();

}  // namespace elsnet
