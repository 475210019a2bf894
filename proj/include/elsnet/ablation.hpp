#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elsnet/config.hpp"

namespace elsnet {

struct VariantScore {
  std::string name;
  std::vector<double> dsc;  // one per seed
  std::vector<double> hd95;

  double mean_dsc() const;
  double mean_hd95() const;
};

/// Module ablation rows, in order: BS, +ESM, +ESM+PCEM_S1, full.
/// Transform rows follow TransformStrategy::ablation_rows().
struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<VariantScore> module_rows;
  std::vector<VariantScore> transform_rows;

  const VariantScore& module(const std::string& name) const;

  /// BS < +ESM < +ESM+PCEM_S1 <= full, +ESM - BS >= 0.05, full - BS >= 0.10.
  bool module_ordering_holds() const;
  /// The all-on strategy beats every strategy missing exactly one family, and
  /// the no-transform strategy is the worst row.
  bool transform_ordering_holds() const;
  /// full >= +ESM+PCEM_S1 - 0.01.
  bool pseudo_label_utility_holds() const;

  void print(std::ostream& os) const;
  void write_csv(std::ostream& os) const;
};

void to_json(nlohmann::json& j, const AblationReport& r);

struct AblationOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool modules = true;
  bool transforms = true;
  std::function<void(const std::string&)> progress;
};

/// The module variant `name` derived from `base` (flags only).
PipelineConfig module_variant(const PipelineConfig& base, const std::string& name);

/// Every variant of a seed trains on the same phantom dataset (generated from
/// that seed) and shares initialization and batch streams. The transform rows
/// are +ESM stage-1 runs; the all-on row reuses the +ESM run.
AblationReport run_ablation(const PipelineConfig& base, const AblationOptions& options);

}  // namespace elsnet
