#include "elsnet/ablation.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>

#include "elsnet/trainer.hpp"

namespace elsnet {

using nlohmann::json;

namespace {

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

const char* const kModuleNames[] = {"BS", "+ESM", "+ESM+PCEM_S1", "full"};

int missing_families(const esm::TransformStrategy& s) {
  return !s.intensity_exemplar + !s.intensity_background + !s.geometric_exemplar + !s.geometric_background;
}

}  // namespace

double VariantScore::mean_dsc() const { return mean(dsc); }
double VariantScore::mean_hd95() const { return mean(hd95); }

const VariantScore& AblationReport::module(const std::string& name) const {
  for (const auto& v : module_rows)
    if (v.name == name) return v;
  throw ContractError("ablation report has no module row " + name);
}

bool AblationReport::module_ordering_holds() const {
  const double bs = module("BS").mean_dsc(), esm = module("+ESM").mean_dsc(),
               pcem = module("+ESM+PCEM_S1").mean_dsc(), full = module("full").mean_dsc();
  return bs < esm && esm < pcem && pcem <= full && esm - bs >= 0.05 && full - bs >= 0.10;
}

bool AblationReport::transform_ordering_holds() const {
  const auto rows = esm::TransformStrategy::ablation_rows();
  if (rows.size() != transform_rows.size()) return false;
  double all = 0, none = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (missing_families(rows[i]) == 0) all = transform_rows[i].mean_dsc();
    if (missing_families(rows[i]) == 4) none = transform_rows[i].mean_dsc();
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double d = transform_rows[i].mean_dsc();
    if (missing_families(rows[i]) == 1 && d > all) return false;
    if (missing_families(rows[i]) != 4 && d <= none) return false;
  }
  return true;
}

bool AblationReport::pseudo_label_utility_holds() const {
  return module("full").mean_dsc() >= module("+ESM+PCEM_S1").mean_dsc() - 0.01;
}

void AblationReport::print(std::ostream& os) const {
  auto table = [&](const char* title, const std::vector<VariantScore>& rows) {
    if (rows.empty()) return;
    os << title << " (" << seeds.size() << " seeds)\n"
       << std::left << std::setw(24) << "Variant" << std::right << std::setw(9) << "DSC" << std::setw(9) << "dDSC"
       << std::setw(10) << "HD95" << std::setw(10) << "dHD95" << '\n';
    const double base_d = rows.front().mean_dsc(), base_h = rows.front().mean_hd95();
    for (const auto& v : rows) {
      os << std::left << std::setw(24) << v.name << std::right << std::fixed << std::setprecision(3) << std::setw(9)
         << v.mean_dsc() << std::showpos << std::setw(9) << v.mean_dsc() - base_d << std::noshowpos
         << std::setprecision(2) << std::setw(10) << v.mean_hd95() << std::showpos << std::setw(10)
         << v.mean_hd95() - base_h << std::noshowpos << '\n';
    }
    os << '\n';
  };
  table("Module ablation", module_rows);
  table("Transform ablation", transform_rows);
}

void AblationReport::write_csv(std::ostream& os) const {
  os << "table,variant,seed,dsc,hd95\n" << std::setprecision(6);
  auto rows = [&](const char* table, const std::vector<VariantScore>& list) {
    for (const auto& v : list)
      for (std::size_t i = 0; i < v.dsc.size(); ++i)
        os << table << ',' << v.name << ',' << seeds[i] << ',' << v.dsc[i] << ',' << v.hd95[i] << '\n';
  };
  rows("module", module_rows);
  rows("transform", transform_rows);
}

void to_json(json& j, const AblationReport& r) {
  auto rows = [](const std::vector<VariantScore>& list) {
    json a = json::array();
    for (const auto& v : list)
      a.push_back({{"name", v.name}, {"dsc", v.dsc}, {"hd95", v.hd95}, {"mean_dsc", v.mean_dsc()},
                   {"mean_hd95", v.mean_hd95()}});
    return a;
  };
  j = json{{"seeds", r.seeds}, {"module", rows(r.module_rows)}, {"transform", rows(r.transform_rows)}};
}

PipelineConfig module_variant(const PipelineConfig& base, const std::string& name) {
  PipelineConfig c = base;
  HyperParams& h = c.trainer;
  if (name == "BS") {
    h.use_esm = h.pcem_stage1 = h.pcem_stage2 = h.pseudo_labels = false;
  } else if (name == "+ESM") {
    h.use_esm = true;
    h.pcem_stage1 = h.pcem_stage2 = h.pseudo_labels = false;
  } else if (name == "+ESM+PCEM_S1") {
    h.use_esm = h.pcem_stage1 = true;
    h.pcem_stage2 = h.pseudo_labels = false;
  } else if (name == "full") {
    h.use_esm = h.pcem_stage1 = h.pcem_stage2 = h.pseudo_labels = true;
  } else {
    throw ConfigError("unknown module variant '" + name + "'");
  }
  return c;
}

AblationReport run_ablation(const PipelineConfig& base, const AblationOptions& options) {
  if (options.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  base.validate();
  AblationReport report;
  report.seeds = options.seeds;
  const auto strategies = esm::TransformStrategy::ablation_rows();
  if (options.modules)
    for (const char* n : kModuleNames) report.module_rows.push_back({n, {}, {}});
  if (options.transforms)
    for (const auto& s : strategies) report.transform_rows.push_back({s.name(), {}, {}});
  auto note = [&](const std::string& m) {
    if (options.progress) options.progress(m);
  };
  auto record = [](VariantScore& v, const MetricReport& m) {
    v.dsc.push_back(m.avg_dsc);
    v.hd95.push_back(m.avg_hd95);
  };

  for (std::uint64_t seed : options.seeds) {
    PipelineConfig seeded = base;
    seeded.trainer.seed = seed;
    const Dataset data = generate_phantom_dataset(seed, seeded.phantom);
    const std::string tag = "seed " + std::to_string(seed) + ": ";

    auto run = [&](const PipelineConfig& c, const std::string& label) {
      note(tag + label);
      return run_pipeline(c, data);
    };
    std::optional<MetricReport> esm_only;
    if (options.modules) {
      record(report.module_rows[0], run(module_variant(seeded, "BS"), "BS").final_report());
      esm_only = run(module_variant(seeded, "+ESM"), "+ESM").final_report();
      record(report.module_rows[1], *esm_only);
      const auto full = run(module_variant(seeded, "full"), "full (+ESM+PCEM_S1 after stage 1)");
      record(report.module_rows[2], full.report_stage1);
      record(report.module_rows[3], full.final_report());
    }
    if (options.transforms) {
      for (std::size_t i = 0; i < strategies.size(); ++i) {
        if (strategies[i] == esm::TransformStrategy::all_on() && esm_only) {
          record(report.transform_rows[i], *esm_only);
          continue;
        }
        PipelineConfig c = module_variant(seeded, "+ESM");
        c.esm.strategy = strategies[i];
        record(report.transform_rows[i], run(c, "transforms " + strategies[i].name()).final_report());
      }
    }
  }
  return report;
}

}  // namespace elsnet
