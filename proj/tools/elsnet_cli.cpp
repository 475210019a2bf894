// elsnet: command-line driver for phantom generation, synthesis, training,
// pseudo-labelling, evaluation, gradient checks and ablations.

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "elsnet/ablation.hpp"
#include "elsnet/checkpoint.hpp"
#include "elsnet/config.hpp"
#include "elsnet/errors.hpp"
#include "elsnet/esm.hpp"
#include "elsnet/gradcheck.hpp"
#include "elsnet/metrics.hpp"
#include "elsnet/phantom.hpp"
#include "elsnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace elsnet;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;
constexpr int kAcceptance = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything is written under a hidden sibling directory and renamed into
// place once the verb has finished.
class Staging {
 public:
  Staging(fs::path target, bool force) : target_(std::move(target)) {
    if (target_.empty()) throw UsageError("--out is required");
    if (fs::exists(target_) && !force)
      throw UsageError(target_.string() + " already exists (pass --force to replace it)");
    fs::path parent = fs::absolute(target_).parent_path();
    fs::create_directories(parent);
    temp_ = parent / ("." + target_.filename().string() + ".tmp-" + std::to_string(::getpid()));
    fs::remove_all(temp_);
    fs::create_directories(temp_);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    std::error_code ec;
    if (!promoted_) fs::remove_all(temp_, ec);
  }

  const fs::path& dir() const { return temp_; }

  void promote() {
    if (fs::exists(target_)) fs::remove_all(target_);
    fs::rename(temp_, target_);
    promoted_ = true;
  }

 private:
  fs::path target_;
  fs::path temp_;
  bool promoted_ = false;
};

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "JSON config file (sections: phantom, esm, network, trainer)")
        ->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", overrides, "Override, e.g. trainer.lambda_c=0.5 (repeatable, last wins)");
  }
  PipelineConfig resolve() const { return resolve_config(file, overrides); }
};

void progress(const std::string& msg) { std::cerr << "[elsnet] " << msg << '\n'; }

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2) << '\n'; }

Dataset load_checked(const fs::path& dir, const PipelineConfig* config) {
  if (!fs::exists(dir / "manifest.json"))
    throw UsageError("no dataset at " + dir.string() + " (expected manifest.json; run gen-phantom first)");
  Dataset d = load_dataset(dir);
  if (config && d.manifest.num_classes != config->phantom.num_classes)
    throw UsageError("dataset has " + std::to_string(d.manifest.num_classes) + " classes but config sets " +
                     "phantom.num_classes=" + std::to_string(config->phantom.num_classes));
  return d;
}

void require_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "checkpoint.json"))
    throw UsageError("no checkpoint at " + dir.string() + " (expected checkpoint.json)");
}

// A stored synthetic split is used when present; otherwise the set is rebuilt
// from the config, which yields the same samples.
std::vector<Sample> synthetic_for(const PipelineConfig& config, const Dataset& data) {
  if (!config.trainer.use_esm) return {};
  const auto& stored = data.split(split::kSynthetic);
  if (!stored.empty()) return stored;
  progress("building synthetic set in memory");
  return synthetic_for_run(config, data);
}

void write_losses(const fs::path& p, const std::vector<LossRow>& rows) {
  std::ofstream csv(p);
  write_losses_csv(rows, csv);
}

void write_report(const fs::path& dir, const std::string& stem, const MetricReport& r) {
  write_json(dir / (stem + ".json"), json(r));
  std::ofstream csv(dir / (stem + ".csv"));
  r.write_csv(csv);
}

StageOptions stage_options(const fs::path& dir, std::int64_t offset, int total) {
  StageOptions o;
  o.out_dir = dir;
  o.step_offset = offset;
  const std::int64_t every = std::max(1, total / 10);
  o.on_step = [offset, every, total](const LossRow& r) {
    const std::int64_t local = r.step - offset;
    if (local % every == 0 || local == total)
      progress("step " + std::to_string(local) + "/" + std::to_string(total) + "  loss " +
               std::to_string(r.total));
  };
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-learning segmentation on procedural phantoms"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  app.fallthrough();

  bool force = false;
  app.add_flag("--force", force, "Replace an existing output directory");

  // gen-phantom
  auto* gen = app.add_subcommand("gen-phantom", "Generate a phantom dataset (seed = trainer.seed)");
  ConfigArgs gen_cfg;
  std::string gen_out;
  gen_cfg.attach(gen);
  gen->add_option("-o,--out", gen_out, "Dataset directory")->required();

  // synth
  auto* syn = app.add_subcommand("synth", "Add the ESM synthetic split to a dataset copy");
  ConfigArgs syn_cfg;
  std::string syn_data, syn_out;
  syn_cfg.attach(syn);
  syn->add_option("-d,--data", syn_data, "Input dataset directory")->required();
  syn->add_option("-o,--out", syn_out, "Output dataset directory")->required();

  // train-stage1
  auto* t1 = app.add_subcommand("train-stage1", "Train on the exemplar and synthetic samples");
  ConfigArgs t1_cfg;
  std::string t1_data, t1_out;
  t1_cfg.attach(t1);
  t1->add_option("-d,--data", t1_data, "Dataset directory")->required();
  t1->add_option("-o,--out", t1_out, "Run directory")->required();

  // pseudo-label
  auto* pl = app.add_subcommand("pseudo-label", "Predict masks for the unlabeled split");
  std::string pl_data, pl_ckpt, pl_out;
  pl->add_option("-d,--data", pl_data, "Dataset directory")->required();
  pl->add_option("-k,--checkpoint", pl_ckpt, "Stage-1 checkpoint directory")->required();
  pl->add_option("-o,--out", pl_out, "Pseudo-label directory")->required();

  // train-stage2
  auto* t2 = app.add_subcommand("train-stage2", "Train with exemplar, synthetic and pseudo-labelled samples");
  ConfigArgs t2_cfg;
  std::string t2_data, t2_pseudo, t2_init, t2_out;
  t2_cfg.attach(t2);
  t2->add_option("-d,--data", t2_data, "Dataset directory")->required();
  t2->add_option("-p,--pseudo", t2_pseudo, "Pseudo-label directory")->required();
  t2->add_option("-i,--init", t2_init, "Checkpoint to start from (required with trainer.warm_start)");
  t2->add_option("-o,--out", t2_out, "Run directory")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a dataset split");
  std::string ev_data, ev_ckpt, ev_out, ev_split = split::kTest;
  ev->add_option("-d,--data", ev_data, "Dataset directory")->required();
  ev->add_option("-k,--checkpoint", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--split", ev_split, "Split to score")->capture_default_str();
  ev->add_option("-o,--out", ev_out, "Directory for report.json and report.csv");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every op and both stage losses");
  std::uint64_t gc_seed = 1;
  std::size_t gc_coords = GradCheckOptions{}.max_coords;
  double gc_step = GradCheckOptions{}.step;
  gc->add_option("--seed", gc_seed, "Seed for inputs and probed coordinates")->capture_default_str();
  gc->add_option("--coords", gc_coords, "Coordinates probed per check")->capture_default_str()->check(
      CLI::PositiveNumber);
  gc->add_option("--step", gc_step, "Central-difference half width")->capture_default_str()->check(
      CLI::PositiveNumber);

  // ablate
  auto* ab = app.add_subcommand("ablate", "Module and transform-strategy ablations over a seed set");
  ConfigArgs ab_cfg;
  std::vector<std::uint64_t> ab_seeds{1, 2, 3, 4, 5};
  std::string ab_out;
  bool ab_modules_only = false, ab_transforms_only = false;
  ab_cfg.attach(ab);
  ab->add_option("--seeds", ab_seeds, "Seed set")->delimiter(',')->capture_default_str();
  ab->add_option("-o,--out", ab_out, "Directory for ablation.json and ablation.csv");
  ab->add_flag("--modules-only", ab_modules_only, "Skip the transform-strategy rows");
  ab->add_flag("--transforms-only", ab_transforms_only, "Skip the module rows");

  // run
  auto* run = app.add_subcommand("run", "Stage 1, pseudo-labels, stage 2 and evaluation in one go");
  ConfigArgs run_cfg;
  std::string run_data, run_out;
  run_cfg.attach(run);
  run->add_option("-d,--data", run_data, "Dataset directory (generated from the config when omitted)");
  run->add_option("-o,--out", run_out, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      const PipelineConfig cfg = gen_cfg.resolve();
      Staging out(gen_out, force);
      Dataset d = generate_phantom_dataset(cfg.trainer.seed, cfg.phantom);
      save_dataset(d, out.dir());
      out.promote();
      std::cout << "wrote " << gen_out << ": K=" << d.manifest.num_classes << ", " << d.manifest.height << "x"
                << d.manifest.width;
      for (const auto& [name, ids] : d.manifest.splits) std::cout << ", " << name << " " << ids.size();
      std::cout << '\n';
    } else if (syn->parsed()) {
      const PipelineConfig cfg = syn_cfg.resolve();
      Dataset d = load_checked(syn_data, &cfg);
      Staging out(syn_out, force);
      save_dataset(d, out.dir());
      const auto set = esm::build_synthetic_dataset(d, cfg.trainer.synthetic_count, cfg.esm,
                                                    derive_seed(cfg.trainer.seed, std::string_view("esm")),
                                                    out.dir());
      out.promote();
      std::cout << "wrote " << set.samples.size() << " synthetic samples (" << cfg.esm.strategy.name() << ") to "
                << syn_out << '\n';
    } else if (t1->parsed()) {
      const PipelineConfig cfg = t1_cfg.resolve();
      Dataset d = load_checked(t1_data, &cfg);
      Staging out(t1_out, force);
      write_json(out.dir() / "run.json", {{"version", version_string()}, {"config_hash", cfg.hash()}, {"config", cfg}});
      const auto synthetic = synthetic_for(cfg, d);
      auto r = train_stage(1, cfg, d, synthetic, {}, nullptr,
                           stage_options(out.dir() / "stage1", 0, cfg.trainer.steps_stage1));
      write_losses(out.dir() / "losses.csv", r.losses);
      out.promote();
      std::cout << "stage 1 done: " << r.losses.size() << " steps, final loss "
                << (r.losses.empty() ? 0.0 : r.losses.back().total) << "; checkpoint " << (fs::path(t1_out) / "stage1/final").string()
                << '\n';
    } else if (pl->parsed()) {
      Dataset d = load_checked(pl_data, nullptr);
      require_checkpoint(pl_ckpt);
      if (d.split(split::kUnlabeled).empty()) throw UsageError("dataset has no unlabeled samples");
      Staging out(pl_out, force);
      const Checkpoint ck = load_checkpoint(pl_ckpt);
      const auto seg = make_segmenter(ck);
      const auto set = generate_pseudo_labels(*seg, d.split(split::kUnlabeled));
      save_pseudo_labels(set, out.dir());
      out.promote();
      std::cout << "wrote " << set.entries.size() << " pseudo labels from " << set.producer << " to " << pl_out
                << '\n';
    } else if (t2->parsed()) {
      const PipelineConfig cfg = t2_cfg.resolve();
      Dataset d = load_checked(t2_data, &cfg);
      if (!fs::exists(fs::path(t2_pseudo) / "pseudo_labels.json"))
        throw UsageError("no pseudo labels at " + t2_pseudo + " (run pseudo-label first)");
      if (cfg.trainer.warm_start && t2_init.empty()) throw UsageError("trainer.warm_start needs --init");
      if (!t2_init.empty()) require_checkpoint(t2_init);
      Staging out(t2_out, force);
      std::optional<Checkpoint> init;
      if (!t2_init.empty()) init = load_checkpoint(t2_init);
      const auto pseudo = load_pseudo_labels(t2_pseudo).as_samples(d.split(split::kUnlabeled));
      const auto synthetic = synthetic_for(cfg, d);
      write_json(out.dir() / "run.json", {{"version", version_string()}, {"config_hash", cfg.hash()}, {"config", cfg}});
      auto r = train_stage(2, cfg, d, synthetic, pseudo, init && init->net ? init->net.get() : nullptr,
                           stage_options(out.dir() / "stage2", cfg.trainer.steps_stage1, cfg.trainer.steps_stage2));
      write_losses(out.dir() / "losses.csv", r.losses);
      out.promote();
      std::cout << "stage 2 done: " << r.losses.size() << " steps; checkpoint "
                << (fs::path(t2_out) / "stage2/final").string() << '\n';
    } else if (ev->parsed()) {
      Dataset d = load_checked(ev_data, nullptr);
      require_checkpoint(ev_ckpt);
      if (d.split(ev_split).empty()) throw UsageError("dataset has no samples in split '" + ev_split + "'");
      std::optional<Staging> out;
      if (!ev_out.empty()) out.emplace(ev_out, force);
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      const auto seg = make_segmenter(ck);
      const MetricReport report = evaluate(*seg, d.split(ev_split), d.manifest.num_classes);
      report.print_table(std::cout, ev_split);
      if (out) {
        write_report(out->dir(), "report", report);
        out->promote();
      }
    } else if (gc->parsed()) {
      GradCheckOptions opt;
      opt.max_coords = gc_coords;
      opt.step = gc_step;
      const auto results = run_grad_check_suite(gc_seed, opt);
      print_grad_check(std::cout, results);
      std::size_t failed = 0;
      for (const auto& r : results) failed += !r.passed;
      std::cout << (failed ? "FAIL" : "PASS") << ": " << results.size() - failed << "/" << results.size()
                << " checks passed\n";
      if (failed) return kAcceptance;
    } else if (ab->parsed()) {
      const PipelineConfig cfg = ab_cfg.resolve();
      if (ab_modules_only && ab_transforms_only) throw UsageError("--modules-only and --transforms-only exclude each other");
      if (ab_seeds.empty()) throw UsageError("--seeds is empty");
      std::optional<Staging> out;
      if (!ab_out.empty()) out.emplace(ab_out, force);
      AblationOptions opt;
      opt.seeds = ab_seeds;
      opt.modules = !ab_transforms_only;
      opt.transforms = !ab_modules_only;
      opt.progress = progress;
      const AblationReport report = run_ablation(cfg, opt);
      report.print(std::cout);
      if (out) {
        write_json(out->dir() / "ablation.json", json(report));
        std::ofstream csv(out->dir() / "ablation.csv");
        report.write_csv(csv);
        csv.close();
        out->promote();
      }
      bool ok = true;
      if (opt.modules) {
        const bool order = report.module_ordering_holds(), utility = report.pseudo_label_utility_holds();
        std::cout << "module ordering: " << (order ? "holds" : "violated") << "\npseudo-label utility: "
                  << (utility ? "holds" : "violated") << '\n';
        ok = ok && order && utility;
      }
      if (opt.transforms) {
        const bool order = report.transform_ordering_holds();
        std::cout << "transform ordering: " << (order ? "holds" : "violated") << '\n';
        ok = ok && order;
      }
      if (!ok) return kAcceptance;
    } else if (run->parsed()) {
      const PipelineConfig cfg = run_cfg.resolve();
      std::optional<Dataset> d;
      if (!run_data.empty()) d = load_checked(run_data, &cfg);
      Staging out(run_out, force);
      if (!d) {
        progress("generating phantom dataset");
        d = generate_phantom_dataset(cfg.trainer.seed, cfg.phantom);
      }
      RunOptions opt;
      opt.out_dir = out.dir();
      opt.progress = progress;
      const PipelineResult r = run_pipeline(cfg, *d, opt);
      out.promote();
      r.report_stage1.print_table(std::cout, "stage 1");
      if (r.report_stage2) r.report_stage2->print_table(std::cout, "stage 2");
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
