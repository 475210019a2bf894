// Acceptance run: one PASS/FAIL line per criterion, exit 3 when any fails.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "elsnet/ablation.hpp"
#include "elsnet/config.hpp"
#include "elsnet/esm.hpp"
#include "elsnet/gradcheck.hpp"
#include "elsnet/metrics.hpp"
#include "elsnet/ops.hpp"
#include "elsnet/pcem.hpp"
#include "elsnet/phantom.hpp"
#include "elsnet/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace elsnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& what, const Verdict& v) {
  failures += !v.pass;
  std::cout << "criterion " << id << " [" << what << "]: " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail
            << std::endl;
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

Verdict grad_check() {
  const auto t0 = Clock::now();
  const auto results = run_grad_check_suite(1);
  const double dt = seconds_since(t0);
  std::size_t passed = 0;
  std::string failed;
  for (const auto& r : results) {
    if (r.passed)
      ++passed;
    else
      failed += " " + r.name;
  }
  const bool ok = passed == results.size() && dt < 120.0;
  return {ok, std::to_string(passed) + "/" + std::to_string(results.size()) + " checks in " + fmt(dt, 1) + "s" +
                  (failed.empty() ? "" : ", failed:" + failed)};
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

Verdict oracle_equivalence() {
  const auto t0 = Clock::now();
  constexpr int kTrials = 100;
  Rng rng(2024);
  int bad_proto = 0, bad_conv = 0, bad_dsc = 0, bad_hd = 0, bad_loss = 0;
  for (int t = 0; t < kTrials; ++t) {
    {
      const std::size_t h = 2 + rng.index(7), w = 2 + rng.index(7), C = 1 + rng.index(6);
      const std::size_t scale = 1 + rng.index(4);
      const Mask m = fixture::blocks(h * scale, w * scale, 3, rng);
      const auto x = fixture::tensor({C, h, w}, rng);
      const auto got = pcem::compute_prototypes(x, m, 4);
      for (int k = 0; k < 4; ++k) {
        const auto want = oracle::prototype(fixture::values(x), C, h, w, m, k);
        if (got[k].present != want.has_value()) {
          ++bad_proto;
          continue;
        }
        if (want)
          for (std::size_t c = 0; c < C; ++c) bad_proto += !close(got[k].v[c], (*want)[c], 1e-9);
      }
    }
    {
      const std::size_t cin = 1 + rng.index(3), cout = 1 + rng.index(3), k = 1 + 2 * rng.index(2);
      const int stride = 1 + static_cast<int>(rng.index(2));
      const int pad = k > 1 ? static_cast<int>(rng.index(2)) : 0;
      const std::size_t H = (rng.index(5)) * stride + k - 2 * pad, W = (rng.index(5)) * stride + k - 2 * pad;
      const auto x = fixture::tensor({cin, H, W}, rng), wt = fixture::tensor({cout, cin, k, k}, rng);
      const auto b = fixture::tensor({cout}, rng);
      std::size_t oh = 0, ow = 0;
      const auto want = oracle::conv2d(fixture::values(x), cin, H, W, fixture::values(wt), cout, k,
                                       fixture::values(b), stride, pad, oh, ow);
      const auto got = ops::conv2d(x, wt, b, stride, pad);
      if (got.dims() != Dims{cout, oh, ow}) {
        ++bad_conv;
      } else {
        for (std::size_t i = 0; i < want.size(); ++i) bad_conv += !close(got[i], want[i], 1e-12);
      }
    }
    {
      const std::size_t H = 8 + rng.index(16), W = 8 + rng.index(16);
      const Mask p = fixture::blocks(H, W, 3, rng, 1 + static_cast<int>(rng.index(4)));
      const Mask g = fixture::blocks(H, W, 3, rng, 1 + static_cast<int>(rng.index(4)));
      for (int k = 1; k <= 3; ++k) {
        bad_dsc += !close(dsc(p, g, k), oracle::dsc(p, g, k), 1e-12);
        bad_hd += !close(hd95(p, g, k), oracle::hd95(p, g, k), 1e-9);
      }
    }
    {
      const std::size_t K = 2 + rng.index(4), H = 2 + rng.index(8), W = 2 + rng.index(8);
      const Mask target = fixture::noise(H, W, static_cast<int>(K) - 1, rng);
      const auto z = fixture::tensor({K, H, W}, rng, -4, 4);
      bad_loss += !close(seg_loss(z, target).item(), oracle::seg_loss(fixture::values(z), K, target), 1e-9);
    }
  }
  const double dt = seconds_since(t0);
  const int bad = bad_proto + bad_conv + bad_dsc + bad_hd + bad_loss;
  return {bad == 0 && dt < 60.0,
          std::to_string(kTrials) + " instances each; mismatches prototypes " + std::to_string(bad_proto) +
              ", conv2d " + std::to_string(bad_conv) + ", dsc " + std::to_string(bad_dsc) + ", hd95 " +
              std::to_string(bad_hd) + ", seg_loss " + std::to_string(bad_loss) + "; " + fmt(dt, 1) + "s"};
}

Verdict esm_replay(const PipelineConfig& cfg) {
  const Dataset d = generate_phantom_dataset(7, cfg.phantom);
  const auto set = esm::build_synthetic_set(d, 100, cfg.esm, 77);
  double max_err = 0.0;
  std::size_t label_mismatch = 0, bg_foreground = 0;
  for (const auto& s : d.split(split::kBackground)) bg_foreground += s.mask.labels.size() - s.mask.count(0);
  for (std::size_t b = 0; b < set.samples.size(); ++b) {
    const auto& log = set.logs[b];
    const Sample* bg = nullptr;
    for (const auto& s : d.split(split::kBackground))
      if (s.id == log.background_source) bg = &s;
    const auto r = oracle::replay(d.exemplar(), bg, log);
    for (std::size_t p = 0; p < r.image.size(); ++p) {
      max_err = std::max(max_err, std::abs(r.image[p] - set.samples[b].image.pixels[p]));
      label_mismatch += r.mask.labels[p] != set.samples[b].mask.labels[p];
    }
  }
  return {max_err <= 1e-6 && label_mismatch == 0 && bg_foreground == 0,
          "100 samples; max intensity error " + sci(max_err) + ", label mismatches " +
              std::to_string(label_mismatch) + ", background foreground pixels " + std::to_string(bg_foreground)};
}

pcem::Prototype<double> proto(int k, std::vector<double> v) {
  pcem::Prototype<double> p;
  p.k = k;
  p.present = true;
  p.pixel_count = 1;
  const std::size_t n = v.size();
  p.v = Tensor64::from({n}, std::move(v));
  return p;
}

Verdict contrastive() {
  pcem::BatchPrototypes<double> b;
  pcem::Prototype<double> missing;
  missing.k = 0;
  b.add_image({proto(0, {0, 1}), proto(1, {1, 0})}, "a");
  b.add_image({missing, proto(1, {1, 0})}, "b");
  pcem::PcemOptions unit;
  unit.tau = 1.0;
  const double closed = pcem::contrastive_loss(b, unit, 1).item();

  Rng rng(31);
  double min_loss = 1e300, max_shift = 0.0;
  for (int t = 0; t < 100; ++t) {
    pcem::BatchPrototypes<double> a, s;
    const double scale = rng.uniform(0.05, 20.0);
    const std::size_t n_img = 2 + rng.index(3), K = 2 + rng.index(3);
    const std::size_t which = rng.index(n_img * K);
    for (std::size_t n = 0; n < n_img; ++n) {
      std::vector<pcem::Prototype<double>> pa, ps;
      for (std::size_t k = 0; k < K; ++k) {
        auto v = fixture::uniform(5, rng);
        pa.push_back(proto(static_cast<int>(k), v));
        if (n * K + k == which)
          for (double& x : v) x *= scale;
        ps.push_back(proto(static_cast<int>(k), v));
      }
      a.add_image(pa, "i" + std::to_string(n));
      s.add_image(ps, "i" + std::to_string(n));
    }
    const double la = pcem::contrastive_loss(a, pcem::PcemOptions{}, t).item();
    const double ls = pcem::contrastive_loss(s, pcem::PcemOptions{}, t).item();
    min_loss = std::min(min_loss, la);
    max_shift = std::max(max_shift, std::abs(la - ls));
  }
  return {std::abs(closed - 0.3133) <= 1e-4 && min_loss >= 0.0 && max_shift < 1e-6,
          "closed form " + fmt(closed, 6) + ", min loss over 100 batches " + fmt(min_loss, 6) +
              ", max change under rescaling " + sci(max_shift)};
}

std::string head_lines(const fs::path& p, int n) {
  std::ifstream in(p);
  std::string line, out;
  for (int i = 0; i <= n && std::getline(in, line); ++i) out += line + '\n';
  return out;
}

Verdict determinism(PipelineConfig cfg, const fs::path& work) {
  cfg.trainer.seed = 1;
  cfg.trainer.steps_stage1 = 20;
  cfg.trainer.steps_stage2 = 10;
  const Dataset data = generate_phantom_dataset(cfg.trainer.seed, cfg.phantom);
  std::vector<PipelineResult> runs;
  for (const char* name : {"run_a", "run_b"}) {
    RunOptions o;
    o.out_dir = work / name;
    fs::remove_all(o.out_dir);
    runs.push_back(run_pipeline(cfg, data, o));
  }
  const std::string a = head_lines(work / "run_a" / "losses.csv", 10);
  const std::string b = head_lines(work / "run_b" / "losses.csv", 10);
  const bool csv_same = a == b && std::count(a.begin(), a.end(), '\n') == 11;
  const bool report_same = runs[0].final_report() == runs[1].final_report();
  return {csv_same && report_same, std::string("first 10 loss rows ") + (csv_same ? "identical" : "differ") +
                                       ", final reports " + (report_same ? "identical" : "differ")};
}

std::string means(const std::vector<VariantScore>& rows) {
  std::string s;
  for (const auto& r : rows) s += (s.empty() ? "" : ", ") + r.name + " " + fmt(r.mean_dsc());
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path config_file, work = fs::temp_directory_path() / "elsnet_acceptance";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool skip_ablation = false;
  app.add_option("-c,--config", config_file, "Reference configuration")->check(CLI::ExistingFile);
  app.add_option("-w,--work", work, "Scratch directory");
  app.add_option("--seeds", seeds, "Ablation seeds")->delimiter(',');
  app.add_flag("--skip-ablation", skip_ablation, "Only the fast criteria");
  CLI11_PARSE(app, argc, argv);

  try {
    const PipelineConfig cfg = resolve_config(config_file, {});
    fs::create_directories(work);

    report(1, "gradient check", grad_check());
    report(2, "oracle equivalence", oracle_equivalence());
    report(3, "ESM replay", esm_replay(cfg));
    report(4, "contrastive loss", contrastive());

    if (skip_ablation) {
      std::cout << "criteria 5, 6, 8 skipped" << std::endl;
    } else {
      auto progress = [](const std::string& m) { std::cerr << "  " << m << std::endl; };
      AblationOptions mo;
      mo.seeds = seeds;
      mo.transforms = false;
      mo.progress = progress;
      const auto t0 = Clock::now();
      const AblationReport modules = run_ablation(cfg, mo);
      const double dt = seconds_since(t0);
      modules.print(std::cout);
      report(5, "module ordering", {modules.module_ordering_holds() && dt <= 3600.0,
                                    means(modules.module_rows) + "; " + fmt(dt / 60.0, 1) + " min"});

      AblationOptions to = mo;
      to.modules = false;
      to.transforms = true;
      const AblationReport transforms = run_ablation(cfg, to);
      transforms.print(std::cout);
      report(6, "transform ordering", {transforms.transform_ordering_holds(), means(transforms.transform_rows)});

      report(7, "determinism", determinism(cfg, work));

      const double full = modules.module("full").mean_dsc(), s1 = modules.module("+ESM+PCEM_S1").mean_dsc();
      report(8, "pseudo-label utility",
             {modules.pseudo_label_utility_holds(), "full " + fmt(full) + " vs +ESM+PCEM_S1 " + fmt(s1)});
    }
    if (skip_ablation) report(7, "determinism", determinism(cfg, work));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
  return failures == 0 ? 0 : 3;
}
