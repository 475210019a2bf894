#include <doctest.h>

#include <fstream>
#include <sstream>

#include "elsnet/ablation.hpp"
#include "elsnet/metrics.hpp"
#include "elsnet/phantom.hpp"
#include "elsnet/trainer.hpp"
#include "fixtures.hpp"

using namespace elsnet;

namespace {

PipelineConfig quick_config() {
  PipelineConfig c;
  c.phantom.n_unlabeled = 8;
  c.phantom.n_background = 3;
  c.phantom.n_test = 3;
  c.widths = {4, 8};
  c.embed_channels = 8;
  c.trainer.steps_stage1 = 6;
  c.trainer.steps_stage2 = 4;
  c.trainer.synthetic_count = 12;
  c.trainer.checkpoint_every = 0;
  c.trainer.lr = 1e-3;
  return c;
}

BatchMember member(const Sample& s, Role role, const std::string& key) { return {s, role, key, std::nullopt}; }

}  // namespace

TEST_SUITE("losses") {
  const PipelineConfig cfg = quick_config();
  const Dataset data = generate_phantom_dataset(2, cfg.phantom);
  const SegNet net(cfg.network(), 3);
  const auto& ex = data.exemplar();
  const auto& un = data.split(split::kUnlabeled);
  const auto synthetic = synthetic_for_run(cfg, data);

  TEST_CASE("zero weights reduce to the exemplar loss") {
    HyperParams hp = cfg.trainer;
    hp.lambda_s = hp.lambda_c = 0.0;
    const Batch b{member(ex, Role::Exemplar, "exemplar"), member(synthetic[0], Role::Synthetic, "s0")};
    const auto l = stage1_loss(net, b, hp, true, 1);
    CHECK(l.total.item() == seg_loss(net.forward(ex.image.to_tensor()), ex.mask).item());
  }

  TEST_CASE("total is the weighted sum of separately computed components") {
    HyperParams hp = cfg.trainer;
    hp.lambda_s = 0.7;
    hp.lambda_c = 0.2;
    hp.lambda_u = 0.4;
    const Batch b{member(ex, Role::Exemplar, "exemplar"), member(synthetic[0], Role::Synthetic, "s0"),
                  member(synthetic[1], Role::Synthetic, "s1"), member(un[0], Role::Pseudo, "p0")};
    const auto l = stage2_loss(net, b, hp, true, 5);
    const double le = seg_loss(net.forward(ex.image.to_tensor()), ex.mask).item();
    const double ls = (seg_loss(net.forward(synthetic[0].image.to_tensor()), synthetic[0].mask).item() +
                       seg_loss(net.forward(synthetic[1].image.to_tensor()), synthetic[1].mask).item()) / 2;
    const double lu = seg_loss(net.forward(un[0].image.to_tensor()), un[0].mask).item();
    CHECK(l.l_e == doctest::Approx(le).epsilon(1e-6));
    CHECK(l.l_s == doctest::Approx(ls).epsilon(1e-6));
    CHECK(l.l_u == doctest::Approx(lu).epsilon(1e-6));
    CHECK(l.l_c >= 0.0);
    CHECK(l.total.item() == doctest::Approx(le + 0.7 * ls + 0.2 * l.l_c + 0.4 * lu).epsilon(1e-6));
  }

  TEST_CASE("no pseudo weight gives the stage-1 loss") {
    HyperParams hp = cfg.trainer;
    hp.lambda_u = 0.0;
    const Batch b{member(ex, Role::Exemplar, "exemplar"), member(synthetic[0], Role::Synthetic, "s0")};
    CHECK(stage2_loss(net, b, hp, true, 9).total.item() == stage1_loss(net, b, hp, true, 9).total.item());
  }

  TEST_CASE("a pseudo member with the true mask contributes like a labelled one") {
    HyperParams hp = cfg.trainer;
    hp.lambda_s = hp.lambda_u = 1.0;
    const Batch as_pseudo{member(ex, Role::Exemplar, "exemplar"), member(un[1], Role::Pseudo, "x")};
    const Batch as_synth{member(ex, Role::Exemplar, "exemplar"), member(un[1], Role::Synthetic, "x")};
    CHECK(stage2_loss(net, as_pseudo, hp, false, 1).total.item() ==
          stage2_loss(net, as_synth, hp, false, 1).total.item());
  }

  TEST_CASE("finite and positive at initialization") {
    const Batch b{member(ex, Role::Exemplar, "exemplar"), member(synthetic[2], Role::Synthetic, "s2")};
    const auto l = stage1_loss(net, b, cfg.trainer, true, 2);
    CHECK(std::isfinite(l.total.item()));
    CHECK(l.total.item() > 0.0f);
  }

  TEST_CASE("batch rules") {
    const Batch two{member(ex, Role::Exemplar, "a"), member(ex, Role::Exemplar, "b")};
    CHECK_THROWS_AS(stage1_loss(net, two, cfg.trainer, false, 1), ContractError);
    const Batch pseudo{member(ex, Role::Exemplar, "a"), member(un[0], Role::Pseudo, "p")};
    CHECK_THROWS_AS(stage1_loss(net, pseudo, cfg.trainer, false, 1), ContractError);
    const Batch alone{member(ex, Role::Exemplar, "a")};
    CHECK_THROWS_AS(stage1_loss(net, alone, cfg.trainer, true, 1), ConfigError);
  }

  TEST_CASE("batch composition") {
    Rng rng(4);
    HyperParams hp = cfg.trainer;
    hp.batch_size = 6;
    const auto pseudo = un;
    auto count = [](const Batch& b, Role r) {
      return std::count_if(b.begin(), b.end(), [r](const BatchMember& m) { return m.role == r; });
    };
    const Batch s1 = sample_batch(1, hp, ex, synthetic, {}, rng);
    CHECK(count(s1, Role::Exemplar) == 1);
    CHECK(count(s1, Role::Synthetic) == 5);
    const Batch s2 = sample_batch(2, hp, ex, synthetic, pseudo, rng);
    CHECK(count(s2, Role::Synthetic) == 3);
    CHECK(count(s2, Role::Pseudo) == 2);
    hp.use_esm = false;
    CHECK(sample_batch(1, hp, ex, {}, {}, rng).size() == 1);
  }
}

TEST_SUITE("pseudo labels") {
  TEST_CASE("reference predictors and repeatability") {
    const PipelineConfig cfg = quick_config();
    const Dataset data = generate_phantom_dataset(5, cfg.phantom);
    const auto& un = data.split(split::kUnlabeled);
    const auto perfect = generate_pseudo_labels(OracleSegmenter(), un);
    for (std::size_t i = 0; i < un.size(); ++i) CHECK(perfect.entries[i].mask == un[i].mask);
    for (const auto& e : generate_pseudo_labels(ConstantSegmenter(0), un).entries)
      CHECK(e.mask.count(0) == e.mask.labels.size());
    auto net = std::make_shared<SegNet>(cfg.network(), 1);
    const auto a = generate_pseudo_labels(NetworkSegmenter(net), un);
    const auto b = generate_pseudo_labels(NetworkSegmenter(net), un);
    for (std::size_t i = 0; i < un.size(); ++i) CHECK(a.entries[i].mask == b.entries[i].mask);
    const auto dir = fixture::scratch("pseudo");
    save_pseudo_labels(a, dir);
    const auto back = load_pseudo_labels(dir);
    CHECK(back.producer == a.producer);
    for (std::size_t i = 0; i < un.size(); ++i) CHECK(back.entries[i].mask == a.entries[i].mask);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("two identical runs agree bit for bit") {
    const PipelineConfig cfg = quick_config();
    const Dataset data = generate_phantom_dataset(cfg.trainer.seed, cfg.phantom);
    const auto dir = fixture::scratch("pipeline");
    RunOptions opt;
    opt.out_dir = dir / "a";
    const PipelineResult a = run_pipeline(cfg, data, opt);
    const PipelineResult b = run_pipeline(cfg, data);
    REQUIRE(a.losses.size() == 10);
    for (std::size_t i = 0; i < a.losses.size(); ++i) {
      CHECK(a.losses[i].step == static_cast<std::int64_t>(i + 1));
      CHECK(a.losses[i].total == b.losses[i].total);
    }
    CHECK(a.final_report() == b.final_report());
    for (const char* f : {"run.json", "losses.csv", "report.json", "report.csv", "report_stage1.json"})
      CHECK(std::filesystem::exists(dir / "a" / f));
    CHECK(std::filesystem::exists(dir / "a" / "stage1" / "final" / "checkpoint.json"));
    CHECK(std::filesystem::exists(dir / "a" / "stage2" / "final" / "checkpoint.json"));
    std::ifstream csv(dir / "a" / "losses.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "step,L_e,L_s,L_c,L_u,total");
  }

  TEST_CASE("mismatched class count is refused") {
    PipelineConfig cfg = quick_config();
    const Dataset data = generate_phantom_dataset(1, cfg.phantom);
    cfg.phantom.num_classes = 4;
    CHECK_THROWS_AS(run_pipeline(cfg, data), ConfigError);
  }

  TEST_CASE("ablation variants and ordering checks") {
    const PipelineConfig base = quick_config();
    CHECK_FALSE(module_variant(base, "BS").trainer.use_esm);
    CHECK_FALSE(module_variant(base, "+ESM").trainer.pcem_stage1);
    CHECK(module_variant(base, "full").trainer.pseudo_labels);
    CHECK_THROWS(module_variant(base, "bogus"));

    AblationReport r;
    r.seeds = {1};
    r.module_rows = {{"BS", {0.3}, {40}}, {"+ESM", {0.4}, {30}}, {"+ESM+PCEM_S1", {0.45}, {28}}, {"full", {0.45}, {27}}};
    CHECK(r.module_ordering_holds());
    CHECK(r.pseudo_label_utility_holds());
    r.module_rows[3].dsc = {0.445};
    CHECK_FALSE(r.module_ordering_holds());
    CHECK(r.pseudo_label_utility_holds());
    r.module_rows[3].dsc = {0.43};
    CHECK_FALSE(r.pseudo_label_utility_holds());
    std::ostringstream os;
    r.print(os);
    CHECK(os.str().find("+ESM+PCEM_S1") != std::string::npos);
  }
}
