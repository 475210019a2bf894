#include "elsnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "elsnet/elst.hpp"
#include "elsnet/ops.hpp"
#include "elsnet/optim.hpp"
#include "elsnet/pcem.hpp"

namespace elsnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
BasicTensor<T> mean_of(const std::vector<BasicTensor<T>>& terms) {
  return ops::scale(ops::sum(ops::stack(terms)), T(1) / static_cast<T>(terms.size()));
}

template <typename T>
StageLoss<T> batch_loss(const SegNetwork<T>& net, const Batch& batch, const HyperParams& hp, bool use_pcem,
                        std::uint64_t stream_seed, bool allow_pseudo, double lambda_u) {
  std::size_t exemplars = 0;
  for (const auto& m : batch) exemplars += m.role == Role::Exemplar;
  if (exemplars != 1)
    throw ContractError("batch must contain exactly one exemplar, found " + std::to_string(exemplars));
  if (use_pcem && batch.size() < 2)
    throw ConfigError("contrastive loss needs a batch of at least 2, got " + std::to_string(batch.size()));

  const int categories = net.config().num_outputs;
  std::vector<BasicTensor<T>> le, ls, lu;
  pcem::BatchPrototypes<T> protos;
  for (const auto& m : batch) {
    if (m.role == Role::Pseudo && !allow_pseudo) throw ContractError("stage-1 batch holds a pseudo-labelled member");
    const auto features = net.encode_features(m.sample.image.template to_tensor<T>());
    const auto logits = net.decode(features);
    auto loss = seg_loss(logits, m.sample.mask);
    (m.role == Role::Exemplar ? le : m.role == Role::Synthetic ? ls : lu).push_back(loss);
    if (use_pcem)
      protos.add_image(pcem::compute_prototypes(features.embedding,
                                                m.prototype_mask ? *m.prototype_mask : argmax_mask(logits),
                                                categories, 0, hp.pcem_half_threshold),
                       m.key);
  }

  StageLoss<T> out;
  out.total = le.front();
  out.l_e = static_cast<double>(le.front().item());
  auto add_term = [&](const BasicTensor<T>& term, double lambda, double& slot) {
    slot = static_cast<double>(term.item());
    if (lambda != 0.0) out.total = ops::add(out.total, ops::scale(term, static_cast<T>(lambda)));
  };
  if (!ls.empty()) add_term(mean_of(ls), hp.lambda_s, out.l_s);
  if (use_pcem) add_term(pcem::contrastive_loss(protos, hp.pcem_options(), stream_seed), hp.lambda_c, out.l_c);
  if (!lu.empty()) add_term(mean_of(lu), lambda_u, out.l_u);
  return out;
}

}  // namespace

template <typename T>
StageLoss<T> stage1_loss(const SegNetwork<T>& net, const Batch& batch, const HyperParams& hp, bool use_pcem,
                         std::uint64_t stream_seed) {
  return batch_loss(net, batch, hp, use_pcem, stream_seed, false, 0.0);
}

template <typename T>
StageLoss<T> stage2_loss(const SegNetwork<T>& net, const Batch& batch, const HyperParams& hp, bool use_pcem,
                         std::uint64_t stream_seed) {
  return batch_loss(net, batch, hp, use_pcem, stream_seed, true, hp.lambda_u);
}

template StageLoss<float> stage1_loss(const SegNetwork<float>&, const Batch&, const HyperParams&, bool, std::uint64_t);
template StageLoss<double> stage1_loss(const SegNetwork<double>&, const Batch&, const HyperParams&, bool,
                                       std::uint64_t);
template StageLoss<float> stage2_loss(const SegNetwork<float>&, const Batch&, const HyperParams&, bool, std::uint64_t);
template StageLoss<double> stage2_loss(const SegNetwork<double>&, const Batch&, const HyperParams&, bool,
                                       std::uint64_t);

std::vector<Sample> PseudoLabeledSet::as_samples(const std::vector<Sample>& unlabeled) const {
  if (unlabeled.size() != entries.size())
    throw ContractError("pseudo-label set has " + std::to_string(entries.size()) + " masks for " +
                        std::to_string(unlabeled.size()) + " unlabeled images");
  std::vector<Sample> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].id != unlabeled[i].id)
      throw ContractError("pseudo label " + entries[i].id + " does not match unlabeled sample " + unlabeled[i].id);
    Sample s = unlabeled[i];
    s.mask = entries[i].mask;
    out.push_back(std::move(s));
  }
  return out;
}

PseudoLabeledSet generate_pseudo_labels(const Segmenter& segmenter, const std::vector<Sample>& unlabeled) {
  PseudoLabeledSet set;
  set.producer = segmenter.describe();
  for (const Sample& s : unlabeled) set.entries.push_back({s.id, segmenter.predict(s)});
  return set;
}

void save_pseudo_labels(const PseudoLabeledSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  json ids = json::array();
  for (const auto& e : set.entries) {
    ids.push_back(e.id);
    elst::write(dir / (e.id + ".mask.elst"), Dims{e.mask.height, e.mask.width},
                std::span<const std::uint8_t>(e.mask.labels));
  }
  std::ofstream(dir / "pseudo_labels.json") << json{{"producer", set.producer}, {"ids", ids}}.dump(2) << '\n';
}

PseudoLabeledSet load_pseudo_labels(const fs::path& dir) {
  std::ifstream in(dir / "pseudo_labels.json");
  if (!in) throw std::runtime_error("no pseudo labels at " + dir.string() + " (missing pseudo_labels.json)");
  const json j = json::parse(in);
  PseudoLabeledSet set;
  set.producer = j.at("producer").get<std::string>();
  for (const auto& id : j.at("ids")) {
    const auto a = elst::read(dir / (id.get<std::string>() + ".mask.elst"));
    if (a.dtype != elst::DType::U8 || a.dims.size() != 2) throw FormatError("pseudo mask must be a u8 H x W array", 6);
    Mask m(a.dims[0], a.dims[1]);
    m.labels = a.u8;
    set.entries.push_back({id.get<std::string>(), std::move(m)});
  }
  return set;
}

Sample augment(const Sample& s, double max_rotation_deg, Rng& rng) {
  const bool flip = rng.bernoulli(0.5);
  esm::TransformSpec t;
  t.rotation_deg = rng.uniform(-max_rotation_deg, max_rotation_deg);
  Sample out = s;
  if (flip) {
    out.image = flip_horizontal(out.image);
    out.mask = flip_horizontal(out.mask);
  }
  if (t.rotation_deg != 0.0) out = esm::apply_geometric(out, t);
  return out;
}

namespace {

// k distinct indices from [0, n), in draw order.
std::vector<std::size_t> draw_distinct(std::size_t n, std::size_t k, Rng& rng, const char* what) {
  if (k > n)
    throw ConfigError("batch needs " + std::to_string(k) + " " + what + " samples but only " + std::to_string(n) +
                      " exist");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.index(n - i)]);
  pool.resize(k);
  return pool;
}

}  // namespace

Batch sample_batch(int stage, const HyperParams& hp, const Sample& exemplar, const std::vector<Sample>& synthetic,
                   const std::vector<Sample>& pseudo, Rng& rng) {
  const std::size_t B = static_cast<std::size_t>(hp.batch_size);
  std::size_t n_syn = 0, n_pseudo = 0;
  if (stage == 1) {
    n_syn = hp.use_esm ? B - 1 : 0;
  } else {
    n_syn = hp.use_esm ? (B - 1 + 1) / 2 : 0;
    n_pseudo = B - 1 - n_syn;
  }
  Batch batch;
  auto add = [&](const Sample& s, Role role, std::string key) {
    Sample a = hp.augment ? augment(s, hp.augment_rotation_deg, rng) : s;
    batch.push_back({std::move(a), role, std::move(key), std::nullopt});
  };
  add(exemplar, Role::Exemplar, "exemplar");
  for (std::size_t i : draw_distinct(synthetic.size(), n_syn, rng, "synthetic"))
    add(synthetic[i], Role::Synthetic, "synthetic/" + synthetic[i].id);
  for (std::size_t i : draw_distinct(pseudo.size(), n_pseudo, rng, "pseudo-labelled"))
    add(pseudo[i], Role::Pseudo, "pseudo/" + pseudo[i].id);
  return batch;
}

void write_losses_csv(const std::vector<LossRow>& rows, std::ostream& os) {
  os << "step,L_e,L_s,L_c,L_u,total\n";
  os << std::setprecision(9);
  for (const auto& r : rows)
    os << r.step << ',' << r.l_e << ',' << r.l_s << ',' << r.l_c << ',' << r.l_u << ',' << r.total << '\n';
}

std::vector<Sample> synthetic_for_run(const PipelineConfig& config, const Dataset& data) {
  if (!config.trainer.use_esm) return {};
  return esm::build_synthetic_set(data, config.trainer.synthetic_count, config.esm,
                                  derive_seed(config.trainer.seed, std::string_view("esm")))
      .samples;
}

StageResult train_stage(int stage, const PipelineConfig& config, const Dataset& data,
                        const std::vector<Sample>& synthetic, const std::vector<Sample>& pseudo, const SegNet* init,
                        const StageOptions& options) {
  if (stage != 1 && stage != 2) throw ContractError("stage must be 1 or 2");
  const HyperParams& hp = config.trainer;
  const std::string tag = "stage" + std::to_string(stage);
  const std::uint64_t seed = derive_seed(hp.seed, std::string_view(tag));
  auto net = std::make_shared<SegNet>(init ? init->clone() : SegNet(config.network(), derive_seed(seed, 1)));
  net->set_requires_grad(true);
  const bool use_pcem = stage == 1 ? hp.pcem_stage1 : hp.pcem_stage2;
  const int steps = stage == 1 ? hp.steps_stage1 : hp.steps_stage2;
  const AdamOptions opt{hp.lr, hp.weight_decay};

  StageResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.net = net;
  ckpt.stage = tag;
  ckpt.config_hash = config.hash();
  Rng rng(derive_seed(seed, 2));
  auto save = [&](const std::string& name) {
    if (options.out_dir.empty()) return;
    ckpt.rng_state = rng.state();
    save_checkpoint(ckpt, options.out_dir / name);
  };

  const Sample& exemplar = data.exemplar();
  for (int s = 1; s <= steps; ++s) {
    const Batch batch = sample_batch(stage, hp, exemplar, synthetic, pseudo, rng);
    net->zero_grad();
    const std::uint64_t stream = derive_seed(seed, 1000 + static_cast<std::uint64_t>(s));
    const auto loss = stage == 1 ? stage1_loss(*net, batch, hp, use_pcem, stream)
                                 : stage2_loss(*net, batch, hp, use_pcem, stream);
    backward(loss.total);
    adam_step(*net, ckpt.adam, opt);
    ckpt.step = s;
    LossRow row{options.step_offset + s, loss.l_e, loss.l_s, loss.l_c, loss.l_u,
                static_cast<double>(loss.total.item())};
    if (!std::isfinite(row.total))
      throw std::runtime_error(tag + ": loss became non-finite at step " + std::to_string(s));
    result.losses.push_back(row);
    if (options.on_step) options.on_step(row);
    if (hp.checkpoint_every > 0 && s % hp.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d", s);
      save(name);
    }
  }
  save("final");
  return result;
}

PipelineResult run_pipeline(const PipelineConfig& config, const Dataset& data, const RunOptions& options) {
  config.validate();
  if (data.manifest.num_classes != config.phantom.num_classes)
    throw ConfigError("dataset has " + std::to_string(data.manifest.num_classes) + " classes, config expects " +
                      std::to_string(config.phantom.num_classes));
  const HyperParams& hp = config.trainer;
  const fs::path& out = options.out_dir;
  auto note = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(out / "run.json") << json{{"version", version_string()},
                                            {"config_hash", config.hash()},
                                            {"config", config}}
                                           .dump(2)
                                    << '\n';
  }

  PipelineResult r;
  const auto& test = data.split(split::kTest);
  auto stage_context = [](const char* stage, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(stage) + ": " + e.what());
    }
  };

  note("building synthetic set");
  const auto synthetic = stage_context("synthesis", [&] { return synthetic_for_run(config, data); });

  note("stage 1");
  StageOptions s1;
  if (!out.empty()) s1.out_dir = out / "stage1";
  auto stage1 = stage_context("stage 1", [&] { return train_stage(1, config, data, synthetic, {}, nullptr, s1); });
  r.losses = stage1.losses;
  r.stage1 = std::move(stage1.checkpoint);
  r.report_stage1 = evaluate(NetworkSegmenter(r.stage1.net), test, config.phantom.num_classes);

  if (hp.pseudo_labels) {
    note("pseudo labels");
    r.pseudo = generate_pseudo_labels(NetworkSegmenter(r.stage1.net), data.split(split::kUnlabeled));
    if (!out.empty()) save_pseudo_labels(*r.pseudo, out / "pseudo_labels");
    const auto pseudo = r.pseudo->as_samples(data.split(split::kUnlabeled));
    note("stage 2");
    StageOptions s2;
    if (!out.empty()) s2.out_dir = out / "stage2";
    s2.step_offset = hp.steps_stage1;
    auto stage2 = stage_context("stage 2", [&] {
      return train_stage(2, config, data, synthetic, pseudo, hp.warm_start ? r.stage1.net.get() : nullptr, s2);
    });
    r.losses.insert(r.losses.end(), stage2.losses.begin(), stage2.losses.end());
    r.stage2 = std::move(stage2.checkpoint);
    r.report_stage2 = evaluate(NetworkSegmenter(r.stage2->net), test, config.phantom.num_classes);
  }

  if (!out.empty()) {
    std::ofstream csv(out / "losses.csv");
    write_losses_csv(r.losses, csv);
    std::ofstream(out / "report_stage1.json") << json(r.report_stage1).dump(2) << '\n';
    std::ofstream(out / "report.json") << json(r.final_report()).dump(2) << '\n';
    std::ofstream rc(out / "report.csv");
    r.final_report().write_csv(rc);
  }
  return r;
}

}  // namespace elsnet
