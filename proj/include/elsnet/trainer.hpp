#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "elsnet/checkpoint.hpp"
#include "elsnet/config.hpp"
#include "elsnet/dataset.hpp"
#include "elsnet/metrics.hpp"

namespace elsnet {

enum class Role { Exemplar, Synthetic, Pseudo };

struct BatchMember {
  Sample sample;
  Role role = Role::Exemplar;
  std::string key;  // stable identity for the positive sampler
  /// Pools prototypes from this mask instead of the prediction (gradient checks
  /// hold it fixed so the loss stays smooth under perturbation).
  std::optional<Mask> prototype_mask;
};

using Batch = std::vector<BatchMember>;

/// Loss value plus its logged components (already weighted sums are in `total`).
template <typename T>
struct StageLoss {
  BasicTensor<T> total;
  double l_e = 0, l_s = 0, l_c = 0, l_u = 0;
};

/// L_e + lambda_s L_s + lambda_c L_c over a batch that holds exactly one
/// exemplar. Pseudo-labelled members are rejected.
template <typename T>
StageLoss<T> stage1_loss(const SegNetwork<T>& net, const Batch& batch, const HyperParams& hp, bool use_pcem,
                         std::uint64_t stream_seed);

/// stage1_loss plus lambda_u times the mean loss of pseudo-labelled members.
template <typename T>
StageLoss<T> stage2_loss(const SegNetwork<T>& net, const Batch& batch, const HyperParams& hp, bool use_pcem,
                         std::uint64_t stream_seed);

struct PseudoLabel {
  std::string id;
  Mask mask;
};

struct PseudoLabeledSet {
  std::vector<PseudoLabel> entries;
  std::string producer;  // describe() of the segmenter that made them

  /// Unlabelled samples with their masks replaced by the pseudo masks.
  std::vector<Sample> as_samples(const std::vector<Sample>& unlabeled) const;
};

/// One prediction per unlabelled image, kept as-is.
PseudoLabeledSet generate_pseudo_labels(const Segmenter& segmenter, const std::vector<Sample>& unlabeled);
void save_pseudo_labels(const PseudoLabeledSet& set, const std::filesystem::path& dir);
PseudoLabeledSet load_pseudo_labels(const std::filesystem::path& dir);

/// Stage 1: the exemplar plus batch_size - 1 distinct synthetic samples (or the
/// exemplar alone without ESM). Stage 2: the exemplar, ceil((B-1)/2)
/// synthetic samples and the rest pseudo-labelled. Members are augmented.
Batch sample_batch(int stage, const HyperParams& hp, const Sample& exemplar, const std::vector<Sample>& synthetic,
                   const std::vector<Sample>& pseudo, Rng& rng);

/// Random horizontal flip and rotation applied jointly to image and mask.
Sample augment(const Sample& s, double max_rotation_deg, Rng& rng);

struct LossRow {
  std::int64_t step = 0;
  double l_e = 0, l_s = 0, l_c = 0, l_u = 0, total = 0;
};

void write_losses_csv(const std::vector<LossRow>& rows, std::ostream& os);

struct StageOptions {
  std::filesystem::path out_dir;  // checkpoints land under here when set
  std::int64_t step_offset = 0;   // global step of this stage's first step, minus one
  std::function<void(const LossRow&)> on_step;
};

struct StageResult {
  Checkpoint checkpoint;
  std::vector<LossRow> losses;
};

/// Trains one stage from `init` (or a fresh network when null).
StageResult train_stage(int stage, const PipelineConfig& config, const Dataset& data,
                        const std::vector<Sample>& synthetic, const std::vector<Sample>& pseudo,
                        const SegNet* init, const StageOptions& options = {});

/// Builds the synthetic set a run uses; a pure function of (config, dataset).
std::vector<Sample> synthetic_for_run(const PipelineConfig& config, const Dataset& data);

struct PipelineResult {
  Checkpoint stage1;
  std::optional<Checkpoint> stage2;
  std::optional<PseudoLabeledSet> pseudo;
  MetricReport report_stage1;
  std::optional<MetricReport> report_stage2;
  std::vector<LossRow> losses;

  const MetricReport& final_report() const { return report_stage2 ? *report_stage2 : report_stage1; }
};

struct RunOptions {
  std::filesystem::path out_dir;  // when set: losses.csv, run.json, checkpoints, reports
  std::function<void(const std::string&)> progress;
};

/// Stage 1, pseudo-labels, stage 2 from a fresh initialization, and test
/// evaluation after each stage. Stage 2 runs only when pseudo_labels is on.
PipelineResult run_pipeline(const PipelineConfig& config, const Dataset& data, const RunOptions& options = {});

}  // namespace elsnet
