#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elsnet/dataset.hpp"
#include "elsnet/rng.hpp"

/// Exemplar-guided synthesis: cut each organ out of the single labeled
/// exemplar, perturb it geometrically and photometrically, and paste it onto
/// a (possibly perturbed) organ-free background.
namespace elsnet::esm {

/// One draw of geometric + intensity parameters.
struct TransformSpec {
  double scale = 1.0;
  double rotation_deg = 0.0;  // counter-clockwise as displayed
  double blur_sigma = 0.0;
  double intensity_scale = 1.0;
  double intensity_shift = 0.0;
  double dx = 0.0;  // integral pixel translation
  double dy = 0.0;

  bool is_identity() const;
  bool operator==(const TransformSpec&) const = default;
};

void to_json(nlohmann::json& j, const TransformSpec& t);
void from_json(const nlohmann::json& j, TransformSpec& t);

struct TransformRanges {
  double scale_min = 0.7, scale_max = 1.3;
  double rotation_max_deg = 30.0;
  double blur_max = 1.5;
  double intensity_scale_min = 0.8, intensity_scale_max = 1.2;
  double intensity_shift_max = 0.1;
  double background_shift_fraction = 0.1;  // max |translation| of backgrounds, as a fraction of the size
  double organ_center_margin = 0.1;        // organ centers land in [margin, 1 - margin] of the canvas

  /// Throws ConfigError if `t` is outside these ranges.
  void check(const TransformSpec& t) const;
};

void to_json(nlohmann::json& j, const TransformRanges& r);
void from_json(const nlohmann::json& j, TransformRanges& r);

/// Which transform families are applied to exemplar organs (E) and backgrounds (B).
struct TransformStrategy {
  bool intensity_exemplar = true;
  bool intensity_background = true;
  bool geometric_exemplar = true;
  bool geometric_background = true;

  std::string name() const;
  bool operator==(const TransformStrategy&) const = default;

  static TransformStrategy all_on() { return {}; }
  static TransformStrategy all_off() { return {false, false, false, false}; }
  /// The seven strategies of the transform ablation, from "none" to "all".
  static std::vector<TransformStrategy> ablation_rows();
};

/// One organ segregated from the exemplar: tight bounding box, pixels outside
/// the organ zeroed. `top`/`left` locate the patch on the canvas and may be
/// negative after translation.
struct OrganCrop {
  int k = 0;
  long top = 0;
  long left = 0;
  Image image;
  Mask mask;  // 1 inside the organ, 0 elsewhere
};

OrganCrop extract_organ(const Sample& exemplar, int k);

/// Warps a crop about its own center (scale, rotation) and moves it by (dx, dy).
/// Image values are resampled bilinearly from in-organ pixels only; the mask
/// uses nearest-neighbour sampling and stays binary.
OrganCrop apply_geometric(const OrganCrop& crop, const TransformSpec& t);
/// Warps a whole sample about the canvas center; uncovered pixels are zero.
Sample apply_geometric(const Sample& sample, const TransformSpec& t);
/// clamp(gaussian_blur(image) * intensity_scale + intensity_shift, 0, 1).
Image apply_intensity(const Image& image, const TransformSpec& t);

/// Pastes the crop's organ pixels as class `crop.k`. Throws PlacementError when
/// no organ pixel lands on the canvas.
void paste(Sample& canvas, const OrganCrop& crop);

struct OrganDraw {
  int k = 0;
  TransformSpec spec;
  int attempts = 1;
};

/// Everything needed to replay one synthesized sample.
struct SynthesisLog {
  std::string background_source;  // "black" or the background sample id
  TransformSpec background;
  std::vector<OrganDraw> organs;
};

nlohmann::json log_to_json(const SynthesisLog& log);
SynthesisLog log_from_json(const nlohmann::json& j);

struct SynthesisOptions {
  TransformStrategy strategy;
  TransformRanges ranges;
  int max_retries = 10;
  double black_background_prob = 0.5;
};

void to_json(nlohmann::json& j, const SynthesisOptions& o);
void from_json(const nlohmann::json& j, SynthesisOptions& o);

/// Draws a full parameter set; families disabled by `geometric`/`intensity`
/// are reset to identity after drawing so streams stay aligned across strategies.
TransformSpec draw_organ_transform(const TransformRanges& r, bool intensity, bool geometric, double center_y,
                                   double center_x, std::size_t height, std::size_t width, Rng& rng);
TransformSpec draw_background_transform(const TransformRanges& r, bool intensity, bool geometric,
                                        std::size_t height, std::size_t width, Rng& rng);

/// Synthesizes one labeled sample from the exemplar and a background.
/// Organs are pasted in ascending class order, so higher classes occlude lower ones.
Sample synthesize_sample(const Sample& exemplar, const Sample& background, int num_classes,
                         const SynthesisOptions& options, Rng& rng, SynthesisLog* log = nullptr);

struct SyntheticSet {
  std::vector<Sample> samples;
  std::vector<SynthesisLog> logs;
};

/// Builds B synthetic samples. Sample b uses its own stream derived from
/// (seed, b); backgrounds are black with probability `black_background_prob`,
/// otherwise drawn uniformly from the background split.
SyntheticSet build_synthetic_set(const Dataset& dataset, int count, const SynthesisOptions& options,
                                 std::uint64_t seed);

/// Builds the set, stores it as the `synthetic` split of `dataset`, and when
/// `root` is non-empty writes samples plus `<id>.transforms.json` logs there.
SyntheticSet build_synthetic_dataset(Dataset& dataset, int count, const SynthesisOptions& options,
                                     std::uint64_t seed, const std::filesystem::path& root = {});

}  // namespace elsnet::esm
