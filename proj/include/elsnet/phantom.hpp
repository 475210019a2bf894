#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

#include "elsnet/dataset.hpp"
#include "elsnet/rng.hpp"

namespace elsnet {

/// Procedural multi-organ 2D phantom: smooth low-contrast "organs" on a noisy
/// body region, with exact ground-truth masks.
struct PhantomConfig {
  int num_classes = 3;  // K in [2, 8]
  int size = 64;        // H = W, 64 or 128
  int n_unlabeled = 60;
  int n_background = 10;
  int n_test = 20;
  double organ_scale = 1.0;       // multiplies every organ's base radius
  double presence_prob = 0.75;    // per-class presence in unlabeled/test samples
  double noise_sigma = 0.025;
  double max_blur_sigma = 0.8;

  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);

/// Fixed per-class appearance (the "anatomy" shared by every image).
struct OrganProfile {
  double intensity_offset;  // relative to the image's body mean
  int texture;              // 0 smooth, 1 stripes, 2 speckle
  double radius_fraction;   // base radius as a fraction of the image size
  double aspect;            // minor/major axis ratio
  double exponent;          // superellipse exponent
};

OrganProfile organ_profile(int k);

/// Renders one image. `present[k-1]` selects which classes are drawn; all
/// randomness comes from `rng`. An organ that cannot be placed without overlap
/// raises GenerationError when `require_all` is set and is dropped otherwise.
Sample render_phantom(const PhantomConfig& config, const std::vector<bool>& present, Rng& rng,
                      bool require_all = true);

/// Builds the exemplar, unlabeled, background and test splits. Each sample
/// draws from its own stream derived from (seed, sample id), so the output is
/// a pure function of (seed, config).
Dataset generate_phantom_dataset(std::uint64_t seed, const PhantomConfig& config);

}  // namespace elsnet
