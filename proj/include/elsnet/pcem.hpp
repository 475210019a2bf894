#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elsnet/image.hpp"
#include "elsnet/tensor.hpp"

/// Pixel prototypes pooled from the embedding map and the batch contrastive
/// loss that pulls same-category prototypes together across images.
namespace elsnet::pcem {

template <typename T>
struct Prototype {
  int k = 0;
  std::size_t n = 0;
  BasicTensor<T> v;  // [c]; undefined when absent
  bool present = false;
  std::size_t pixel_count = 0;
};

struct PcemOptions {
  double tau = 0.07;
  bool normalize = true;           // L2-normalize prototypes before dot products
  bool half_threshold = false;     // resized indicator > 0.5 instead of > 0
  bool include_background = true;  // category 0 takes part as anchor and negative

  void validate() const;
};

void to_json(nlohmann::json& j, const PcemOptions& o);
void from_json(const nlohmann::json& j, PcemOptions& o);

/// Resized class indicator for category k at the embedding resolution.
std::vector<std::uint8_t> category_indicator(const Mask& mask, int k, std::size_t h, std::size_t w,
                                             bool half_threshold = false);

/// One prototype per category 0..num_categories-1: the mean of the embedding
/// columns selected by the bilinearly resized one-hot mask. The mask is a
/// constant; gradients reach only `x`.
template <typename T>
std::vector<Prototype<T>> compute_prototypes(const BasicTensor<T>& x, const Mask& mask, int num_categories,
                                             std::size_t n = 0, bool half_threshold = false);

template <typename T>
struct BatchPrototypes {
  std::size_t N = 0;
  std::size_t K = 0;
  std::vector<Prototype<T>> entries;  // row-major [N x K]
  /// Content-independent identity of each image, used to order positive
  /// candidates so that the loss does not depend on batch order.
  std::vector<std::string> keys;

  const Prototype<T>& at(std::size_t n, std::size_t k) const { return entries[n * K + k]; }
  void add_image(std::vector<Prototype<T>> protos, std::string key);
};

/// Sum over anchors (n, k) of -log(exp(s_pos / tau) / (exp(s_pos / tau) + sum_neg exp(s_neg / tau))),
/// where the positive is one same-category prototype from another image and
/// the negatives are all other-category prototypes from other images. Anchors
/// without a positive or without any negative are skipped; the result is 0
/// when nothing survives. The positive is drawn from a stream keyed on
/// (stream_seed, anchor key, k).
template <typename T>
BasicTensor<T> contrastive_loss(const BatchPrototypes<T>& batch, const PcemOptions& options,
                                std::uint64_t stream_seed);

}  // namespace elsnet::pcem
