#include "elsnet/pcem.hpp"

#include <algorithm>
#include <numeric>

#include "elsnet/ops.hpp"
#include "elsnet/rng.hpp"

namespace elsnet::pcem {

using nlohmann::json;

void PcemOptions::validate() const {
  if (!(tau > 0.0)) throw ConfigError("pcem.tau must be positive");
}

void to_json(json& j, const PcemOptions& o) {
  j = json{{"tau", o.tau},
           {"normalize", o.normalize},
           {"half_threshold", o.half_threshold},
           {"include_background", o.include_background}};
}

void from_json(const json& j, PcemOptions& o) {
  o.tau = j.value("tau", o.tau);
  o.normalize = j.value("normalize", o.normalize);
  o.half_threshold = j.value("half_threshold", o.half_threshold);
  o.include_background = j.value("include_background", o.include_background);
}

std::vector<std::uint8_t> category_indicator(const Mask& mask, int k, std::size_t h, std::size_t w,
                                             bool half_threshold) {
  std::vector<double> onehot(mask.labels.size());
  for (std::size_t p = 0; p < onehot.size(); ++p) onehot[p] = mask.labels[p] == k ? 1.0 : 0.0;
  std::vector<std::uint8_t> ind(h * w);
  if (h == mask.height && w == mask.width) {
    for (std::size_t p = 0; p < ind.size(); ++p) ind[p] = onehot[p] > 0.0;
    return ind;
  }
  const auto resized =
      ops::bilinear_resize(Tensor64::from({1, mask.height, mask.width}, std::move(onehot)), h, w);
  const double cut = half_threshold ? 0.5 : 0.0;
  for (std::size_t p = 0; p < ind.size(); ++p) ind[p] = resized[p] > cut;
  return ind;
}

template <typename T>
std::vector<Prototype<T>> compute_prototypes(const BasicTensor<T>& x, const Mask& mask, int num_categories,
                                             std::size_t n, bool half_threshold) {
  if (x.ndim() != 3) throw DimensionError("compute_prototypes: embedding must be [c,h,w]");
  std::vector<Prototype<T>> out;
  for (int k = 0; k < num_categories; ++k) {
    Prototype<T> p;
    p.k = k;
    p.n = n;
    const auto ind = category_indicator(mask, k, x.dim(1), x.dim(2), half_threshold);
    p.pixel_count = static_cast<std::size_t>(std::count(ind.begin(), ind.end(), std::uint8_t{1}));
    p.present = p.pixel_count > 0;
    if (p.present) p.v = ops::masked_mean(x, std::span<const std::uint8_t>(ind));
    out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
void BatchPrototypes<T>::add_image(std::vector<Prototype<T>> protos, std::string key) {
  if (N == 0) K = protos.size();
  if (protos.size() != K) throw DimensionError("BatchPrototypes: every image needs the same category count");
  for (auto& p : protos) {
    p.n = N;
    entries.push_back(std::move(p));
  }
  keys.push_back(std::move(key));
  ++N;
}

template <typename T>
BasicTensor<T> contrastive_loss(const BatchPrototypes<T>& batch, const PcemOptions& options,
                                std::uint64_t stream_seed) {
  options.validate();
  if (batch.N < 2) throw ConfigError("contrastive loss needs at least 2 images per batch, got " + std::to_string(batch.N));
  const std::size_t N = batch.N, K = batch.K;
  const std::size_t k0 = options.include_background ? 0 : 1;

  std::vector<BasicTensor<T>> unit(N * K);
  for (std::size_t i = 0; i < N * K; ++i) {
    const auto& p = batch.entries[i];
    if (p.present && p.k >= static_cast<int>(k0)) unit[i] = options.normalize ? ops::l2_normalize(p.v) : p.v;
  }

  // Images in key order; ties keep batch order.
  std::vector<std::size_t> by_key(N);
  std::iota(by_key.begin(), by_key.end(), std::size_t{0});
  std::stable_sort(by_key.begin(), by_key.end(), [&](std::size_t a, std::size_t b) { return batch.keys[a] < batch.keys[b]; });

  const T inv_tau = static_cast<T>(1.0 / options.tau);
  std::vector<BasicTensor<T>> terms;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = k0; k < K; ++k) {
      const auto& anchor = unit[n * K + k];
      if (!anchor.defined()) continue;
      std::vector<std::size_t> candidates;
      for (std::size_t m : by_key)
        if (m != n && unit[m * K + k].defined()) candidates.push_back(m);
      if (candidates.empty()) continue;
      std::vector<BasicTensor<T>> sims;
      for (std::size_t i = 0; i < N; ++i) {
        if (i == n) continue;
        for (std::size_t j = k0; j < K; ++j)
          if (j != k && unit[i * K + j].defined()) sims.push_back(ops::dot(anchor, unit[i * K + j]));
      }
      if (sims.empty()) continue;
      Rng rng(derive_seed(stream_seed, batch.keys[n] + "#" + std::to_string(k)));
      const std::size_t m = candidates[rng.index(candidates.size())];
      sims.insert(sims.begin(), ops::dot(anchor, unit[m * K + k]));
      const auto logits = ops::scale(ops::stack(sims), inv_tau);
      terms.push_back(ops::sub(ops::logsumexp(logits), ops::select(logits, 0)));
    }
  if (terms.empty()) return BasicTensor<T>::scalar(T(0));
  return ops::sum(ops::stack(terms));
}

template struct BatchPrototypes<float>;
template struct BatchPrototypes<double>;
template std::vector<Prototype<float>> compute_prototypes(const Tensor&, const Mask&, int, std::size_t, bool);
template std::vector<Prototype<double>> compute_prototypes(const Tensor64&, const Mask&, int, std::size_t, bool);
template Tensor contrastive_loss(const BatchPrototypes<float>&, const PcemOptions&, std::uint64_t);
template Tensor64 contrastive_loss(const BatchPrototypes<double>&, const PcemOptions&, std::uint64_t);

}  // namespace elsnet::pcem
