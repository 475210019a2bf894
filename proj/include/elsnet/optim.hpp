#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "elsnet/segnet.hpp"

namespace elsnet {

struct AdamOptions {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment buffers, one per parameter tensor.
struct AdamState {
  std::int64_t t = 0;
  std::vector<std::vector<float>> m, v;

  bool initialized() const { return !m.empty(); }
};

/// One bias-corrected Adam update with decoupled weight decay
/// (theta <- theta - lr * wd * theta, then the Adam delta). Parameters with no
/// gradient buffer are treated as having zero gradient.
template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, AdamState& state, const AdamOptions& opt);

template <typename T>
void adam_step(SegNetwork<T>& net, AdamState& state, const AdamOptions& opt) {
  std::vector<BasicTensor<T>> params;
  for (auto& p : net.parameters()) params.push_back(p.second);
  adam_step(params, state, opt);
}

}  // namespace elsnet
