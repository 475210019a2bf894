#include "elsnet/optim.hpp"

#include <cmath>

namespace elsnet {

template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, AdamState& state, const AdamOptions& opt) {
  if (!(opt.lr > 0.0)) throw ConfigError("adam: lr must be positive");
  if (!state.initialized()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0f);
      state.v.emplace_back(p.numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam: state was built for a different parameter list");
  ++state.t;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto value = p.mutable_data();
    const bool has = p.has_grad();
    const auto grad = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != value.size()) throw ContractError("adam: moment buffer size mismatch");
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = has ? static_cast<double>(grad[j]) : 0.0;
      double theta = static_cast<double>(value[j]);
      theta -= opt.lr * opt.weight_decay * theta;
      const double mj = opt.beta1 * m[j] + (1.0 - opt.beta1) * g;
      const double vj = opt.beta2 * v[j] + (1.0 - opt.beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      theta -= opt.lr * (mj / c1) / (std::sqrt(vj / c2) + opt.eps);
      value[j] = static_cast<T>(theta);
    }
  }
}

template void adam_step(std::vector<BasicTensor<float>>&, AdamState&, const AdamOptions&);
template void adam_step(std::vector<BasicTensor<double>>&, AdamState&, const AdamOptions&);

}  // namespace elsnet
