#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "elsnet/tensor.hpp"

namespace elsnet {

struct GradCheckOptions {
  double step = 1e-6;           // central-difference half width
  double rel_tol = 1e-3;
  double abs_tol = 1e-4;        // for coordinates that miss rel_tol
  double min_rel_fraction = 0.99;
  double rel_floor = 1e-8;      // denominator floor for the relative error
  std::size_t max_coords = 400; // per check; sampled uniformly across all inputs
};

struct GradCheckResult {
  std::string name;
  std::size_t probed = 0;
  std::size_t within_rel = 0;
  double max_rel = 0.0;
  double max_abs_outside_rel = 0.0;  // over coordinates that missed rel_tol
  bool passed = false;
};

/// Compares the analytic gradient of `loss` with respect to `inputs` against
/// f64 central differences on a random subset of coordinates. `loss` must
/// rebuild the graph from the current input values on every call.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor64()>& loss,
                                std::vector<Tensor64> inputs, const GradCheckOptions& options, std::uint64_t seed);

/// Every differentiable op, the segmentation and contrastive losses, the
/// network, and both stage losses on a 2-sample 16x16 batch.
std::vector<GradCheckResult> run_grad_check_suite(std::uint64_t seed, const GradCheckOptions& options = {});

void print_grad_check(std::ostream& os, const std::vector<GradCheckResult>& results);

}  // namespace elsnet
