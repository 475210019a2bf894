#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "elsnet/image.hpp"
#include "elsnet/rng.hpp"
#include "elsnet/tensor.hpp"

namespace fixture {

inline std::vector<double> uniform(std::size_t n, elsnet::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline elsnet::Tensor64 tensor(elsnet::Dims dims, elsnet::Rng& rng, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = elsnet::numel_of(dims);
  return elsnet::Tensor64::from(std::move(dims), uniform(n, rng, lo, hi));
}

inline std::vector<double> values(const elsnet::Tensor64& t) { return {t.data().begin(), t.data().end()}; }

/// Labels 0..K drawn as a few random rectangles over a background of 0.
inline elsnet::Mask blocks(std::size_t H, std::size_t W, int K, elsnet::Rng& rng, int rects = 4) {
  elsnet::Mask m(H, W, 0);
  for (int i = 0; i < rects; ++i) {
    const std::size_t r0 = rng.index(H), c0 = rng.index(W);
    const std::size_t r1 = r0 + 1 + rng.index(H - r0), c1 = c0 + 1 + rng.index(W - c0);
    const auto k = static_cast<std::uint8_t>(rng.index(static_cast<std::size_t>(K) + 1));
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) m.at(r, c) = k;
  }
  return m;
}

/// Independent random label per pixel.
inline elsnet::Mask noise(std::size_t H, std::size_t W, int K, elsnet::Rng& rng) {
  elsnet::Mask m(H, W, 0);
  for (auto& v : m.labels) v = static_cast<std::uint8_t>(rng.index(static_cast<std::size_t>(K) + 1));
  return m;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("elsnet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixture
