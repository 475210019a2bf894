#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elsnet/tensor.hpp"

namespace elsnet {

/// Single-channel f32 image (logically 1 x height x width).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  Dims dims() const { return {1, height, width}; }

  template <typename T = float>
  BasicTensor<T> to_tensor() const {
    return BasicTensor<T>::from(dims(), std::vector<T>(pixels.begin(), pixels.end()));
  }

  bool operator==(const Image&) const = default;
};

/// Per-pixel class indices; 0 is background.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
  std::size_t count(std::uint8_t k) const;
  bool contains(std::uint8_t k) const;

  bool operator==(const Mask&) const = default;
};

struct Sample {
  std::string id;
  std::string split;
  Image image;
  Mask mask;
};

/// Separable Gaussian blur with replicated borders; sigma <= 0 returns the input.
Image gaussian_blur(const Image& image, double sigma);

/// Rotates by quarter turns counter-clockwise (as displayed, rows pointing down).
Image rot90(const Image& image, int quarter_turns);
Mask rot90(const Mask& mask, int quarter_turns);
Image flip_horizontal(const Image& image);
Mask flip_horizontal(const Mask& mask);

}  // namespace elsnet
