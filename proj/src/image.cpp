#include "elsnet/image.hpp"

#include <algorithm>
#include <cmath>

namespace elsnet {

std::size_t Mask::count(std::uint8_t k) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), k));
}

bool Mask::contains(std::uint8_t k) const { return std::find(labels.begin(), labels.end(), k) != labels.end(); }

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;

  const long H = static_cast<long>(image.height), W = static_cast<long>(image.width);
  std::vector<double> tmp(image.pixels.size());
  for (long r = 0; r < H; ++r)
    for (long c = 0; c < W; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const long cc = std::clamp(c + i, 0L, W - 1);
        acc += kernel[i + radius] * image.pixels[r * W + cc];
      }
      tmp[r * W + c] = acc;
    }
  Image out(image.height, image.width);
  for (long r = 0; r < H; ++r)
    for (long c = 0; c < W; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const long rr = std::clamp(r + i, 0L, H - 1);
        acc += kernel[i + radius] * tmp[rr * W + c];
      }
      out.pixels[r * W + c] = static_cast<float>(acc);
    }
  return out;
}

namespace {

template <typename Grid>
Grid rot90_impl(const Grid& in, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return in;
  const std::size_t H = in.height, W = in.width;
  Grid out = in;
  if (q == 2) {
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) out.at(r, c) = in.at(H - 1 - r, W - 1 - c);
    return out;
  }
  out.height = W;
  out.width = H;
  for (std::size_t r = 0; r < W; ++r)
    for (std::size_t c = 0; c < H; ++c)
      out.at(r, c) = q == 1 ? in.at(c, W - 1 - r) : in.at(H - 1 - c, r);
  return out;
}

template <typename Grid>
Grid flip_impl(const Grid& in) {
  Grid out = in;
  for (std::size_t r = 0; r < in.height; ++r)
    for (std::size_t c = 0; c < in.width; ++c) out.at(r, c) = in.at(r, in.width - 1 - c);
  return out;
}

}  // namespace

Image rot90(const Image& image, int quarter_turns) { return rot90_impl(image, quarter_turns); }
Mask rot90(const Mask& mask, int quarter_turns) { return rot90_impl(mask, quarter_turns); }
Image flip_horizontal(const Image& image) { return flip_impl(image); }
Mask flip_horizontal(const Mask& mask) { return flip_impl(mask); }

}  // namespace elsnet
