#pragma once

// Brute-force reference implementations. They share no code with the library
// beyond plain data types, and favour the most literal loop over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "elsnet/dataset.hpp"
#include "elsnet/esm.hpp"
#include "elsnet/image.hpp"

namespace oracle {

using elsnet::Image;
using elsnet::Mask;
using elsnet::Sample;

inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t cin, std::size_t H, std::size_t W,
                                  const std::vector<double>& w, std::size_t cout, std::size_t k,
                                  const std::vector<double>& bias, int stride, int pad, std::size_t& oh,
                                  std::size_t& ow) {
  oh = (H + 2 * pad - k) / stride + 1;
  ow = (W + 2 * pad - k) / stride + 1;
  std::vector<double> y(cout * oh * ow, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
              const long r = static_cast<long>(i * stride + a) - pad, q = static_cast<long>(j * stride + b) - pad;
              if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
              acc += x[(c * H + r) * W + q] * w[((o * cin + c) * k + a) * k + b];
            }
        y[(o * oh + i) * ow + j] = acc;
      }
  return y;
}

// Half-pixel-center bilinear sample of one channel, edges clamped.
inline double bilinear_at(const std::vector<double>& ch, std::size_t H, std::size_t W, std::size_t oh, std::size_t ow,
                          std::size_t i, std::size_t j) {
  const double sy = (static_cast<double>(i) + 0.5) * static_cast<double>(H) / static_cast<double>(oh) - 0.5;
  const double sx = (static_cast<double>(j) + 0.5) * static_cast<double>(W) / static_cast<double>(ow) - 0.5;
  const double y = std::clamp(sy, 0.0, static_cast<double>(H - 1));
  const double x = std::clamp(sx, 0.0, static_cast<double>(W - 1));
  const std::size_t y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * (1 - fx) * ch[y0 * W + x0] + (1 - fy) * fx * ch[y0 * W + x1] + fy * (1 - fx) * ch[y1 * W + x0] +
         fy * fx * ch[y1 * W + x1];
}

inline double seg_loss(const std::vector<double>& logits, std::size_t K, const Mask& target) {
  const std::size_t P = target.height * target.width;
  double ce = 0.0;
  std::vector<double> inter(K, 0.0), psum(K, 0.0), gsum(K, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, logits[k * P + p]);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logits[k * P + p] - mx);
    const std::size_t t = target.labels[p];
    ce += -(logits[t * P + p] - mx - std::log(z));
    for (std::size_t k = 0; k < K; ++k) {
      const double prob = std::exp(logits[k * P + p] - mx) / z;
      const double g = k == t ? 1.0 : 0.0;
      inter[k] += prob * g;
      psum[k] += prob;
      gsum[k] += g;
    }
  }
  double dice = 0.0;
  for (std::size_t k = 0; k < K; ++k) dice += (2 * inter[k] + 1e-5) / (psum[k] + gsum[k] + 1e-5);
  return 0.5 * ce / static_cast<double>(P) + 0.5 * (1.0 - dice / static_cast<double>(K));
}

// Mean embedding column over pixels whose resized class-k indicator is > 0
// (or > 0.5). Empty when no pixel qualifies.
inline std::optional<std::vector<double>> prototype(const std::vector<double>& x, std::size_t C, std::size_t h,
                                                    std::size_t w, const Mask& mask, int k, bool half = false) {
  std::vector<double> onehot(mask.height * mask.width);
  for (std::size_t p = 0; p < onehot.size(); ++p) onehot[p] = mask.labels[p] == k ? 1.0 : 0.0;
  std::vector<double> v(C, 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double ind = (h == mask.height && w == mask.width) ? onehot[i * w + j]
                                                               : bilinear_at(onehot, mask.height, mask.width, h, w, i, j);
      if (!(half ? ind > 0.5 : ind > 0.0)) continue;
      ++n;
      for (std::size_t c = 0; c < C; ++c) v[c] += x[(c * h + i) * w + j];
    }
  if (n == 0) return std::nullopt;
  for (double& a : v) a /= static_cast<double>(n);
  return v;
}

inline double dsc(const Mask& p, const Mask& g, int k) {
  std::size_t both = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    const bool a = p.labels[i] == k, b = g.labels[i] == k;
    both += a && b;
    np += a;
    ng += b;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

inline std::vector<std::pair<long, long>> boundary(const Mask& m, int k) {
  std::vector<std::pair<long, long>> out;
  const long H = static_cast<long>(m.height), W = static_cast<long>(m.width);
  auto in = [&](long r, long c) { return r >= 0 && c >= 0 && r < H && c < W && m.at(r, c) == k; };
  for (long r = 0; r < H; ++r)
    for (long c = 0; c < W; ++c)
      if (in(r, c) && !(in(r - 1, c) && in(r + 1, c) && in(r, c - 1) && in(r, c + 1))) out.emplace_back(r, c);
  return out;
}

inline double percentile95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double pos = 0.95 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double hd95(const Mask& p, const Mask& g, int k) {
  const auto bp = boundary(p, k), bg = boundary(g, k);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty()) return std::hypot(static_cast<double>(p.height), static_cast<double>(p.width));
  auto directed = [](const auto& from, const auto& to) {
    std::vector<double> d;
    for (const auto& [r, c] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [r2, c2] : to) best = std::min(best, std::hypot(double(r - r2), double(c - c2)));
      d.push_back(best);
    }
    return d;
  };
  return std::max(percentile95(directed(bp, bg)), percentile95(directed(bg, bp)));
}

// 2-D Gaussian with replicated borders, evaluated as one double sum per pixel.
inline std::vector<double> blur(const Image& im, double sigma) {
  std::vector<double> out(im.pixels.begin(), im.pixels.end());
  if (sigma <= 0.0) return out;
  const int R = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  double total = 0.0;
  for (int a = -R; a <= R; ++a) total += std::exp(-0.5 * a * a / (sigma * sigma));
  const long H = static_cast<long>(im.height), W = static_cast<long>(im.width);
  for (long r = 0; r < H; ++r)
    for (long c = 0; c < W; ++c) {
      double acc = 0.0;
      for (int a = -R; a <= R; ++a)
        for (int b = -R; b <= R; ++b) {
          const double wgt = std::exp(-0.5 * a * a / (sigma * sigma)) * std::exp(-0.5 * b * b / (sigma * sigma));
          acc += wgt * im.at(std::clamp(r + a, 0L, H - 1), std::clamp(c + b, 0L, W - 1));
        }
      out[r * W + c] = acc / (total * total);
    }
  return out;
}

inline std::vector<double> intensity(const Image& im, const elsnet::esm::TransformSpec& t) {
  if (t.blur_sigma == 0.0 && t.intensity_scale == 1.0 && t.intensity_shift == 0.0)
    return {im.pixels.begin(), im.pixels.end()};
  std::vector<double> v = blur(im, t.blur_sigma);
  for (double& a : v) a = std::clamp(static_cast<double>(static_cast<float>(a)) * t.intensity_scale + t.intensity_shift, 0.0, 1.0);
  return v;
}

struct Rotation {
  double cs, sn;
  explicit Rotation(double deg)
      : cs(deg == 0.0 ? 1.0 : std::cos(deg * std::numbers::pi / 180.0)),
        sn(deg == 0.0 ? 0.0 : std::sin(deg * std::numbers::pi / 180.0)) {}
};

inline long round_half_up(double v) { return static_cast<long>(std::floor(v + 0.5)); }

struct Replay {
  std::vector<double> image;
  Mask mask;
};

// Rebuilds a synthetic sample from the exemplar, its background source and the
// logged transforms by visiting every canvas pixel and mapping it back into
// the background and into each organ's source region.
inline Replay replay(const Sample& exemplar, const Sample* background, const elsnet::esm::SynthesisLog& log) {
  const long H = static_cast<long>(exemplar.image.height), W = static_cast<long>(exemplar.image.width);
  Replay out;
  out.image.assign(H * W, 0.0);
  out.mask = Mask(H, W, 0);

  // Background: intensity on the whole image, then a zero-padded warp about the canvas center.
  {
    const Image src = background ? background->image : Image(H, W, 0.0f);
    const auto& t = log.background;
    const std::vector<double> tinted = intensity(src, t);
    std::vector<float> tf(tinted.begin(), tinted.end());
    const Rotation rot(t.rotation_deg);
    const double ch = (H - 1) / 2.0, cw = (W - 1) / 2.0;
    auto px = [&](long r, long c) { return (r >= 0 && c >= 0 && r < H && c < W) ? double(tf[r * W + c]) : 0.0; };
    for (long R = 0; R < H; ++R)
      for (long C = 0; C < W; ++C) {
        const double yr = static_cast<double>(R - std::lround(t.dy)) - ch, xr = static_cast<double>(C - std::lround(t.dx)) - cw;
        const double sy = (yr * rot.cs + xr * rot.sn) / t.scale + ch;
        const double sx = (-yr * rot.sn + xr * rot.cs) / t.scale + cw;
        const long y0 = static_cast<long>(std::floor(sy)), x0 = static_cast<long>(std::floor(sx));
        const double fy = sy - y0, fx = sx - x0;
        out.image[R * W + C] = (1 - fy) * (1 - fx) * px(y0, x0) + (1 - fy) * fx * px(y0, x0 + 1) +
                               fy * (1 - fx) * px(y0 + 1, x0) + fy * fx * px(y0 + 1, x0 + 1);
      }
  }

  for (const auto& draw : log.organs) {
    const int k = draw.k;
    const auto& t = draw.spec;
    long top = H, bottom = -1, left = W, right = -1;
    for (long r = 0; r < H; ++r)
      for (long c = 0; c < W; ++c)
        if (exemplar.mask.at(r, c) == k) {
          top = std::min(top, r), bottom = std::max(bottom, r);
          left = std::min(left, c), right = std::max(right, c);
        }
    const double half_h = (bottom - top) / 2.0, half_w = (right - left) / 2.0;
    const std::vector<double> tinted = intensity(exemplar.image, t);
    auto organ = [&](long r, long c) { return r >= 0 && c >= 0 && r < H && c < W && exemplar.mask.at(r, c) == k; };
    const Rotation rot(t.rotation_deg);
    const long dy = std::lround(t.dy), dx = std::lround(t.dx);
    for (long R = 0; R < H; ++R)
      for (long C = 0; C < W; ++C) {
        const double yr = static_cast<double>(R - dy - top) - half_h, xr = static_cast<double>(C - dx - left) - half_w;
        const double sy = (yr * rot.cs + xr * rot.sn) / t.scale + half_h;
        const double sx = (-yr * rot.sn + xr * rot.cs) / t.scale + half_w;
        if (!organ(top + round_half_up(sy), left + round_half_up(sx))) continue;
        const long y0 = static_cast<long>(std::floor(sy)), x0 = static_cast<long>(std::floor(sx));
        const double fy = sy - y0, fx = sx - x0;
        double acc = 0.0, wsum = 0.0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            const double wgt = (a ? fy : 1 - fy) * (b ? fx : 1 - fx);
            if (wgt > 0.0 && organ(top + y0 + a, left + x0 + b)) {
              acc += wgt * static_cast<float>(tinted[(top + y0 + a) * W + left + x0 + b]);
              wsum += wgt;
            }
          }
        out.image[R * W + C] = acc / wsum;
        out.mask.at(R, C) = static_cast<std::uint8_t>(k);
      }
  }
  return out;
}

}  // namespace oracle
