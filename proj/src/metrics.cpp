#include "elsnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "elsnet/ops.hpp"

namespace elsnet {

using nlohmann::json;

template <typename T>
BasicTensor<T> seg_loss(const BasicTensor<T>& logits, const Mask& target) {
  if (logits.ndim() != 3) throw DimensionError("seg_loss: logits must be [K,H,W]");
  const std::size_t K = logits.dim(0), H = logits.dim(1), W = logits.dim(2), P = H * W;
  if (target.height != H || target.width != W)
    throw DimensionError("seg_loss: mask is " + std::to_string(target.height) + "x" + std::to_string(target.width) +
                         ", logits are " + std::to_string(H) + "x" + std::to_string(W));
  std::vector<T> onehot(K * P, T(0));
  std::vector<T> gsum(K, T(0));
  for (std::size_t p = 0; p < P; ++p) {
    const std::size_t k = target.labels[p];
    if (k >= K)
      throw ContractError("seg_loss: mask value " + std::to_string(k) + " has no logit channel (K=" +
                          std::to_string(K) + ")");
    onehot[k * P + p] = T(1);
    gsum[k] += T(1);
  }
  const auto g = BasicTensor<T>::from({K, H, W}, std::move(onehot));

  const auto ce = ops::scale(ops::sum(ops::mul(ops::log_softmax_channel(logits), g)), T(-1) / static_cast<T>(P));

  const auto prob = ops::softmax_channel(logits);
  const auto inter = ops::sum_spatial(ops::mul(prob, g));
  auto denom = ops::add(ops::sum_spatial(prob), BasicTensor<T>::from({K}, std::move(gsum)));
  const T eps = static_cast<T>(kDiceSmooth);
  const auto dice = ops::div(ops::add_scalar(ops::scale(inter, T(2)), eps), ops::add_scalar(denom, eps));
  const auto dice_loss = ops::add_scalar(ops::scale(ops::mean(dice), T(-1)), T(1));
  return ops::add(ops::scale(ce, T(0.5)), ops::scale(dice_loss, T(0.5)));
}

template Tensor seg_loss(const Tensor&, const Mask&);
template Tensor64 seg_loss(const Tensor64&, const Mask&);

double dsc(const Mask& pred, const Mask& gt, int k) {
  if (pred.labels.size() != gt.labels.size()) throw DimensionError("dsc: mask sizes differ");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool a = pred.labels[i] == k, b = gt.labels[i] == k;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::size_t> boundary_pixels(const Mask& mask, int k) {
  const std::size_t H = mask.height, W = mask.width;
  auto in = [&](long r, long c) {
    return r >= 0 && c >= 0 && r < static_cast<long>(H) && c < static_cast<long>(W) && mask.at(r, c) == k;
  };
  std::vector<std::size_t> out;
  for (long r = 0; r < static_cast<long>(H); ++r)
    for (long c = 0; c < static_cast<long>(W); ++c)
      if (in(r, c) && !(in(r - 1, c) && in(r + 1, c) && in(r, c - 1) && in(r, c + 1)))
        out.push_back(static_cast<std::size_t>(r) * W + static_cast<std::size_t>(c));
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95_sentinel(std::size_t height, std::size_t width) {
  return std::sqrt(static_cast<double>(height * height + width * width));
}

namespace {

constexpr double kFar = 1e20;

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher), in place over a strided line.
void edt_1d(double* f, std::size_t n, std::size_t stride, std::vector<double>& d, std::vector<std::size_t>& v,
            std::vector<double>& z) {
  d.resize(n);
  v.resize(n);
  z.resize(n + 1);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -kFar;
  z[1] = kFar;
  auto fv = [&](std::size_t q) { return f[q * stride]; };
  for (std::size_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      const double p = static_cast<double>(v[k]);
      const double qd = static_cast<double>(q);
      s = ((fv(q) + qd * qd) - (fv(v[k]) + p * p)) / (2 * qd - 2 * p);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kFar;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = dq * dq + fv(v[k]);
  }
  for (std::size_t q = 0; q < n; ++q) f[q * stride] = d[q];
}

// Squared Euclidean distance from every pixel to the nearest listed site.
std::vector<double> squared_distance_map(const std::vector<std::size_t>& sites, std::size_t H, std::size_t W) {
  std::vector<double> f(H * W, kFar);
  for (std::size_t s : sites) f[s] = 0.0;
  std::vector<double> d, z;
  std::vector<std::size_t> v;
  for (std::size_t c = 0; c < W; ++c) edt_1d(f.data() + c, H, W, d, v, z);
  for (std::size_t r = 0; r < H; ++r) edt_1d(f.data() + r * W, W, 1, d, v, z);
  return f;
}

double directed_p95(const std::vector<std::size_t>& from, const std::vector<double>& sq_to) {
  std::vector<double> dist;
  dist.reserve(from.size());
  for (std::size_t p : from) dist.push_back(std::sqrt(sq_to[p]));
  return percentile(std::move(dist), 0.95);
}

}  // namespace

double hd95(const Mask& pred, const Mask& gt, int k) {
  if (pred.height != gt.height || pred.width != gt.width) throw DimensionError("hd95: mask sizes differ");
  const auto bp = boundary_pixels(pred, k), bg = boundary_pixels(gt, k);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty()) return hd95_sentinel(gt.height, gt.width);
  const auto to_gt = squared_distance_map(bg, gt.height, gt.width);
  const auto to_pred = squared_distance_map(bp, gt.height, gt.width);
  return std::max(directed_p95(bp, to_gt), directed_p95(bg, to_pred));
}

MetricReport evaluate(const Segmenter& segmenter, const std::vector<Sample>& test, int num_classes) {
  if (test.empty()) throw ContractError("evaluate: test split is empty");
  MetricReport r;
  r.num_classes = num_classes;
  r.predictor = segmenter.describe();
  const std::size_t K = static_cast<std::size_t>(num_classes);
  r.class_dsc.assign(K, 0.0);
  r.class_hd95.assign(K, 0.0);
  r.class_count.assign(K, 0);
  for (const Sample& s : test) {
    const Mask pred = segmenter.predict(s);
    SampleMetrics m;
    m.id = s.id;
    for (int k = 1; k <= num_classes; ++k) {
      const bool counted = pred.contains(static_cast<std::uint8_t>(k)) || s.mask.contains(static_cast<std::uint8_t>(k));
      m.dsc.push_back(dsc(pred, s.mask, k));
      m.hd95.push_back(hd95(pred, s.mask, k));
      m.counted.push_back(counted);
      if (counted) {
        r.class_dsc[k - 1] += m.dsc.back();
        r.class_hd95[k - 1] += m.hd95.back();
        ++r.class_count[k - 1];
      }
    }
    r.samples.push_back(std::move(m));
  }
  std::size_t classes = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (r.class_count[k] == 0) {
      r.class_dsc[k] = 1.0;
      continue;
    }
    r.class_dsc[k] /= static_cast<double>(r.class_count[k]);
    r.class_hd95[k] /= static_cast<double>(r.class_count[k]);
    r.avg_dsc += r.class_dsc[k];
    r.avg_hd95 += r.class_hd95[k];
    ++classes;
  }
  if (classes == 0) {
    r.avg_dsc = 1.0;
  } else {
    r.avg_dsc /= static_cast<double>(classes);
    r.avg_hd95 /= static_cast<double>(classes);
  }
  return r;
}

void MetricReport::print_table(std::ostream& os, const std::string& label) const {
  const std::string name = label.empty() ? predictor : label;
  os << std::left << std::setw(24) << "Method" << std::right << std::setw(9) << "DSC.Avg" << std::setw(10)
     << "HD95.Avg";
  for (int k = 1; k <= num_classes; ++k) os << std::setw(9) << ("C" + std::to_string(k));
  os << '\n'
     << std::left << std::setw(24) << name.substr(0, 23) << std::right << std::fixed << std::setprecision(3)
     << std::setw(9) << avg_dsc << std::setprecision(2) << std::setw(10) << avg_hd95 << std::setprecision(3);
  for (double d : class_dsc) os << std::setw(9) << d;
  os << '\n';
}

void MetricReport::write_csv(std::ostream& os) const {
  os << "method,dsc_avg,hd95_avg";
  for (int k = 1; k <= num_classes; ++k) os << ",dsc_c" << k;
  for (int k = 1; k <= num_classes; ++k) os << ",hd95_c" << k;
  os << '\n' << predictor << ',' << std::setprecision(6) << avg_dsc << ',' << avg_hd95;
  for (double d : class_dsc) os << ',' << d;
  for (double h : class_hd95) os << ',' << h;
  os << '\n';
}

bool MetricReport::operator==(const MetricReport& o) const { return json(*this) == json(o); }

void to_json(json& j, const MetricReport& r) {
  json samples = json::array();
  for (const auto& s : r.samples)
    samples.push_back({{"id", s.id}, {"dsc", s.dsc}, {"hd95", s.hd95}, {"counted", s.counted}});
  j = json{{"num_classes", r.num_classes}, {"predictor", r.predictor}, {"class_dsc", r.class_dsc},
           {"class_hd95", r.class_hd95},   {"class_count", r.class_count}, {"avg_dsc", r.avg_dsc},
           {"avg_hd95", r.avg_hd95},       {"samples", samples}};
}

void from_json(const json& j, MetricReport& r) {
  j.at("num_classes").get_to(r.num_classes);
  j.at("predictor").get_to(r.predictor);
  j.at("class_dsc").get_to(r.class_dsc);
  j.at("class_hd95").get_to(r.class_hd95);
  j.at("class_count").get_to(r.class_count);
  j.at("avg_dsc").get_to(r.avg_dsc);
  j.at("avg_hd95").get_to(r.avg_hd95);
  r.samples.clear();
  for (const auto& s : j.at("samples")) {
    SampleMetrics m;
    s.at("id").get_to(m.id);
    s.at("dsc").get_to(m.dsc);
    s.at("hd95").get_to(m.hd95);
    m.counted = s.at("counted").get<std::vector<bool>>();
    r.samples.push_back(std::move(m));
  }
}

}  // namespace elsnet
