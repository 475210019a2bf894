#include "elsnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "elsnet/metrics.hpp"
#include "elsnet/ops.hpp"
#include "elsnet/pcem.hpp"
#include "elsnet/rng.hpp"
#include "elsnet/segnet.hpp"
#include "elsnet/trainer.hpp"

namespace elsnet {

GradCheckResult check_gradients(const std::string& name, const std::function<Tensor64()>& loss,
                                std::vector<Tensor64> inputs, const GradCheckOptions& options, std::uint64_t seed) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs)
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.numel(), 0.0));

  // One coordinate from every input first, then uniform over all of them.
  Rng rng(seed);
  std::size_t total = 0;
  for (const auto& t : inputs) total += t.numel();
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size() && coords.size() < options.max_coords; ++i)
    coords.emplace_back(i, rng.index(inputs[i].numel()));
  while (coords.size() < std::min(options.max_coords, total)) {
    std::size_t flat = rng.index(total), i = 0;
    while (flat >= inputs[i].numel()) flat -= inputs[i++].numel();
    coords.emplace_back(i, flat);
  }

  GradCheckResult r;
  r.name = name;
  for (const auto& [i, j] : coords) {
    auto v = inputs[i].mutable_data();
    const double orig = v[j];
    v[j] = orig + options.step;
    const double up = loss().item();
    v[j] = orig - options.step;
    const double down = loss().item();
    v[j] = orig;
    const double numeric = (up - down) / (2 * options.step);
    const double a = analytic[i][j];
    const double abs_err = std::abs(a - numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.rel_floor});
    ++r.probed;
    r.max_rel = std::max(r.max_rel, rel);
    if (rel < options.rel_tol)
      ++r.within_rel;
    else
      r.max_abs_outside_rel = std::max(r.max_abs_outside_rel, abs_err);
  }
  r.passed = r.probed > 0 &&
             static_cast<double>(r.within_rel) >= options.min_rel_fraction * static_cast<double>(r.probed) &&
             r.max_abs_outside_rel < options.abs_tol;
  return r;
}

namespace {

Tensor64 random_tensor(Dims dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel_of(dims));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor64::from(std::move(dims), std::move(v));
}

// Values bounded away from zero, for kinks and poles.
Tensor64 away_from_zero(Dims dims, Rng& rng) {
  std::vector<double> v(numel_of(dims));
  for (double& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.2, 1.0);
  return Tensor64::from(std::move(dims), std::move(v));
}

// Reduces any output to a scalar with fixed random weights so every output
// coordinate contributes a distinct amount.
Tensor64 weigh(const Tensor64& y, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, random_tensor(y.dims(), rng)));
}

Mask blob_mask(std::size_t H, std::size_t W, int K, Rng& rng) {
  Mask m(H, W, 0);
  for (int k = 1; k <= K; ++k) {
    const double cy = rng.uniform(2, H - 3.0), cx = rng.uniform(2, W - 3.0), rad = rng.uniform(1.5, 3.5);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        if ((r - cy) * (r - cy) + (c - cx) * (c - cx) <= rad * rad) m.at(r, c) = static_cast<std::uint8_t>(k);
  }
  return m;
}

Sample random_sample(const std::string& id, std::size_t H, std::size_t W, int K, Rng& rng) {
  Sample s;
  s.id = id;
  s.mask = blob_mask(H, W, K, rng);
  s.image = Image(H, W);
  for (std::size_t p = 0; p < H * W; ++p)
    s.image.pixels[p] = static_cast<float>(0.3 + 0.1 * s.mask.labels[p] + 0.05 * rng.uniform(-1, 1));
  return s;
}

}  // namespace

std::vector<GradCheckResult> run_grad_check_suite(std::uint64_t seed, const GradCheckOptions& options) {
  std::vector<GradCheckResult> out;
  Rng rng(seed);
  std::uint64_t case_id = 0;
  auto check = [&](const std::string& name, std::vector<Tensor64> inputs,
                   const std::function<Tensor64(const std::vector<Tensor64>&)>& f) {
    const std::uint64_t s = derive_seed(seed, ++case_id);
    out.push_back(check_gradients(name, [&] { return f(inputs); }, inputs, options, s));
  };
  auto unary = [&](const std::string& name, Tensor64 x, Tensor64 (*op)(const Tensor64&)) {
    const std::uint64_t w = rng.next_u64();
    check(name, {x}, [op, w](const auto& in) { return weigh(op(in[0]), w); });
  };
  auto binary = [&](const std::string& name, Tensor64 a, Tensor64 b,
                    Tensor64 (*op)(const Tensor64&, const Tensor64&)) {
    const std::uint64_t w = rng.next_u64();
    check(name, {a, b}, [op, w](const auto& in) { return weigh(op(in[0], in[1]), w); });
  };

  const Dims d{2, 5, 6};
  binary("add", random_tensor(d, rng), random_tensor(d, rng), &ops::add<double>);
  binary("sub", random_tensor(d, rng), random_tensor(d, rng), &ops::sub<double>);
  binary("mul", random_tensor(d, rng), random_tensor(d, rng), &ops::mul<double>);
  binary("div", random_tensor(d, rng), away_from_zero(d, rng), &ops::div<double>);
  {
    const std::uint64_t w = rng.next_u64();
    check("scale", {random_tensor(d, rng)}, [w](const auto& in) { return weigh(ops::scale(in[0], 1.7), w); });
    check("add_scalar", {random_tensor(d, rng)},
          [w](const auto& in) { return weigh(ops::add_scalar(in[0], -0.3), w); });
  }
  unary("relu", away_from_zero(d, rng), &ops::relu<double>);
  unary("exp", random_tensor(d, rng), &ops::exp<double>);
  unary("log", random_tensor(d, rng, 0.2, 2.0), &ops::log<double>);
  unary("sum", random_tensor(d, rng), &ops::sum<double>);
  unary("mean", random_tensor(d, rng), &ops::mean<double>);
  unary("sum_spatial", random_tensor(d, rng), &ops::sum_spatial<double>);
  binary("dot", random_tensor({7}, rng), random_tensor({7}, rng), &ops::dot<double>);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      const std::uint64_t w = rng.next_u64();
      const std::size_t k = 3, H = stride == 2 ? 7 : 6;
      check("conv2d stride " + std::to_string(stride) + " pad " + std::to_string(pad),
            {random_tensor({2, H, H}, rng), random_tensor({3, 2, k, k}, rng), random_tensor({3}, rng)},
            [=](const auto& in) { return weigh(ops::conv2d(in[0], in[1], in[2], stride, pad), w); });
    }
  unary("max_pool2d", random_tensor({2, 6, 8}, rng), &ops::max_pool2d<double>);
  unary("upsample_nearest2x", random_tensor({2, 3, 4}, rng), &ops::upsample_nearest2x<double>);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{9, 7}, {3, 4}}) {
    const std::uint64_t wt = rng.next_u64();
    check("bilinear_resize to " + std::to_string(h) + "x" + std::to_string(w), {random_tensor({2, 5, 6}, rng)},
          [=](const auto& in) { return weigh(ops::bilinear_resize(in[0], h, w), wt); });
  }
  {
    const std::uint64_t w = rng.next_u64();
    check("instance_norm", {random_tensor({3, 4, 5}, rng), random_tensor({3}, rng), random_tensor({3}, rng)},
          [w](const auto& in) { return weigh(ops::instance_norm(in[0], in[1], in[2]), w); });
  }
  unary("softmax_channel", random_tensor({4, 3, 3}, rng, -2, 2), &ops::softmax_channel<double>);
  unary("log_softmax_channel", random_tensor({4, 3, 3}, rng, -2, 2), &ops::log_softmax_channel<double>);
  {
    const std::uint64_t w = rng.next_u64();
    check("concat_channels", {random_tensor({2, 3, 4}, rng), random_tensor({1, 3, 4}, rng)},
          [w](const auto& in) { return weigh(ops::concat_channels<double>({in[0], in[1]}), w); });
  }
  {
    const std::uint64_t w = rng.next_u64();
    std::vector<std::uint8_t> ind(20);
    for (auto& v : ind) v = rng.bernoulli(0.4);
    ind[3] = 1;
    check("masked_mean", {random_tensor({3, 4, 5}, rng)}, [w, ind](const auto& in) {
      return weigh(ops::masked_mean(in[0], std::span<const std::uint8_t>(ind)), w);
    });
  }
  unary("l2_normalize", random_tensor({6}, rng), [](const Tensor64& v) { return ops::l2_normalize(v); });
  {
    const std::uint64_t w = rng.next_u64();
    check("stack", {random_tensor({1}, rng), random_tensor({1}, rng), random_tensor({1}, rng)},
          [w](const auto& in) { return weigh(ops::stack<double>({in[0], in[1], in[2]}), w); });
  }
  unary("logsumexp", random_tensor({5}, rng, -3, 3), &ops::logsumexp<double>);
  unary("select", random_tensor({5}, rng), [](const Tensor64& v) { return ops::select(v, 2); });

  // Losses.
  {
    const Mask target = blob_mask(6, 6, 3, rng);
    check("seg_loss", {random_tensor({4, 6, 6}, rng, -2, 2)},
          [target](const auto& in) { return seg_loss(in[0], target); });
  }
  {
    const Mask m0 = blob_mask(8, 8, 2, rng), m1 = blob_mask(8, 8, 2, rng);
    const pcem::PcemOptions opt;
    check("contrastive_loss", {random_tensor({5, 4, 4}, rng), random_tensor({5, 4, 4}, rng)},
          [=](const auto& in) {
            pcem::BatchPrototypes<double> b;
            b.add_image(pcem::compute_prototypes(in[0], m0, 3), "a");
            b.add_image(pcem::compute_prototypes(in[1], m1, 3), "b");
            return pcem::contrastive_loss(b, opt, 7);
          });
  }

  // Network and composite stage losses on a 2-sample 16x16 batch.
  SegNetConfig cfg;
  cfg.num_outputs = 3;
  cfg.height = cfg.width = 16;
  cfg.widths = {4, 8};
  cfg.embed_channels = 8;
  const SegNetwork<double> net = SegNetwork<float>(cfg, derive_seed(seed, std::string_view("net"))).cast<double>();
  std::vector<Tensor64> params;
  for (const auto& p : net.parameters()) params.push_back(p.second);
  GradCheckOptions wide = options;
  wide.max_coords = std::max<std::size_t>(options.max_coords, 64);
  auto check_net = [&](const std::string& name, const std::function<Tensor64()>& f) {
    out.push_back(check_gradients(name, f, params, wide, derive_seed(seed, ++case_id)));
  };
  const Sample ex = random_sample("exemplar_000", 16, 16, 2, rng);
  const Sample other = random_sample("other_000", 16, 16, 2, rng);
  {
    const std::uint64_t w = rng.next_u64();
    check_net("segnet forward", [&] { return weigh(net.forward(ex.image.to_tensor<double>()), w); });
  }
  HyperParams hp;
  hp.batch_size = 2;
  hp.lambda_s = 0.7;
  hp.lambda_c = 0.3;
  hp.lambda_u = 0.5;
  auto member = [](const Sample& s, Role role, const std::string& key) {
    BatchMember m{s, role, key, s.mask};
    return m;
  };
  const Batch b1{member(ex, Role::Exemplar, "exemplar"), member(other, Role::Synthetic, "synthetic/0")};
  const Batch b2{member(ex, Role::Exemplar, "exemplar"), member(other, Role::Pseudo, "pseudo/0")};
  check_net("stage1 loss", [&] { return stage1_loss(net, b1, hp, true, 11).total; });
  check_net("stage2 loss", [&] { return stage2_loss(net, b2, hp, true, 12).total; });
  return out;
}

void print_grad_check(std::ostream& os, const std::vector<GradCheckResult>& results) {
  os << std::left << std::setw(30) << "check" << std::right << std::setw(8) << "coords" << std::setw(10)
     << "rel<tol" << std::setw(12) << "max rel" << std::setw(12) << "max abs*" << "  result\n";
  for (const auto& r : results)
    os << std::left << std::setw(30) << r.name << std::right << std::setw(8) << r.probed << std::setw(10)
       << r.within_rel << std::scientific << std::setprecision(2) << std::setw(12) << r.max_rel << std::setw(12)
       << r.max_abs_outside_rel << std::defaultfloat << "  " << (r.passed ? "PASS" : "FAIL") << '\n';
}

}  // namespace elsnet
