#include <doctest.h>

#include <cmath>

#include "elsnet/ops.hpp"
#include "elsnet/pcem.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace elsnet;
using namespace elsnet::pcem;

namespace {

Prototype<double> proto(int k, std::vector<double> v) {
  Prototype<double> p;
  p.k = k;
  p.present = true;
  p.pixel_count = 1;
  const std::size_t n = v.size();
  p.v = Tensor64::from({n}, std::move(v));
  return p;
}

Prototype<double> absent(int k) {
  Prototype<double> p;
  p.k = k;
  return p;
}

// Two images, two categories; only one anchor has both a positive and a negative.
BatchPrototypes<double> closed_form_batch() {
  BatchPrototypes<double> b;
  b.add_image({proto(0, {0, 1}), proto(1, {1, 0})}, "a");
  b.add_image({absent(0), proto(1, {1, 0})}, "b");
  return b;
}

// Scalar reference for N = 2, where the positive is the only other image.
double two_image_loss(const std::vector<std::optional<std::vector<double>>>& p, std::size_t K, double tau) {
  auto unit = [](std::vector<double> v) {
    double s = 0;
    for (double a : v) s += a * a;
    for (double& a : v) a /= std::sqrt(s);
    return v;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double total = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      const auto& anchor = p[n * K + k];
      const auto& pos = p[(1 - n) * K + k];
      if (!anchor || !pos) continue;
      std::vector<double> negs;
      for (std::size_t j = 0; j < K; ++j)
        if (j != k && p[(1 - n) * K + j]) negs.push_back(dot(unit(*anchor), unit(*p[(1 - n) * K + j])) / tau);
      if (negs.empty()) continue;
      const double s_pos = dot(unit(*anchor), unit(*pos)) / tau;
      double z = std::exp(s_pos);
      for (double s : negs) z += std::exp(s);
      total += -std::log(std::exp(s_pos) / z);
    }
  return total;
}

}  // namespace

TEST_SUITE("pcem") {
  TEST_CASE("closed form") {
    PcemOptions o;
    o.tau = 1.0;
    const double l = contrastive_loss(closed_form_batch(), o, 1).item();
    CHECK(l == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-12));
    CHECK(l == doctest::Approx(0.3133).epsilon(1e-4 / 0.3133));
  }

  TEST_CASE("constant embedding gives that constant as every prototype") {
    Rng rng(3);
    std::vector<double> x(4 * 8 * 8);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t p = 0; p < 64; ++p) x[c * 64 + p] = 0.1 * static_cast<double>(c) - 0.2;
    const Mask m = fixture::blocks(32, 32, 3, rng);
    for (const auto& p : compute_prototypes(Tensor64::from({4, 8, 8}, x), m, 4))
      if (p.present)
        for (std::size_t c = 0; c < 4; ++c) CHECK(p.v[c] == doctest::Approx(0.1 * static_cast<double>(c) - 0.2));
  }

  TEST_CASE("all-background mask leaves organ prototypes absent") {
    Rng rng(1);
    const auto protos = compute_prototypes(fixture::tensor({3, 4, 4}, rng), Mask(16, 16, 0), 4);
    CHECK(protos[0].present);
    for (int k = 1; k < 4; ++k) CHECK_FALSE(protos[k].present);
  }

  TEST_CASE("prototypes match per-pixel averages") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t h = 4 + rng.index(5), w = 4 + rng.index(5);
      const bool resize = trial % 2 == 1;
      const Mask m = fixture::blocks(resize ? 2 * h : h, resize ? 3 * w : w, 3, rng);
      auto x = fixture::tensor({5, h, w}, rng);
      const auto protos = compute_prototypes(x, m, 4);
      for (int k = 0; k < 4; ++k) {
        const auto want = oracle::prototype(fixture::values(x), 5, h, w, m, k);
        REQUIRE(protos[k].present == want.has_value());
        if (!want) continue;
        for (std::size_t c = 0; c < 5; ++c) CHECK(protos[k].v[c] == doctest::Approx((*want)[c]).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("loss matches the two-image reference and is non-negative") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t K = 2 + rng.index(3), C = 3;
      BatchPrototypes<double> b;
      std::vector<std::optional<std::vector<double>>> ref;
      for (int n = 0; n < 2; ++n) {
        std::vector<Prototype<double>> ps;
        for (std::size_t k = 0; k < K; ++k) {
          if (rng.bernoulli(0.2)) {
            ps.push_back(absent(static_cast<int>(k)));
            ref.emplace_back();
          } else {
            auto v = fixture::uniform(C, rng);
            ps.push_back(proto(static_cast<int>(k), v));
            ref.emplace_back(v);
          }
        }
        b.add_image(std::move(ps), "img" + std::to_string(n));
      }
      PcemOptions o;
      o.tau = rng.uniform(0.05, 1.0);
      const double l = contrastive_loss(b, o, trial).item();
      CHECK(l >= 0.0);
      CHECK(l == doctest::Approx(two_image_loss(ref, K, o.tau)).epsilon(1e-9));
    }
  }

  TEST_CASE("rescaling a prototype leaves the loss unchanged") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      BatchPrototypes<double> a, b;
      const double s = rng.uniform(0.1, 10.0);
      for (int n = 0; n < 3; ++n) {
        std::vector<Prototype<double>> pa, pb;
        for (int k = 0; k < 3; ++k) {
          auto v = fixture::uniform(4, rng);
          pa.push_back(proto(k, v));
          if (n == 1 && k == 2)
            for (double& x : v) x *= s;
          pb.push_back(proto(k, v));
        }
        a.add_image(pa, "i" + std::to_string(n));
        b.add_image(pb, "i" + std::to_string(n));
      }
      CHECK(std::abs(contrastive_loss(a, PcemOptions{}, 4).item() - contrastive_loss(b, PcemOptions{}, 4).item()) < 1e-6);
    }
  }

  TEST_CASE("batch order does not matter") {
    Rng rng(13);
    std::vector<std::vector<Prototype<double>>> imgs;
    for (int n = 0; n < 4; ++n) {
      std::vector<Prototype<double>> ps;
      for (int k = 0; k < 3; ++k) ps.push_back(proto(k, fixture::uniform(4, rng)));
      imgs.push_back(ps);
    }
    BatchPrototypes<double> fwd, rev;
    for (int n = 0; n < 4; ++n) fwd.add_image(imgs[n], "k" + std::to_string(n));
    for (int n = 3; n >= 0; --n) rev.add_image(imgs[n], "k" + std::to_string(n));
    CHECK(contrastive_loss(fwd, PcemOptions{}, 77).item() == doctest::Approx(contrastive_loss(rev, PcemOptions{}, 77).item()).epsilon(1e-12));
  }

  TEST_CASE("no surviving anchor gives exactly zero") {
    BatchPrototypes<double> b;
    b.add_image({proto(0, {1, 0}), absent(1)}, "a");
    b.add_image({absent(0), proto(1, {0, 1})}, "b");
    CHECK(contrastive_loss(b, PcemOptions{}, 1).item() == 0.0);
  }

  TEST_CASE("backward reaches both embeddings") {
    Rng rng(2);
    auto x0 = fixture::tensor({3, 4, 4}, rng).set_requires_grad(true);
    auto x1 = fixture::tensor({3, 4, 4}, rng).set_requires_grad(true);
    const Mask m0 = fixture::blocks(8, 8, 2, rng), m1 = fixture::blocks(8, 8, 2, rng);
    BatchPrototypes<double> b;
    b.add_image(compute_prototypes(x0, m0, 3), "a");
    b.add_image(compute_prototypes(x1, m1, 3), "b");
    auto l = contrastive_loss(b, PcemOptions{}, 3);
    backward(l);
    CHECK(std::isfinite(l.item()));
    CHECK(x0.has_grad());
    CHECK(x1.has_grad());
  }

  TEST_CASE("option checks") {
    PcemOptions o;
    o.tau = 0.0;
    CHECK_THROWS_AS(o.validate(), ConfigError);
    BatchPrototypes<double> one;
    one.add_image({proto(0, {1, 0})}, "a");
    CHECK_THROWS_AS(contrastive_loss(one, PcemOptions{}, 1), ConfigError);
  }
}
