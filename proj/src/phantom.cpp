#include "elsnet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace elsnet {

using nlohmann::json;

void PhantomConfig::validate() const {
  if (num_classes < 2 || num_classes > 8) throw ConfigError("phantom.num_classes must lie in [2, 8]");
  if (size != 64 && size != 128) throw ConfigError("phantom.size must be 64 or 128");
  if (n_unlabeled < 0 || n_background < 0 || n_test < 0) throw ConfigError("phantom split counts must be >= 0");
  if (organ_scale <= 0.0) throw ConfigError("phantom.organ_scale must be positive");
  if (presence_prob < 0.0 || presence_prob > 1.0) throw ConfigError("phantom.presence_prob must lie in [0, 1]");
}

void to_json(json& j, const PhantomConfig& c) {
  j = json{{"num_classes", c.num_classes}, {"size", c.size},
           {"n_unlabeled", c.n_unlabeled}, {"n_background", c.n_background},
           {"n_test", c.n_test},           {"organ_scale", c.organ_scale},
           {"presence_prob", c.presence_prob}, {"noise_sigma", c.noise_sigma},
           {"max_blur_sigma", c.max_blur_sigma}};
}

void from_json(const json& j, PhantomConfig& c) {
  c.num_classes = j.value("num_classes", c.num_classes);
  c.size = j.value("size", c.size);
  c.n_unlabeled = j.value("n_unlabeled", c.n_unlabeled);
  c.n_background = j.value("n_background", c.n_background);
  c.n_test = j.value("n_test", c.n_test);
  c.organ_scale = j.value("organ_scale", c.organ_scale);
  c.presence_prob = j.value("presence_prob", c.presence_prob);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.max_blur_sigma = j.value("max_blur_sigma", c.max_blur_sigma);
}

OrganProfile organ_profile(int k) {
  // Mean offsets stay within +-0.15 of the body intensity: low contrast on purpose.
  static constexpr OrganProfile kTable[8] = {
      {+0.12, 0, 0.130, 1.00, 2.0}, {-0.11, 1, 0.110, 0.50, 2.5}, {+0.06, 2, 0.075, 0.85, 4.0},
      {-0.05, 2, 0.085, 0.70, 2.0}, {+0.14, 1, 0.070, 0.60, 3.0}, {-0.14, 0, 0.100, 0.90, 2.2},
      {+0.09, 1, 0.065, 0.75, 2.0}, {-0.08, 0, 0.080, 0.55, 3.5}};
  if (k < 1 || k > 8) throw ConfigError("organ class must lie in [1, 8]");
  return kTable[k - 1];
}

namespace {

struct Body {
  double cy, cx, ay, ax, angle;

  // Normalized elliptic radius of (y, x); <= 1 inside.
  double radius(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double u = dx * std::cos(angle) + dy * std::sin(angle);
    const double v = -dx * std::sin(angle) + dy * std::cos(angle);
    return std::sqrt((u / ax) * (u / ax) + (v / ay) * (v / ay));
  }
};

struct Organ {
  double cy, cx, a, b, angle, exponent;
  double harm_amp[2];
  int harm_freq[2];
  double harm_phase[2];

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double u = dx * std::cos(angle) + dy * std::sin(angle);
    const double v = -dx * std::sin(angle) + dy * std::cos(angle);
    const double phi = std::atan2(v / b, u / a);
    double f = 1.0;
    for (int i = 0; i < 2; ++i) f += harm_amp[i] * std::sin(harm_freq[i] * phi + harm_phase[i]);
    const double r = std::pow(std::pow(std::abs(u / a), exponent) + std::pow(std::abs(v / b), exponent),
                              1.0 / exponent);
    return r <= f;
  }

  double extent() const { return std::max(a, b) * 1.2; }
};

double footprint_ratio(const PhantomConfig& config) {
  const double H = config.size;
  double organs = 0.0;
  for (int k = 1; k <= config.num_classes; ++k) {
    const double r = organ_profile(k).radius_fraction * config.organ_scale * H * 1.2;
    organs += std::numbers::pi * r * r;
  }
  const double body = std::numbers::pi * 0.40 * H * 0.42 * H;
  return organs / body;
}

}  // namespace

Sample render_phantom(const PhantomConfig& config, const std::vector<bool>& present, Rng& rng, bool require_all) {
  const std::size_t N = static_cast<std::size_t>(config.size);
  const double S = config.size;
  Body body{S / 2 + rng.uniform(-3, 3), S / 2 + rng.uniform(-3, 3), rng.uniform(0.40, 0.46) * S,
            rng.uniform(0.42, 0.48) * S, rng.uniform(-0.2, 0.2)};
  const double body_mean = rng.uniform(0.35, 0.45);

  // Low-frequency shading across the body.
  double wave_fy[3], wave_fx[3], wave_phase[3], wave_amp[3];
  for (int i = 0; i < 3; ++i) {
    wave_fy[i] = rng.uniform(0.5, 2.5) / S;
    wave_fx[i] = rng.uniform(0.5, 2.5) / S;
    wave_phase[i] = rng.uniform(0, 2 * std::numbers::pi);
    wave_amp[i] = rng.uniform(0.005, 0.015);
  }

  Image image(N, N, 0.03f);
  Mask mask(N, N, 0);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < N; ++c) {
      if (body.radius(r, c) > 1.0) continue;
      double v = body_mean;
      for (int i = 0; i < 3; ++i)
        v += wave_amp[i] * std::sin(2 * std::numbers::pi * (wave_fy[i] * r + wave_fx[i] * c) + wave_phase[i]);
      image.at(r, c) = static_cast<float>(v);
    }

  for (int k = 1; k <= config.num_classes; ++k) {
    if (!present[k - 1]) continue;
    const OrganProfile prof = organ_profile(k);
    const double radius = prof.radius_fraction * config.organ_scale * S * rng.uniform(0.8, 1.2);
    Organ organ{};
    organ.a = radius;
    organ.b = radius * prof.aspect;
    organ.angle = rng.uniform(0, std::numbers::pi);
    organ.exponent = prof.exponent;
    for (int i = 0; i < 2; ++i) {
      organ.harm_amp[i] = rng.uniform(0.0, 0.08);
      organ.harm_freq[i] = 2 + static_cast<int>(rng.index(4));
      organ.harm_phase[i] = rng.uniform(0, 2 * std::numbers::pi);
    }
    const double intensity = body_mean + prof.intensity_offset + rng.uniform(-0.03, 0.03);
    const double stripe_angle = rng.uniform(0, std::numbers::pi);
    const double stripe_period = rng.uniform(4.0, 6.0);
    const double stripe_phase = rng.uniform(0, 2 * std::numbers::pi);

    std::vector<std::size_t> pixels;
    bool placed = false;
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      const double margin = organ.extent();
      organ.cy = body.cy + rng.uniform(-1, 1) * std::max(1.0, body.ay - margin);
      organ.cx = body.cx + rng.uniform(-1, 1) * std::max(1.0, body.ax - margin);
      if (body.radius(organ.cy, organ.cx) > 1.0) continue;
      pixels.clear();
      bool clash = false;
      const long r0 = std::max(0L, static_cast<long>(std::floor(organ.cy - margin)));
      const long r1 = std::min(static_cast<long>(N) - 1, static_cast<long>(std::ceil(organ.cy + margin)));
      const long c0 = std::max(0L, static_cast<long>(std::floor(organ.cx - margin)));
      const long c1 = std::min(static_cast<long>(N) - 1, static_cast<long>(std::ceil(organ.cx + margin)));
      for (long r = r0; r <= r1 && !clash; ++r)
        for (long c = c0; c <= c1; ++c) {
          if (!organ.contains(static_cast<double>(r), static_cast<double>(c))) continue;
          if (mask.at(r, c) != 0 || body.radius(r, c) > 1.0) {
            clash = true;
            break;
          }
          pixels.push_back(static_cast<std::size_t>(r) * N + static_cast<std::size_t>(c));
        }
      placed = !clash && pixels.size() >= 4;
    }
    if (!placed) {
      if (require_all)
        throw GenerationError("could not place organ class " + std::to_string(k) + " without overlap");
      continue;
    }

    // Speckle lives on a 2x2-block lattice.
    std::vector<double> speckle;
    if (prof.texture == 2) {
      speckle.resize((N / 2 + 1) * (N / 2 + 1));
      for (double& s : speckle) s = 0.04 * rng.normal();
    }
    for (std::size_t p : pixels) {
      const std::size_t r = p / N, c = p % N;
      double v = intensity;
      if (prof.texture == 1)
        v += 0.05 * std::sin(2 * std::numbers::pi *
                                 (c * std::cos(stripe_angle) + r * std::sin(stripe_angle)) / stripe_period +
                             stripe_phase);
      else if (prof.texture == 2)
        v += speckle[(r / 2) * (N / 2 + 1) + c / 2];
      image.pixels[p] = static_cast<float>(v);
      mask.labels[p] = static_cast<std::uint8_t>(k);
    }
  }

  image = gaussian_blur(image, rng.uniform(0.0, config.max_blur_sigma));
  for (float& v : image.pixels)
    v = static_cast<float>(std::clamp(v + config.noise_sigma * rng.normal(), 0.0, 1.0));

  Sample s;
  s.image = std::move(image);
  s.mask = std::move(mask);
  return s;
}

Dataset generate_phantom_dataset(std::uint64_t seed, const PhantomConfig& config) {
  config.validate();
  if (footprint_ratio(config) > 0.6)
    throw GenerationError("organs of " + std::to_string(config.num_classes) + " classes cannot fit in a " +
                          std::to_string(config.size) + "px image at organ_scale " +
                          std::to_string(config.organ_scale));

  Dataset d;
  d.manifest.num_classes = config.num_classes;
  d.manifest.height = d.manifest.width = static_cast<std::size_t>(config.size);
  d.manifest.seed = seed;
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(fnv1a64(json(config).dump())));
  d.manifest.config_hash = hash;

  auto make_split = [&](const char* name, int count, auto presence, bool require_all) {
    std::vector<Sample> list;
    for (int i = 0; i < count; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03d", name, i);
      Rng rng(derive_seed(seed, std::string_view(id)));
      std::vector<bool> present(config.num_classes);
      for (int k = 0; k < config.num_classes; ++k) present[k] = presence(rng);
      Sample s = render_phantom(config, present, rng, require_all);
      s.id = id;
      s.split = name;
      list.push_back(std::move(s));
    }
    d.set_split(name, std::move(list));
  };

  auto sometimes = [&](Rng& r) { return r.bernoulli(config.presence_prob); };
  make_split(split::kExemplar, 1, [](Rng&) { return true; }, true);
  make_split(split::kUnlabeled, config.n_unlabeled, sometimes, false);
  make_split(split::kBackground, config.n_background, [](Rng&) { return false; }, true);
  make_split(split::kTest, config.n_test, sometimes, false);
  validate(d);
  return d;
}

}  // namespace elsnet
