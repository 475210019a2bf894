#include "elsnet/esm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace elsnet::esm {

using nlohmann::json;

bool TransformSpec::is_identity() const {
  return scale == 1.0 && rotation_deg == 0.0 && blur_sigma == 0.0 && intensity_scale == 1.0 &&
         intensity_shift == 0.0 && dx == 0.0 && dy == 0.0;
}

void to_json(json& j, const TransformSpec& t) {
  j = json{{"scale", t.scale},
           {"rotation_deg", t.rotation_deg},
           {"blur_sigma", t.blur_sigma},
           {"intensity_scale", t.intensity_scale},
           {"intensity_shift", t.intensity_shift},
           {"dx", t.dx},
           {"dy", t.dy}};
}

void from_json(const json& j, TransformSpec& t) {
  j.at("scale").get_to(t.scale);
  j.at("rotation_deg").get_to(t.rotation_deg);
  j.at("blur_sigma").get_to(t.blur_sigma);
  j.at("intensity_scale").get_to(t.intensity_scale);
  j.at("intensity_shift").get_to(t.intensity_shift);
  j.at("dx").get_to(t.dx);
  j.at("dy").get_to(t.dy);
}

void TransformRanges::check(const TransformSpec& t) const {
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ConfigError("scale range must satisfy 0 < min <= max");
  if (t.scale < scale_min || t.scale > scale_max) throw ConfigError("transform scale outside configured range");
  if (t.blur_sigma < 0.0) throw ConfigError("blur_sigma must be >= 0");
  if (t.intensity_scale <= 0.0) throw ConfigError("intensity_scale must be positive");
}

void to_json(json& j, const TransformRanges& r) {
  j = json{{"scale_min", r.scale_min},
           {"scale_max", r.scale_max},
           {"rotation_max_deg", r.rotation_max_deg},
           {"blur_max", r.blur_max},
           {"intensity_scale_min", r.intensity_scale_min},
           {"intensity_scale_max", r.intensity_scale_max},
           {"intensity_shift_max", r.intensity_shift_max},
           {"background_shift_fraction", r.background_shift_fraction},
           {"organ_center_margin", r.organ_center_margin}};
}

void from_json(const json& j, TransformRanges& r) {
  r.scale_min = j.value("scale_min", r.scale_min);
  r.scale_max = j.value("scale_max", r.scale_max);
  r.rotation_max_deg = j.value("rotation_max_deg", r.rotation_max_deg);
  r.blur_max = j.value("blur_max", r.blur_max);
  r.intensity_scale_min = j.value("intensity_scale_min", r.intensity_scale_min);
  r.intensity_scale_max = j.value("intensity_scale_max", r.intensity_scale_max);
  r.intensity_shift_max = j.value("intensity_shift_max", r.intensity_shift_max);
  r.background_shift_fraction = j.value("background_shift_fraction", r.background_shift_fraction);
  r.organ_center_margin = j.value("organ_center_margin", r.organ_center_margin);
}

std::string TransformStrategy::name() const {
  std::string s;
  auto add = [&](bool on, const char* tag) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += tag;
  };
  add(intensity_exemplar, "Int.E");
  add(intensity_background, "Int.B");
  add(geometric_exemplar, "Geo.E");
  add(geometric_background, "Geo.B");
  return s.empty() ? "none" : s;
}

std::vector<TransformStrategy> TransformStrategy::ablation_rows() {
  // {Int.E, Int.B, Geo.E, Geo.B}
  return {{false, false, false, false}, {true, false, true, false}, {true, true, false, false},
          {false, false, true, true},   {true, false, true, true},   {true, true, true, false},
          {true, true, true, true}};
}

void to_json(json& j, const SynthesisOptions& o) {
  j = json{{"intensity_exemplar", o.strategy.intensity_exemplar},
           {"intensity_background", o.strategy.intensity_background},
           {"geometric_exemplar", o.strategy.geometric_exemplar},
           {"geometric_background", o.strategy.geometric_background},
           {"ranges", o.ranges},
           {"max_retries", o.max_retries},
           {"black_background_prob", o.black_background_prob}};
}

void from_json(const json& j, SynthesisOptions& o) {
  o.strategy.intensity_exemplar = j.value("intensity_exemplar", o.strategy.intensity_exemplar);
  o.strategy.intensity_background = j.value("intensity_background", o.strategy.intensity_background);
  o.strategy.geometric_exemplar = j.value("geometric_exemplar", o.strategy.geometric_exemplar);
  o.strategy.geometric_background = j.value("geometric_background", o.strategy.geometric_background);
  if (j.contains("ranges")) j.at("ranges").get_to(o.ranges);
  o.max_retries = j.value("max_retries", o.max_retries);
  o.black_background_prob = j.value("black_background_prob", o.black_background_prob);
}

OrganCrop extract_organ(const Sample& exemplar, int k) {
  if (k < 1 || k > 255) throw ContractError("extract_organ: class " + std::to_string(k) + " is not an organ class");
  const Mask& m = exemplar.mask;
  long r0 = static_cast<long>(m.height), r1 = -1, c0 = static_cast<long>(m.width), c1 = -1;
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c)
      if (m.at(r, c) == k) {
        r0 = std::min(r0, static_cast<long>(r));
        r1 = std::max(r1, static_cast<long>(r));
        c0 = std::min(c0, static_cast<long>(c));
        c1 = std::max(c1, static_cast<long>(c));
      }
  if (r1 < 0) throw MissingCategoryError("exemplar has no pixels of class " + std::to_string(k));
  OrganCrop crop;
  crop.k = k;
  crop.top = r0;
  crop.left = c0;
  const std::size_t h = static_cast<std::size_t>(r1 - r0 + 1), w = static_cast<std::size_t>(c1 - c0 + 1);
  crop.image = Image(h, w, 0.0f);
  crop.mask = Mask(h, w, 0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      if (m.at(r0 + r, c0 + c) == k) {
        crop.mask.at(r, c) = 1;
        crop.image.at(r, c) = exemplar.image.at(r0 + r, c0 + c);
      }
  return crop;
}

namespace {

struct Warp {
  double cos_t, sin_t, scale;

  explicit Warp(const TransformSpec& t)
      : cos_t(std::cos(t.rotation_deg * std::numbers::pi / 180.0)),
        sin_t(std::sin(t.rotation_deg * std::numbers::pi / 180.0)),
        scale(t.scale) {
    if (t.rotation_deg == 0.0) {
      cos_t = 1.0;
      sin_t = 0.0;
    }
  }

  // Output offset from the center -> source offset from the center.
  void inverse(double r, double c, double& sr, double& sc) const {
    sr = (r * cos_t + c * sin_t) / scale;
    sc = (-r * sin_t + c * cos_t) / scale;
  }
};

long floor_half(long v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

long nearest(double v) { return static_cast<long>(std::floor(v + 0.5)); }

}  // namespace

OrganCrop apply_geometric(const OrganCrop& crop, const TransformSpec& t) {
  if (t.scale <= 0.0) throw ConfigError("apply_geometric: scale must be positive");
  const Warp warp(t);
  const long h = static_cast<long>(crop.image.height), w = static_cast<long>(crop.image.width);
  const double ext_r = t.scale * (h * std::abs(warp.cos_t) + w * std::abs(warp.sin_t));
  const double ext_c = t.scale * (h * std::abs(warp.sin_t) + w * std::abs(warp.cos_t));
  // One spare pixel per side so rounding of the box origin never clips the organ.
  const long oh = static_cast<long>(std::ceil(ext_r - 1e-6)) + 2;
  const long ow = static_cast<long>(std::ceil(ext_c - 1e-6)) + 2;
  const long dy = static_cast<long>(std::lround(t.dy)), dx = static_cast<long>(std::lround(t.dx));

  OrganCrop out;
  out.k = crop.k;
  out.top = crop.top + dy + floor_half(h - oh);
  out.left = crop.left + dx + floor_half(w - ow);
  out.image = Image(static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), 0.0f);
  out.mask = Mask(static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), 0);

  const double half_h = (h - 1) / 2.0, half_w = (w - 1) / 2.0;
  auto in_organ = [&](long r, long c) { return r >= 0 && c >= 0 && r < h && c < w && crop.mask.at(r, c) != 0; };
  for (long i = 0; i < oh; ++i)
    for (long j = 0; j < ow; ++j) {
      // Offset from the original organ center, with the translation removed.
      const double rel_r = static_cast<double>(out.top + i - dy - crop.top) - half_h;
      const double rel_c = static_cast<double>(out.left + j - dx - crop.left) - half_w;
      double sr, sc;
      warp.inverse(rel_r, rel_c, sr, sc);
      sr += half_h;
      sc += half_w;
      if (!in_organ(nearest(sr), nearest(sc))) continue;
      const long r0 = static_cast<long>(std::floor(sr)), c0 = static_cast<long>(std::floor(sc));
      const double fr = sr - r0, fc = sc - c0;
      double acc = 0.0, wsum = 0.0;
      const double wts[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
      const long rr[4] = {r0, r0, r0 + 1, r0 + 1}, cc[4] = {c0, c0 + 1, c0, c0 + 1};
      for (int q = 0; q < 4; ++q)
        if (wts[q] > 0.0 && in_organ(rr[q], cc[q])) {
          acc += wts[q] * crop.image.at(rr[q], cc[q]);
          wsum += wts[q];
        }
      out.mask.at(i, j) = 1;
      out.image.at(i, j) = static_cast<float>(acc / wsum);
    }
  return out;
}

Sample apply_geometric(const Sample& sample, const TransformSpec& t) {
  if (t.scale <= 0.0) throw ConfigError("apply_geometric: scale must be positive");
  const Warp warp(t);
  const long H = static_cast<long>(sample.image.height), W = static_cast<long>(sample.image.width);
  const double ch = (H - 1) / 2.0, cw = (W - 1) / 2.0;
  const long dy = static_cast<long>(std::lround(t.dy)), dx = static_cast<long>(std::lround(t.dx));
  Sample out = sample;
  std::fill(out.image.pixels.begin(), out.image.pixels.end(), 0.0f);
  std::fill(out.mask.labels.begin(), out.mask.labels.end(), std::uint8_t{0});
  auto pixel = [&](long r, long c) -> double {
    return (r >= 0 && c >= 0 && r < H && c < W) ? sample.image.at(r, c) : 0.0;
  };
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j) {
      double sr, sc;
      warp.inverse(static_cast<double>(i - dy) - ch, static_cast<double>(j - dx) - cw, sr, sc);
      sr += ch;
      sc += cw;
      const long r0 = static_cast<long>(std::floor(sr)), c0 = static_cast<long>(std::floor(sc));
      const double fr = sr - r0, fc = sc - c0;
      double v = (1 - fr) * (1 - fc) * pixel(r0, c0);
      if (fc > 0) v += (1 - fr) * fc * pixel(r0, c0 + 1);
      if (fr > 0) v += fr * (1 - fc) * pixel(r0 + 1, c0);
      if (fr > 0 && fc > 0) v += fr * fc * pixel(r0 + 1, c0 + 1);
      out.image.at(i, j) = static_cast<float>(v);
      const long nr = nearest(sr), nc = nearest(sc);
      if (nr >= 0 && nc >= 0 && nr < H && nc < W) out.mask.at(i, j) = sample.mask.at(nr, nc);
    }
  return out;
}

Image apply_intensity(const Image& image, const TransformSpec& t) {
  if (t.blur_sigma == 0.0 && t.intensity_scale == 1.0 && t.intensity_shift == 0.0) return image;
  Image out = gaussian_blur(image, t.blur_sigma);
  for (float& v : out.pixels)
    v = static_cast<float>(std::clamp(v * t.intensity_scale + t.intensity_shift, 0.0, 1.0));
  return out;
}

void paste(Sample& canvas, const OrganCrop& crop) {
  const long H = static_cast<long>(canvas.mask.height), W = static_cast<long>(canvas.mask.width);
  std::size_t landed = 0;
  for (std::size_t i = 0; i < crop.mask.height; ++i)
    for (std::size_t j = 0; j < crop.mask.width; ++j) {
      if (!crop.mask.at(i, j)) continue;
      const long r = crop.top + static_cast<long>(i), c = crop.left + static_cast<long>(j);
      if (r < 0 || c < 0 || r >= H || c >= W) continue;
      ++landed;
    }
  if (landed == 0) throw PlacementError("organ class " + std::to_string(crop.k) + " lies entirely off the canvas");
  for (std::size_t i = 0; i < crop.mask.height; ++i)
    for (std::size_t j = 0; j < crop.mask.width; ++j) {
      if (!crop.mask.at(i, j)) continue;
      const long r = crop.top + static_cast<long>(i), c = crop.left + static_cast<long>(j);
      if (r < 0 || c < 0 || r >= H || c >= W) continue;
      canvas.image.at(r, c) = crop.image.at(i, j);
      canvas.mask.at(r, c) = static_cast<std::uint8_t>(crop.k);
    }
}

json log_to_json(const SynthesisLog& log) {
  json arr = json::array();
  json bg = log.background;
  bg["target"] = "background";
  bg["source"] = log.background_source;
  arr.push_back(bg);
  for (const auto& o : log.organs) {
    json e = o.spec;
    e["target"] = "organ";
    e["k"] = o.k;
    e["attempts"] = o.attempts;
    arr.push_back(e);
  }
  return arr;
}

SynthesisLog log_from_json(const json& j) {
  SynthesisLog log;
  for (const auto& e : j) {
    if (e.at("target") == "background") {
      log.background_source = e.at("source").get<std::string>();
      log.background = e.get<TransformSpec>();
    } else {
      log.organs.push_back({e.at("k").get<int>(), e.get<TransformSpec>(), e.at("attempts").get<int>()});
    }
  }
  return log;
}

TransformSpec draw_organ_transform(const TransformRanges& r, bool intensity, bool geometric, double center_y,
                                   double center_x, std::size_t height, std::size_t width, Rng& rng) {
  TransformSpec t;
  t.scale = rng.uniform(r.scale_min, r.scale_max);
  t.rotation_deg = rng.uniform(-r.rotation_max_deg, r.rotation_max_deg);
  const double ty = rng.uniform(r.organ_center_margin, 1.0 - r.organ_center_margin) * static_cast<double>(height);
  const double tx = rng.uniform(r.organ_center_margin, 1.0 - r.organ_center_margin) * static_cast<double>(width);
  t.dy = std::round(ty - center_y);
  t.dx = std::round(tx - center_x);
  t.blur_sigma = rng.uniform(0.0, r.blur_max);
  t.intensity_scale = rng.uniform(r.intensity_scale_min, r.intensity_scale_max);
  t.intensity_shift = rng.uniform(-r.intensity_shift_max, r.intensity_shift_max);
  if (!geometric) t.scale = 1.0, t.rotation_deg = 0.0, t.dx = 0.0, t.dy = 0.0;
  if (!intensity) t.blur_sigma = 0.0, t.intensity_scale = 1.0, t.intensity_shift = 0.0;
  return t;
}

TransformSpec draw_background_transform(const TransformRanges& r, bool intensity, bool geometric,
                                        std::size_t height, std::size_t width, Rng& rng) {
  TransformSpec t;
  t.scale = rng.uniform(r.scale_min, r.scale_max);
  t.rotation_deg = rng.uniform(-r.rotation_max_deg, r.rotation_max_deg);
  t.dy = std::round(rng.uniform(-1, 1) * r.background_shift_fraction * static_cast<double>(height));
  t.dx = std::round(rng.uniform(-1, 1) * r.background_shift_fraction * static_cast<double>(width));
  t.blur_sigma = rng.uniform(0.0, r.blur_max);
  t.intensity_scale = rng.uniform(r.intensity_scale_min, r.intensity_scale_max);
  t.intensity_shift = rng.uniform(-r.intensity_shift_max, r.intensity_shift_max);
  if (!geometric) t.scale = 1.0, t.rotation_deg = 0.0, t.dx = 0.0, t.dy = 0.0;
  if (!intensity) t.blur_sigma = 0.0, t.intensity_scale = 1.0, t.intensity_shift = 0.0;
  return t;
}

Sample synthesize_sample(const Sample& exemplar, const Sample& background, int num_classes,
                         const SynthesisOptions& options, Rng& rng, SynthesisLog* log) {
  for (std::uint8_t v : background.mask.labels)
    if (v != 0) throw ContractError("synthesize_sample: background " + background.id + " contains organ pixels");
  if (background.image.height != exemplar.image.height || background.image.width != exemplar.image.width)
    throw DimensionError("synthesize_sample: background and exemplar sizes differ");
  const auto& st = options.strategy;
  const std::size_t H = exemplar.image.height, W = exemplar.image.width;

  SynthesisLog local;
  local.background_source = background.id.empty() ? "black" : background.id;
  local.background = draw_background_transform(options.ranges, st.intensity_background, st.geometric_background, H,
                                               W, rng);
  Sample canvas = background;
  canvas.image = apply_intensity(canvas.image, local.background);
  canvas = apply_geometric(canvas, local.background);

  for (int k = 1; k <= num_classes; ++k) {
    // Crop once for the organ's original position; intensity is applied to the
    // whole exemplar before segregation.
    const OrganCrop base = extract_organ(exemplar, k);
    const double cy = base.top + (base.image.height - 1) / 2.0;
    const double cx = base.left + (base.image.width - 1) / 2.0;
    bool placed = false;
    for (int attempt = 1; attempt <= options.max_retries && !placed; ++attempt) {
      const TransformSpec t = draw_organ_transform(options.ranges, st.intensity_exemplar, st.geometric_exemplar, cy,
                                                   cx, H, W, rng);
      Sample tinted = exemplar;
      tinted.image = apply_intensity(exemplar.image, t);
      const OrganCrop moved = apply_geometric(extract_organ(tinted, k), t);
      try {
        paste(canvas, moved);
      } catch (const PlacementError&) {
        continue;
      }
      local.organs.push_back({k, t, attempt});
      placed = true;
    }
    if (!placed)
      throw SynthesisError("organ class " + std::to_string(k) + " fell off the canvas after " +
                           std::to_string(options.max_retries) + " placement attempts");
  }
  canvas.split = split::kSynthetic;
  if (log) *log = std::move(local);
  return canvas;
}

SyntheticSet build_synthetic_set(const Dataset& dataset, int count, const SynthesisOptions& options,
                                 std::uint64_t seed) {
  if (count < 1) throw ConfigError("synthetic sample count must be >= 1");
  const Sample& exemplar = dataset.exemplar();
  const auto& backgrounds = dataset.split(split::kBackground);
  Sample black;
  black.image = Image(exemplar.image.height, exemplar.image.width, 0.0f);
  black.mask = Mask(exemplar.mask.height, exemplar.mask.width, 0);

  SyntheticSet out;
  for (int b = 0; b < count; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    const bool use_black = backgrounds.empty() || rng.bernoulli(options.black_background_prob);
    const std::size_t pick = rng.index(std::max<std::size_t>(backgrounds.size(), 1));
    const Sample& bg = use_black ? black : backgrounds[pick];
    SynthesisLog log;
    Sample s;
    try {
      s = synthesize_sample(exemplar, bg, dataset.manifest.num_classes, options, rng, &log);
    } catch (const SynthesisError& e) {
      throw SynthesisError("synthetic sample " + std::to_string(b) + ": " + e.what());
    }
    char id[32];
    std::snprintf(id, sizeof id, "synthetic_%04d", b);
    s.id = id;
    out.samples.push_back(std::move(s));
    out.logs.push_back(std::move(log));
  }
  return out;
}

SyntheticSet build_synthetic_dataset(Dataset& dataset, int count, const SynthesisOptions& options,
                                     std::uint64_t seed, const std::filesystem::path& root) {
  SyntheticSet set = build_synthetic_set(dataset, count, options, seed);
  dataset.set_split(split::kSynthetic, set.samples);
  if (!root.empty()) {
    save_split(dataset, split::kSynthetic, root);
    for (std::size_t b = 0; b < set.samples.size(); ++b)
      std::ofstream(root / split::kSynthetic / (set.samples[b].id + ".transforms.json"))
          << log_to_json(set.logs[b]).dump(2) << '\n';
  }
  return set;
}

}  // namespace elsnet::esm
