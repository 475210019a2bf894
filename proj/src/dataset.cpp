#include "elsnet/dataset.hpp"

#include <fstream>

#include "elsnet/elst.hpp"

namespace elsnet {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const DatasetManifest& m) {
  j = json{{"num_classes", m.num_classes}, {"height", m.height},           {"width", m.width},
           {"splits", m.splits},           {"seed", m.seed},               {"config_hash", m.config_hash}};
}

void from_json(const json& j, DatasetManifest& m) {
  j.at("num_classes").get_to(m.num_classes);
  j.at("height").get_to(m.height);
  j.at("width").get_to(m.width);
  j.at("splits").get_to(m.splits);
  j.at("seed").get_to(m.seed);
  j.at("config_hash").get_to(m.config_hash);
}

const Sample& Dataset::exemplar() const {
  const auto& e = split(split::kExemplar);
  if (e.size() != 1) throw ValidationError("exemplar split must hold exactly one sample");
  return e.front();
}

const std::vector<Sample>& Dataset::split(const std::string& name) const {
  static const std::vector<Sample> empty;
  auto it = samples.find(name);
  return it == samples.end() ? empty : it->second;
}

void Dataset::set_split(const std::string& name, std::vector<Sample> s) {
  std::vector<std::string> ids;
  for (const auto& x : s) ids.push_back(x.id);
  manifest.splits[name] = std::move(ids);
  samples[name] = std::move(s);
}

void save_sample(const Sample& sample, int num_classes, const fs::path& dir) {
  fs::create_directories(dir);
  elst::write(dir / (sample.id + ".img.elst"), sample.image.dims(), std::span<const float>(sample.image.pixels));
  elst::write(dir / (sample.id + ".mask.elst"), Dims{sample.mask.height, sample.mask.width},
              std::span<const std::uint8_t>(sample.mask.labels));
  std::ofstream(dir / (sample.id + ".json"))
      << json{{"id", sample.id}, {"split", sample.split}, {"num_classes", num_classes}}.dump(2) << '\n';
}

Sample load_sample(const fs::path& dir, const std::string& id) {
  std::ifstream sidecar(dir / (id + ".json"));
  if (!sidecar) throw FormatError("missing sidecar " + (dir / (id + ".json")).string(), 0);
  json meta;
  try {
    meta = json::parse(sidecar);
  } catch (const json::parse_error& e) {
    throw FormatError("bad sidecar " + (dir / (id + ".json")).string() + ": " + e.what(), e.byte);
  }
  const int num_classes = meta.at("num_classes").get<int>();

  const auto img = elst::read(dir / (id + ".img.elst"));
  if (img.dtype != elst::DType::F32) throw FormatError("image container must hold f32 data", 6);
  if (img.dims.size() != 3 || img.dims[0] != 1) throw FormatError("image container must be 1 x H x W", 7);
  const auto msk = elst::read(dir / (id + ".mask.elst"));
  if (msk.dtype != elst::DType::U8) throw FormatError("mask container must hold u8 data", 6);
  if (msk.dims.size() != 2) throw FormatError("mask container must be H x W", 7);
  if (msk.dims[0] != img.dims[1] || msk.dims[1] != img.dims[2])
    throw ValidationError("mask extents do not match image extents for sample " + id);

  Sample s;
  s.id = meta.at("id").get<std::string>();
  s.split = meta.at("split").get<std::string>();
  s.image.height = img.dims[1];
  s.image.width = img.dims[2];
  s.image.pixels = img.f32;
  s.mask.height = msk.dims[0];
  s.mask.width = msk.dims[1];
  s.mask.labels = msk.u8;
  for (std::uint8_t v : s.mask.labels)
    if (v > num_classes)
      throw ValidationError("sample " + id + " has mask value " + std::to_string(v) + " but only " +
                            std::to_string(num_classes) + " classes");
  return s;
}

void validate(const Dataset& dataset) {
  const int K = dataset.manifest.num_classes;
  const Sample& ex = dataset.exemplar();
  for (int k = 1; k <= K; ++k)
    if (!ex.mask.contains(static_cast<std::uint8_t>(k)))
      throw ValidationError("exemplar is missing class " + std::to_string(k));
  for (const auto& [name, list] : dataset.samples)
    for (const auto& s : list)
      for (std::uint8_t v : s.mask.labels)
        if (v > K) throw ValidationError("sample " + s.id + " has out-of-range mask value " + std::to_string(v));
}

void save_split(const Dataset& dataset, const std::string& name, const fs::path& root) {
  for (const auto& s : dataset.split(name)) save_sample(s, dataset.manifest.num_classes, root / name);
  DatasetManifest m = dataset.manifest;
  m.root = root;
  std::ofstream(root / "manifest.json") << json(m).dump(2) << '\n';
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
  fs::create_directories(root);
  for (const auto& [name, list] : dataset.samples)
    for (const auto& s : list) save_sample(s, dataset.manifest.num_classes, root / name);
  DatasetManifest m = dataset.manifest;
  m.root = root;
  std::ofstream(root / "manifest.json") << json(m).dump(2) << '\n';
}

Dataset load_dataset(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json under " + root.string());
  Dataset d;
  d.manifest = json::parse(in).get<DatasetManifest>();
  d.manifest.root = root;
  for (const auto& [name, ids] : d.manifest.splits) {
    auto& list = d.samples[name];
    for (const auto& id : ids) list.push_back(load_sample(root / name, id));
  }
  validate(d);
  return d;
}

}  // namespace elsnet
