#include "elsnet/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "elsnet/elst.hpp"

namespace elsnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  json names = json::array();
  json j{{"kind", ckpt.kind},   {"step", ckpt.step},
         {"stage", ckpt.stage}, {"rng_state", ckpt.rng_state},
         {"config_hash", ckpt.config_hash}, {"extra", ckpt.extra}};
  if (ckpt.kind == "network") {
    if (!ckpt.net) throw ContractError("save_checkpoint: network checkpoint without a network");
    fs::create_directories(tmp / "params");
    const auto& params = ckpt.net->parameters();
    for (const auto& [name, t] : params) {
      names.push_back(name);
      elst::write(tmp / "params" / (name + ".elst"), t.dims(), t.data());
    }
    j["network"] = ckpt.net->config();
    j["weights_hash"] = hex64(ckpt.net->weights_hash());
    j["adam_t"] = ckpt.adam.t;
    if (ckpt.adam.initialized()) {
      fs::create_directories(tmp / "adam");
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = params[i];
        elst::write(tmp / "adam" / (name + ".m.elst"), t.dims(), std::span<const float>(ckpt.adam.m[i]));
        elst::write(tmp / "adam" / (name + ".v.elst"), t.dims(), std::span<const float>(ckpt.adam.v[i]));
      }
    }
  }
  j["params"] = names;
  std::ofstream(tmp / "checkpoint.json") << j.dump(2) << '\n';
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

namespace {

std::vector<float> read_f32(const fs::path& file, const Dims& dims) {
  auto a = elst::read(file);
  if (a.dtype != elst::DType::F32) throw FormatError(file.string() + ": expected f32 payload", 6);
  if (a.dims != dims)
    throw FormatError(file.string() + ": dims " + dims_to_string(a.dims) + " do not match " + dims_to_string(dims), 8);
  return std::move(a.f32);
}

}  // namespace

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw std::runtime_error("no checkpoint at " + dir.string() + " (missing checkpoint.json)");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("bad checkpoint manifest " + (dir / "checkpoint.json").string() + ": " + e.what(), e.byte);
  }
  Checkpoint c;
  c.kind = j.value("kind", std::string("network"));
  c.step = j.value("step", std::int64_t{0});
  c.stage = j.value("stage", std::string());
  c.rng_state = j.value("rng_state", std::string());
  c.config_hash = j.value("config_hash", std::string());
  c.extra = j.value("extra", json::object());
  if (c.kind == "oracle") return c;
  if (c.kind != "network") throw FormatError("unknown checkpoint kind '" + c.kind + "'", 0);

  const SegNetConfig config = j.at("network").get<SegNetConfig>();
  // Shapes come from a throwaway network of the same config.
  const SegNet shape_ref(config, 0);
  std::vector<SegNet::Param> params;
  const auto names = j.at("params").get<std::vector<std::string>>();
  if (names.size() != shape_ref.parameters().size())
    throw FormatError("checkpoint lists " + std::to_string(names.size()) + " parameters, network has " +
                      std::to_string(shape_ref.parameters().size()),
                      0);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Dims& dims = shape_ref.parameters()[i].second.dims();
    params.emplace_back(names[i], Tensor::from(dims, read_f32(dir / "params" / (names[i] + ".elst"), dims)));
  }
  c.net = std::make_shared<SegNet>(config, std::move(params));
  c.net->set_requires_grad(true);
  c.adam.t = j.value("adam_t", std::int64_t{0});
  if (fs::exists(dir / "adam")) {
    for (const auto& [name, t] : c.net->parameters()) {
      c.adam.m.push_back(read_f32(dir / "adam" / (name + ".m.elst"), t.dims()));
      c.adam.v.push_back(read_f32(dir / "adam" / (name + ".v.elst"), t.dims()));
    }
  }
  const std::string want = j.value("weights_hash", std::string());
  if (!want.empty() && want != hex64(c.net->weights_hash()))
    throw FormatError("checkpoint weights do not match the recorded hash " + want, 0);
  return c;
}

std::unique_ptr<Segmenter> make_segmenter(const Checkpoint& ckpt) {
  if (ckpt.kind == "oracle") return std::make_unique<OracleSegmenter>();
  if (!ckpt.net) throw ContractError("make_segmenter: checkpoint holds no network");
  return std::make_unique<NetworkSegmenter>(ckpt.net);
}

}  // namespace elsnet
