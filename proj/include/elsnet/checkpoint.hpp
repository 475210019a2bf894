#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "elsnet/optim.hpp"
#include "elsnet/segnet.hpp"

namespace elsnet {

/// On disk: a directory holding `checkpoint.json` plus one ELST file per
/// parameter (`params/<name>.elst`) and per Adam moment (`adam/<name>.m.elst`,
/// `adam/<name>.v.elst`). A manifest with `"kind": "oracle"` stands in for a
/// perfect predictor and carries no tensors.
struct Checkpoint {
  std::string kind = "network";
  std::shared_ptr<SegNet> net;
  AdamState adam;
  std::int64_t step = 0;
  std::string stage;
  std::string rng_state;
  std::string config_hash;
  nlohmann::json extra = nlohmann::json::object();

  std::uint64_t weights_hash() const { return net ? net->weights_hash() : 0; }
};

/// Writes into a sibling temp directory and renames it over `dir`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::unique_ptr<Segmenter> make_segmenter(const Checkpoint& ckpt);

std::string hex64(std::uint64_t v);

}  // namespace elsnet
