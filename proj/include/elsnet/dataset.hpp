#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elsnet/image.hpp"

namespace elsnet {

namespace split {
inline constexpr const char* kExemplar = "exemplar";
inline constexpr const char* kUnlabeled = "unlabeled";
inline constexpr const char* kBackground = "background";
inline constexpr const char* kTest = "test";
inline constexpr const char* kSynthetic = "synthetic";
}  // namespace split

struct DatasetManifest {
  std::filesystem::path root;
  int num_classes = 0;  // organ categories; mask values lie in 0..num_classes
  std::size_t height = 0;
  std::size_t width = 0;
  std::map<std::string, std::vector<std::string>> splits;
  std::uint64_t seed = 0;
  std::string config_hash;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// In-memory dataset: manifest plus the samples of each split, in manifest order.
struct Dataset {
  DatasetManifest manifest;
  std::map<std::string, std::vector<Sample>> samples;

  const Sample& exemplar() const;
  const std::vector<Sample>& split(const std::string& name) const;
  void set_split(const std::string& name, std::vector<Sample> s);
};

/// Writes `<dir>/<id>.img.elst`, `<dir>/<id>.mask.elst` and `<dir>/<id>.json`.
void save_sample(const Sample& sample, int num_classes, const std::filesystem::path& dir);
/// Reads a sample written by save_sample. Mask values above the class count
/// recorded in the sidecar raise ValidationError; container damage raises FormatError.
Sample load_sample(const std::filesystem::path& dir, const std::string& id);

/// Checks the exemplar and mask-range invariants; throws ValidationError.
void validate(const Dataset& dataset);

void save_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);
/// Adds or replaces one split on disk and in the manifest.
void save_split(const Dataset& dataset, const std::string& name, const std::filesystem::path& root);

}  // namespace elsnet
