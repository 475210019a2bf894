#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "elsnet/image.hpp"
#include "elsnet/tensor.hpp"

namespace elsnet {

/// Architecture of the U-shaped segmenter. Each encoder level is
/// conv3x3 -> instance norm -> ReLU followed by 2x2 max pooling; the
/// bottleneck conv produces the embedding map that prototypes are pooled from.
struct SegNetConfig {
  int in_channels = 1;
  int num_outputs = 4;  // background + K organ classes
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<int> widths{16, 32, 32};
  int embed_channels = 32;

  void validate() const;
  std::size_t depth() const { return widths.size(); }
  std::size_t embed_height() const { return height >> depth(); }
  std::size_t embed_width() const { return width >> depth(); }
  bool operator==(const SegNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const SegNetConfig& c);
void from_json(const nlohmann::json& j, SegNetConfig& c);

template <typename T>
struct Features {
  BasicTensor<T> embedding;               // [c, h, w], after the bottleneck activation
  std::vector<BasicTensor<T>> skips;      // one per encoder level, full to coarse
};

template <typename T>
class SegNetwork {
 public:
  using TensorT = BasicTensor<T>;
  using Param = std::pair<std::string, TensorT>;

  /// Kaiming-uniform conv weights, unit norm scales, zero offsets and biases.
  SegNetwork(SegNetConfig config, std::uint64_t seed);
  /// Adopts the given parameters; names and shapes must match the config.
  SegNetwork(SegNetConfig config, std::vector<Param> params);

  const SegNetConfig& config() const { return config_; }
  const std::vector<Param>& parameters() const { return params_; }
  std::vector<Param>& parameters() { return params_; }
  std::size_t parameter_count() const;
  const TensorT& parameter(const std::string& name) const;

  Features<T> encode_features(const TensorT& image) const;
  TensorT encode(const TensorT& image) const { return encode_features(image).embedding; }
  /// Logits [num_outputs, H, W]. The skips come from the same encoder pass.
  TensorT decode(const Features<T>& features) const;
  TensorT forward(const TensorT& image) const { return decode(encode_features(image)); }

  /// Value copy with fresh leaves in another precision.
  template <typename U>
  SegNetwork<U> cast() const {
    std::vector<typename SegNetwork<U>::Param> out;
    for (const auto& [name, t] : params_) out.emplace_back(name, t.template cast<U>());
    return SegNetwork<U>(config_, std::move(out));
  }

  SegNetwork clone() const;
  void set_requires_grad(bool on);
  void zero_grad();
  /// FNV-1a over every parameter's bytes, in declaration order.
  std::uint64_t weights_hash() const;

 private:
  struct Indices {
    std::size_t w, gamma, beta;
  };

  void build_layout();
  TensorT block(const TensorT& x, const Indices& layer, bool activate) const;

  SegNetConfig config_;
  std::vector<Param> params_;
  std::vector<Indices> enc_, dec_;
  Indices bottleneck_{};
  std::size_t head_w_ = 0, head_b_ = 0;
};

using SegNet = SegNetwork<float>;

/// Argmax over channels with ties resolved to the lowest index.
template <typename T>
Mask argmax_mask(const BasicTensor<T>& logits);

template <typename T>
std::pair<BasicTensor<T>, Mask> predict_mask(const SegNetwork<T>& net, const Image& image);

/// Anything that maps a sample to a predicted mask. Evaluation and
/// pseudo-labelling run through this so that reference predictors can be
/// swapped in for the network.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual Mask predict(const Sample& sample) const = 0;
  virtual std::string describe() const = 0;
};

class NetworkSegmenter : public Segmenter {
 public:
  explicit NetworkSegmenter(std::shared_ptr<const SegNet> net) : net_(std::move(net)) {}
  Mask predict(const Sample& sample) const override;
  std::string describe() const override;
  const SegNet& network() const { return *net_; }

 private:
  std::shared_ptr<const SegNet> net_;
};

/// Returns the sample's ground truth.
class OracleSegmenter : public Segmenter {
 public:
  Mask predict(const Sample& sample) const override { return sample.mask; }
  std::string describe() const override { return "oracle"; }
};

/// Predicts one class everywhere.
class ConstantSegmenter : public Segmenter {
 public:
  explicit ConstantSegmenter(std::uint8_t label) : label_(label) {}
  Mask predict(const Sample& sample) const override {
    return Mask(sample.mask.height, sample.mask.width, label_);
  }
  std::string describe() const override { return "constant:" + std::to_string(label_); }

 private:
  std::uint8_t label_;
};

}  // namespace elsnet
