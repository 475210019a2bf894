#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elsnet/image.hpp"
#include "elsnet/segnet.hpp"
#include "elsnet/tensor.hpp"

namespace elsnet {

inline constexpr double kDiceSmooth = 1e-5;

/// 0.5 * pixel-mean cross-entropy + 0.5 * (1 - mean soft Dice over all
/// channels, background included). Mask values must index a logit channel.
template <typename T>
BasicTensor<T> seg_loss(const BasicTensor<T>& logits, const Mask& target);

/// 2|P & G| / (|P| + |G|) for class k; 1 when both are empty.
double dsc(const Mask& pred, const Mask& gt, int k);

/// Pixels of class k with at least one 4-neighbour outside the class (or
/// outside the image).
std::vector<std::size_t> boundary_pixels(const Mask& mask, int k);

/// Linear interpolation at position q * (n - 1) of the sorted values.
double percentile(std::vector<double> values, double q);

/// Image diagonal; reported as HD95 when exactly one of the two sets is empty.
double hd95_sentinel(std::size_t height, std::size_t width);

/// Symmetric 95th-percentile Hausdorff distance between the class-k
/// boundaries of two masks, using exact Euclidean distance transforms.
double hd95(const Mask& pred, const Mask& gt, int k);

struct SampleMetrics {
  std::string id;
  std::vector<double> dsc;   // index k = 1..K at k-1
  std::vector<double> hd95;
  std::vector<bool> counted; // false when class k is absent from both masks
};

struct MetricReport {
  int num_classes = 0;
  std::string predictor;
  std::vector<double> class_dsc;
  std::vector<double> class_hd95;
  std::vector<std::size_t> class_count;
  double avg_dsc = 0.0;
  double avg_hd95 = 0.0;
  std::vector<SampleMetrics> samples;

  void print_table(std::ostream& os, const std::string& label = "") const;
  void write_csv(std::ostream& os) const;
  bool operator==(const MetricReport&) const;
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

/// Per-class scores averaged over the test samples in which the class appears
/// in the prediction or the ground truth; averages exclude the background.
MetricReport evaluate(const Segmenter& segmenter, const std::vector<Sample>& test, int num_classes);

}  // namespace elsnet
