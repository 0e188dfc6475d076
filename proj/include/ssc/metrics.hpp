#pragma once

// Confusion-matrix based evaluation: per-class IoU, scene (occupancy) IoU,
// mIoU and distance-limited mIoU.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssc/geometry.hpp"
#include "ssc/grid.hpp"

namespace ssc {

/// (num_classes + 1)² counts indexed [gt][pred]; row/column 0 is empty space.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::uint64_t> counts;
  std::uint64_t ignored = 0;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes);

  std::uint64_t at(int gt, int pred) const { return counts[index(gt, pred)]; }
  std::uint64_t& at(int gt, int pred) { return counts[index(gt, pred)]; }
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t index(int gt, int pred) const {
    return static_cast<std::size_t>(gt) * static_cast<std::size_t>(num_classes + 1) + static_cast<std::size_t>(pred);
  }
};

/// Ignore-labelled GT voxels only bump `ignored`.
ConfusionMatrix accumulate(const LabelGrid& pred, const LabelGrid& gt, ConfusionMatrix cm);

/// As above, restricted to voxels with keep[i] != 0.
ConfusionMatrix accumulate_masked(const LabelGrid& pred, const LabelGrid& gt, std::span<const std::uint8_t> keep,
                                  ConfusionMatrix cm);

/// nullopt when the class is absent from both prediction and ground truth.
std::optional<double> class_iou(const ConfusionMatrix& cm, int c);
std::optional<double> scene_iou(const ConfusionMatrix& cm);

struct MiouOptions {
  bool include_absent = false;  // count absent classes as IoU 0
};

/// Mean of the defined entries; absent entries count as 0 with include_absent.
std::optional<double> mean_iou(std::span<const std::optional<double>> per_class, const MiouOptions& opts = {});

/// Mean over semantic classes 1..num_classes.
std::optional<double> miou(const ConfusionMatrix& cm, const MiouOptions& opts = {});

struct RangeMiou {
  double range = 0.0;
  std::optional<double> miou;  // nullopt when no voxel is evaluated within range
};

inline const std::vector<double> kDefaultRanges{12.8, 25.6, 51.2};

/// mIoU over voxels whose centre lies within each range of spec.sensor_origin.
std::vector<RangeMiou> range_miou(const LabelGrid& pred, const LabelGrid& gt, const VoxelSpec& spec,
                                  std::span<const double> ranges, const MiouOptions& opts = {});

struct MetricsReport {
  std::vector<std::optional<double>> class_iou;  // classes 1..K
  std::optional<double> scene_iou;
  std::optional<double> miou;
  std::vector<RangeMiou> ranges;
};

MetricsReport evaluate(const LabelGrid& pred, const LabelGrid& gt, const VoxelSpec& spec,
                       std::span<const double> ranges = kDefaultRanges, const MiouOptions& opts = {});

/// Percentages rounded to one decimal; undefined values are null.
nlohmann::json to_json(const MetricsReport& report, std::span<const std::string> class_names = {});

}  // namespace ssc
