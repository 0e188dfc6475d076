#include "ssc/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ssc/errors.hpp"

namespace ssc {
namespace {

void check_pair(const LabelGrid& pred, const LabelGrid& gt, const ConfusionMatrix& cm) {
  if (!(pred.dims == gt.dims) || pred.labels.size() != gt.labels.size()) {
    throw ShapeError("accumulate: prediction and ground truth dims differ");
  }
  if (cm.num_classes <= 0 || cm.counts.size() != static_cast<std::size_t>(cm.num_classes + 1) * (cm.num_classes + 1)) {
    throw InputError("accumulate: confusion matrix is not initialised");
  }
}

void check_not_empty(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InputError("metrics: confusion matrix is empty");
}

std::optional<double> percent(std::optional<double> v) {
  if (!v) return std::nullopt;
  return std::round(*v * 1000.0) / 10.0;
}

nlohmann::json optional_json(std::optional<double> v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int classes)
    : num_classes(classes), counts(static_cast<std::size_t>(classes + 1) * static_cast<std::size_t>(classes + 1), 0) {
  if (classes <= 0 || classes >= kIgnoreLabel) throw InputError("ConfusionMatrix: bad class count");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw ShapeError("ConfusionMatrix::merge: class counts differ");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  ignored += other.ignored;
}

ConfusionMatrix accumulate_masked(const LabelGrid& pred, const LabelGrid& gt, std::span<const std::uint8_t> keep,
                                  ConfusionMatrix cm) {
  check_pair(pred, gt, cm);
  if (!keep.empty() && keep.size() != gt.labels.size()) throw ShapeError("accumulate: mask size differs");
  const int k = cm.num_classes;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    if (!keep.empty() && !keep[i]) continue;
    const int g = gt.labels[i];
    if (g == kIgnoreLabel) {
      ++cm.ignored;
      continue;
    }
    const int p = pred.labels[i];
    if (g > k) throw InputError("accumulate: ground-truth label " + std::to_string(g) + " out of range");
    if (p > k) throw InputError("accumulate: predicted label " + std::to_string(p) + " out of range");
    ++cm.at(g, p);
  }
  return cm;
}

ConfusionMatrix accumulate(const LabelGrid& pred, const LabelGrid& gt, ConfusionMatrix cm) {
  return accumulate_masked(pred, gt, {}, std::move(cm));
}

std::optional<double> class_iou(const ConfusionMatrix& cm, int c) {
  check_not_empty(cm);
  if (c < 0 || c > cm.num_classes) throw InputError("class_iou: class id out of range");
  std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
  for (int o = 0; o <= cm.num_classes; ++o) {
    if (o == c) continue;
    fp += cm.at(o, c);
    fn += cm.at(c, o);
  }
  const std::uint64_t denom = tp + fp + fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

std::optional<double> scene_iou(const ConfusionMatrix& cm) {
  check_not_empty(cm);
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (int g = 0; g <= cm.num_classes; ++g)
    for (int p = 0; p <= cm.num_classes; ++p) {
      const bool go = g != kEmptyLabel;
      const bool po = p != kEmptyLabel;
      if (go && po) tp += cm.at(g, p);
      else if (po) fp += cm.at(g, p);
      else if (go) fn += cm.at(g, p);
    }
  const std::uint64_t denom = tp + fp + fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

std::optional<double> mean_iou(std::span<const std::optional<double>> per_class, const MiouOptions& opts) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : per_class) {
    if (v) {
      sum += *v;
      ++n;
    } else if (opts.include_absent) {
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::optional<double> miou(const ConfusionMatrix& cm, const MiouOptions& opts) {
  std::vector<std::optional<double>> per_class;
  for (int c = 1; c <= cm.num_classes; ++c) per_class.push_back(class_iou(cm, c));
  return mean_iou(per_class, opts);
}

std::vector<RangeMiou> range_miou(const LabelGrid& pred, const LabelGrid& gt, const VoxelSpec& spec,
                                  std::span<const double> ranges, const MiouOptions& opts) {
  spec.validate();
  if (!(spec.dims == gt.dims)) throw ShapeError("range_miou: spec dims differ from ground truth");
  if (!std::is_sorted(ranges.begin(), ranges.end())) throw InputError("range_miou: ranges must be ascending");
  const auto& d = gt.dims;
  std::vector<double> dist(d.count());
  for (int x = 0; x < d.x; ++x)
    for (int y = 0; y < d.y; ++y)
      for (int z = 0; z < d.z; ++z) dist[d.linear(x, y, z)] = (spec.center(x, y, z) - spec.sensor_origin).norm();

  std::vector<RangeMiou> out;
  std::vector<std::uint8_t> keep(d.count());
  for (double r : ranges) {
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = dist[i] <= r ? 1 : 0;
    const auto cm = accumulate_masked(pred, gt, keep, ConfusionMatrix(gt.num_classes));
    out.push_back({r, cm.total() == 0 ? std::nullopt : miou(cm, opts)});
  }
  return out;
}

MetricsReport evaluate(const LabelGrid& pred, const LabelGrid& gt, const VoxelSpec& spec,
                       std::span<const double> ranges, const MiouOptions& opts) {
  const auto cm = accumulate(pred, gt, ConfusionMatrix(gt.num_classes));
  MetricsReport r;
  for (int c = 1; c <= cm.num_classes; ++c) r.class_iou.push_back(class_iou(cm, c));
  r.scene_iou = scene_iou(cm);
  r.miou = mean_iou(r.class_iou, opts);
  r.ranges = range_miou(pred, gt, spec, ranges, opts);
  return r;
}

nlohmann::json to_json(const MetricsReport& report, std::span<const std::string> class_names) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t i = 0; i < report.class_iou.size(); ++i) {
    const std::string name = i < class_names.size() ? class_names[i] : "class_" + std::to_string(i + 1);
    per_class[name] = optional_json(percent(report.class_iou[i]));
  }
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& r : report.ranges) ranges.push_back({{"range_m", r.range}, {"miou", optional_json(percent(r.miou))}});
  return {{"class_iou", per_class},
          {"scene_iou", optional_json(percent(report.scene_iou))},
          {"miou", optional_json(percent(report.miou))},
          {"range_miou", ranges}};
}

}  // namespace ssc
