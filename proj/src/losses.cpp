#include "ssc/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ssc/errors.hpp"
#include "ssc/layers.hpp"

namespace ssc {
namespace {

constexpr double kMinRatio = 1e-12;

double neg_log(double ratio) { return -std::log(std::max(ratio, kMinRatio)); }

void check_logits(const VoxelGrid& logits, const LabelGrid& gt, const char* what) {
  logits.validate();
  if (!(logits.dims == gt.dims)) throw ShapeError(std::string(what) + ": prediction and ground truth dims differ");
  if (logits.channels != gt.num_classes + 1) {
    throw ShapeError(std::string(what) + ": logits must have num_classes + 1 channels");
  }
}

std::vector<double> softmax_cell(std::span<const float> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  softmax_inplace(p);
  return p;
}

void check_scales(const VoxelDims& d, std::span<const int> scales) {
  if (scales.empty()) throw InputError("scal loss: scale list is empty");
  for (int s : scales) {
    if (s < 1 || (s & (s - 1)) != 0) throw InputError("scal loss: scales must be powers of two");
    if (d.x % s || d.y % s || d.z % s) throw InputError("scal loss: scale must divide every grid dimension");
  }
}

// One coarse cell: pooled class probabilities and its pooled label.
struct Block {
  std::vector<double> probs;
  int label;
};

// Pools probabilities (mean over non-ignore voxels) and labels at block size
// `s`. `geo` pools labels by any-occupied, otherwise by majority non-empty.
std::vector<Block> pool_blocks(const VoxelGrid& logits, const LabelGrid& gt, int s, bool geo) {
  const auto& d = gt.dims;
  const int k = logits.channels;
  std::vector<Block> blocks;
  std::vector<int> counts(static_cast<std::size_t>(k));
  for (int bx = 0; bx < d.x; bx += s)
    for (int by = 0; by < d.y; by += s)
      for (int bz = 0; bz < d.z; bz += s) {
        Block b{std::vector<double>(static_cast<std::size_t>(k), 0.0), kEmptyLabel};
        std::fill(counts.begin(), counts.end(), 0);
        int n = 0;
        for (int x = bx; x < bx + s; ++x)
          for (int y = by; y < by + s; ++y)
            for (int z = bz; z < bz + s; ++z) {
              const auto label = gt.at(x, y, z);
              if (label == kIgnoreLabel) continue;
              ++n;
              ++counts[label];
              const auto p = softmax_cell(logits.cell(d.linear(x, y, z)));
              for (int c = 0; c < k; ++c) b.probs[static_cast<std::size_t>(c)] += p[static_cast<std::size_t>(c)];
            }
        if (n == 0) continue;
        for (auto& v : b.probs) v /= n;
        int best = kEmptyLabel;
        for (int c = 1; c < k; ++c) {
          if (counts[static_cast<std::size_t>(c)] == 0) continue;
          if (geo) {
            best = c;
            break;
          }
          if (best == kEmptyLabel || counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
        }
        b.label = best;
        blocks.push_back(std::move(b));
      }
  return blocks;
}

double geo_at_scale(const std::vector<Block>& blocks) {
  std::vector<double> inter, pred, target, spec_num, spec_den;
  for (const auto& b : blocks) {
    const double p = 1.0 - b.probs[0];
    const double g = b.label != kEmptyLabel ? 1.0 : 0.0;
    inter.push_back(p * g);
    pred.push_back(p);
    target.push_back(g);
    spec_num.push_back((1.0 - p) * (1.0 - g));
    spec_den.push_back(1.0 - g);
  }
  const double i = pairwise_sum(inter);
  const double ps = pairwise_sum(pred);
  const double ts = pairwise_sum(target);
  const double en = pairwise_sum(spec_den);
  double loss = 0.0;
  if (ps > 0.0) loss += neg_log(i / ps);
  if (ts > 0.0) loss += neg_log(i / ts);
  if (en > 0.0) loss += neg_log(pairwise_sum(spec_num) / en);
  return loss;
}

double sem_at_scale(const std::vector<Block>& blocks, int k) {
  double loss = 0.0;
  int present = 0;
  std::vector<double> inter, pred, target, spec_num, spec_den;
  for (int c = 0; c < k; ++c) {
    inter.clear();
    pred.clear();
    target.clear();
    spec_num.clear();
    spec_den.clear();
    for (const auto& b : blocks) {
      const double p = b.probs[static_cast<std::size_t>(c)];
      const double t = b.label == c ? 1.0 : 0.0;
      inter.push_back(p * t);
      pred.push_back(p);
      target.push_back(t);
      spec_num.push_back((1.0 - p) * (1.0 - t));
      spec_den.push_back(1.0 - t);
    }
    const double ts = pairwise_sum(target);
    if (ts == 0.0) continue;
    ++present;
    const double i = pairwise_sum(inter);
    const double ps = pairwise_sum(pred);
    const double en = pairwise_sum(spec_den);
    if (ps > 0.0) loss += neg_log(i / ps);
    loss += neg_log(i / ts);
    if (en > 0.0) loss += neg_log(pairwise_sum(spec_num) / en);
  }
  return present ? loss / present : 0.0;
}

void check_maps(const FeatureMap& a, const FeatureMap& b, const char* what) {
  a.validate();
  b.validate();
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": prediction and target shapes differ");
}

}  // namespace

void LossWeights::validate() const {
  for (double l : {lambda1, lambda2, lambda3}) {
    if (!std::isfinite(l) || l < 0.0) throw InputError("LossWeights: weights must be finite and >= 0");
  }
}

double ClassWeightPolicy::class_weight(int label) const {
  if (class_weights.empty()) return 1.0;
  if (label < 0 || static_cast<std::size_t>(label) >= class_weights.size()) {
    throw InputError("ClassWeightPolicy: no weight for label " + std::to_string(label));
  }
  return class_weights[static_cast<std::size_t>(label)];
}

double ClassWeightPolicy::distance_weight(double range) const { return 1.0 + distance_gain * (range / max_range); }

void ClassWeightPolicy::validate() const {
  for (double w : class_weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw InputError("ClassWeightPolicy: class weights must be positive");
  }
  if (!(distance_gain >= 0.0) || !(max_range > 0.0)) throw InputError("ClassWeightPolicy: bad distance parameters");
}

double scal_geo(const VoxelGrid& pred_logits, const LabelGrid& gt, std::span<const int> scales) {
  check_logits(pred_logits, gt, "scal_geo");
  check_scales(gt.dims, scales);
  double total = 0.0;
  for (int s : scales) {
    const auto blocks = pool_blocks(pred_logits, gt, s, true);
    if (blocks.empty()) throw InputError("scal_geo: no labeled voxels");
    total += geo_at_scale(blocks);
  }
  return total / static_cast<double>(scales.size());
}

double scal_sem(const VoxelGrid& pred_logits, const LabelGrid& gt, std::span<const int> scales) {
  check_logits(pred_logits, gt, "scal_sem");
  check_scales(gt.dims, scales);
  double total = 0.0;
  for (int s : scales) {
    const auto blocks = pool_blocks(pred_logits, gt, s, false);
    if (blocks.empty()) throw InputError("scal_sem: no labeled voxels");
    total += sem_at_scale(blocks, pred_logits.channels);
  }
  return total / static_cast<double>(scales.size());
}

double voxel_ce(const VoxelGrid& pred_logits, const LabelGrid& gt, const ClassWeightPolicy& policy) {
  check_logits(pred_logits, gt, "voxel_ce");
  policy.validate();
  std::vector<double> terms;
  std::vector<double> weights;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto label = gt.labels[i];
    if (label == kIgnoreLabel) continue;
    const auto z = pred_logits.cell(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (float v : z) sum += std::exp(v - mx);
    const double nll = mx + std::log(sum) - z[label];
    const double w = policy.class_weight(label);
    terms.push_back(w * nll);
    weights.push_back(w);
  }
  if (terms.empty()) throw InputError("voxel_ce: no labeled voxels");
  return pairwise_sum(terms) / pairwise_sum(weights);
}

VoxelGrid voxel_ce_grad(const VoxelGrid& pred_logits, const LabelGrid& gt, const ClassWeightPolicy& policy) {
  check_logits(pred_logits, gt, "voxel_ce_grad");
  policy.validate();
  std::vector<double> weights;
  for (auto label : gt.labels)
    if (label != kIgnoreLabel) weights.push_back(policy.class_weight(label));
  if (weights.empty()) throw InputError("voxel_ce_grad: no labeled voxels");
  const double norm = pairwise_sum(weights);

  VoxelGrid grad(pred_logits.dims, pred_logits.channels);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto label = gt.labels[i];
    if (label == kIgnoreLabel) continue;
    const auto p = softmax_cell(pred_logits.cell(i));
    const double w = policy.class_weight(label) / norm;
    auto g = grad.cell(i);
    for (std::size_t c = 0; c < p.size(); ++c) g[c] = static_cast<float>(w * (p[c] - (c == label ? 1.0 : 0.0)));
  }
  return grad;
}

double dice_loss(const FeatureMap& pred_probs, const FeatureMap& target) {
  check_maps(pred_probs, target, "dice_loss");
  const int k = pred_probs.channels;
  if (k == 0) throw ShapeError("dice_loss: no channels");
  const std::size_t n = pred_probs.pixel_count();
  double dice_sum = 0.0;
  std::vector<double> inter(n), sums(n);
  for (int c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = pred_probs.data[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(c)];
      const double t = target.data[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(c)];
      inter[i] = p * t;
      sums[i] = p + t;
    }
    dice_sum += (2.0 * pairwise_sum(inter) + kDiceEpsilon) / (pairwise_sum(sums) + kDiceEpsilon);
  }
  return 1.0 - dice_sum / k;
}

FeatureMap dice_loss_grad(const FeatureMap& pred_probs, const FeatureMap& target) {
  check_maps(pred_probs, target, "dice_loss_grad");
  const int k = pred_probs.channels;
  const std::size_t n = pred_probs.pixel_count();
  FeatureMap grad(pred_probs.height, pred_probs.width, k);
  std::vector<double> inter(n), sums(n);
  for (int c = 0; c < k; ++c) {
    const auto at = [&](std::size_t i) { return i * static_cast<std::size_t>(k) + static_cast<std::size_t>(c); };
    for (std::size_t i = 0; i < n; ++i) {
      inter[i] = static_cast<double>(pred_probs.data[at(i)]) * target.data[at(i)];
      sums[i] = static_cast<double>(pred_probs.data[at(i)]) + target.data[at(i)];
    }
    const double num = 2.0 * pairwise_sum(inter) + kDiceEpsilon;
    const double den = pairwise_sum(sums) + kDiceEpsilon;
    for (std::size_t i = 0; i < n; ++i) {
      const double d_dice = (2.0 * target.data[at(i)] * den - num) / (den * den);
      grad.data[at(i)] = static_cast<float>(-d_dice / k);
    }
  }
  return grad;
}

double soft_ce(const FeatureMap& pred_probs, const FeatureMap& target) {
  check_maps(pred_probs, target, "soft_ce");
  const std::size_t n = pred_probs.pixel_count();
  if (n == 0) throw InputError("soft_ce: empty map");
  std::vector<double> per_pixel(n, 0.0);
  const auto k = static_cast<std::size_t>(pred_probs.channels);
  for (std::size_t i = 0; i < n; ++i) {
    double l = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double t = target.data[i * k + c];
      if (t != 0.0) l -= t * std::log(std::max(static_cast<double>(pred_probs.data[i * k + c]), kMinRatio));
    }
    per_pixel[i] = l;
  }
  return pairwise_sum(per_pixel) / static_cast<double>(n);
}

FeatureMap edge_map(const FeatureMap& m, bool binarize, double threshold) {
  m.validate();
  FeatureMap out(m.height, m.width, m.channels);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      for (int c = 0; c < m.channels; ++c) {
        const double v = m.at(y, x, c);
        const double gx = x + 1 < m.width ? m.at(y, x + 1, c) - v : 0.0;
        const double gy = y + 1 < m.height ? m.at(y + 1, x, c) - v : 0.0;
        const double mag = std::sqrt(gx * gx + gy * gy);
        out.at(y, x, c) = binarize ? (mag > threshold ? 1.0F : 0.0F) : static_cast<float>(std::min(mag, 1.0));
      }
  return out;
}

double boundary_loss(const FeatureMap& pred_probs, const FeatureMap& target) {
  check_maps(pred_probs, target, "boundary_loss");
  const FeatureMap pe = edge_map(pred_probs, false);
  const FeatureMap te = edge_map(target, true);
  const auto nonzero = [](const FeatureMap& m) {
    return std::any_of(m.data.begin(), m.data.end(), [](float v) { return v != 0.0F; });
  };
  if (!nonzero(pe) && !nonzero(te)) return 0.0;

  constexpr double kClamp = 1e-7;
  std::vector<double> bce(pe.data.size());
  for (std::size_t i = 0; i < bce.size(); ++i) {
    const double p = std::clamp(static_cast<double>(pe.data[i]), kClamp, 1.0 - kClamp);
    const double t = te.data[i];
    bce[i] = -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  const double bce_mean = bce.empty() ? 0.0 : pairwise_sum(bce) / static_cast<double>(bce.size());
  return 0.5 * (dice_loss(pe, te) + bce_mean);
}

PlaneLabels project_gt_planes(const LabelGrid& gt) {
  const auto& d = gt.dims;
  const int k = gt.num_classes + 1;
  auto majority = [&](auto&& visit) {
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    visit([&](std::uint8_t l) {
      if (l != kIgnoreLabel && l != kEmptyLabel) ++counts[l];
    });
    int best = -1;
    for (int c = 1; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0 && (best < 0 || counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)])) best = c;
    return best < 0 ? kIgnoreLabel : static_cast<std::uint8_t>(best);
  };

  PlaneLabels planes;
  planes.xy.resize(static_cast<std::size_t>(d.x) * d.y);
  planes.xz.resize(static_cast<std::size_t>(d.x) * d.z);
  planes.yz.resize(static_cast<std::size_t>(d.y) * d.z);
  for (int x = 0; x < d.x; ++x)
    for (int y = 0; y < d.y; ++y)
      planes.xy[static_cast<std::size_t>(x) * d.y + y] = majority([&](auto f) {
        for (int z = 0; z < d.z; ++z) f(gt.at(x, y, z));
      });
  for (int x = 0; x < d.x; ++x)
    for (int z = 0; z < d.z; ++z)
      planes.xz[static_cast<std::size_t>(x) * d.z + z] = majority([&](auto f) {
        for (int y = 0; y < d.y; ++y) f(gt.at(x, y, z));
      });
  for (int y = 0; y < d.y; ++y)
    for (int z = 0; z < d.z; ++z)
      planes.yz[static_cast<std::size_t>(y) * d.z + z] = majority([&](auto f) {
        for (int x = 0; x < d.x; ++x) f(gt.at(x, y, z));
      });
  return planes;
}

double tpv_loss(const TpvPlanes& plane_logits, const LabelGrid& gt, const ClassWeightPolicy& policy,
                const VoxelSpec& spec) {
  policy.validate();
  spec.validate();
  const auto& d = gt.dims;
  if (!(spec.dims == d)) throw ShapeError("tpv_loss: spec dims differ from ground truth");
  const int k = gt.num_classes + 1;
  auto check = [&](const FeatureMap& m, int h, int w, const char* name) {
    m.validate();
    if (m.height != h || m.width != w || m.channels != k) {
      throw ShapeError(std::string("tpv_loss: ") + name + " plane logits have the wrong shape");
    }
  };
  check(plane_logits.xy, d.x, d.y, "xy");
  check(plane_logits.xz, d.x, d.z, "xz");
  check(plane_logits.yz, d.y, d.z, "yz");

  const PlaneLabels labels = project_gt_planes(gt);
  const Eigen::Vector3d& s = spec.sensor_origin;

  // Cell centre with the collapsed coordinate pinned to the sensor's.
  auto plane_ce = [&](const FeatureMap& logits, const std::vector<std::uint8_t>& lab, auto&& centre) {
    std::vector<double> terms, weights;
    for (int a = 0; a < logits.height; ++a)
      for (int b = 0; b < logits.width; ++b) {
        const auto label = lab[static_cast<std::size_t>(a) * logits.width + b];
        if (label == kIgnoreLabel) continue;
        const auto z = logits.pixel(a, b);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (float v : z) sum += std::exp(v - mx);
        const double nll = mx + std::log(sum) - z[label];
        const double w = policy.class_weight(label) * policy.distance_weight((centre(a, b) - s).norm());
        terms.push_back(w * nll);
        weights.push_back(w);
      }
    return std::pair{terms.empty() ? 0.0 : pairwise_sum(terms) / pairwise_sum(weights), !terms.empty()};
  };

  const auto c = [&](int ix, int iy, int iz) { return spec.center(ix, iy, iz); };
  const auto xy = plane_ce(plane_logits.xy, labels.xy, [&](int a, int b) {
    Eigen::Vector3d p = c(a, b, 0);
    p.z() = s.z();
    return p;
  });
  const auto xz = plane_ce(plane_logits.xz, labels.xz, [&](int a, int b) {
    Eigen::Vector3d p = c(a, 0, b);
    p.y() = s.y();
    return p;
  });
  const auto yz = plane_ce(plane_logits.yz, labels.yz, [&](int a, int b) {
    Eigen::Vector3d p = c(0, a, b);
    p.x() = s.x();
    return p;
  });
  const int used = int{xy.second} + int{xz.second} + int{yz.second};
  if (used == 0) throw InputError("tpv_loss: every plane cell is ignored");
  return (xy.first + xz.first + yz.first) / used;
}

double total_loss(double voxel, double distill, double tpv, const LossWeights& weights) {
  weights.validate();
  return weights.lambda1 * voxel + weights.lambda2 * distill + weights.lambda3 * tpv;
}

double total_loss(const LossParts& parts, const LossWeights& weights) {
  return total_loss(parts.voxel(), parts.distill(), parts.tpv, weights);
}

}  // namespace ssc
