#pragma once

// Training objectives: multi-scale scene-class affinity losses, weighted
// voxel cross-entropy, the 2D distillation losses (soft CE, Dice, boundary)
// and the three-plane cross-view loss, combined by a weighted total.
//
// Voxel logits carry num_classes + 1 channels, channel 0 being empty space.

#include <cstdint>
#include <span>
#include <vector>

#include "ssc/geometry.hpp"
#include "ssc/grid.hpp"
#include "ssc/voxel_lift.hpp"

namespace ssc {

struct LossWeights {
  double lambda1 = 1.0;  // voxel supervision
  double lambda2 = 1.0;  // distillation branch
  double lambda3 = 1.0;  // three-plane loss

  void validate() const;
};

/// weight(label, range) = class_weights[label] * (1 + distance_gain * range / max_range)
struct ClassWeightPolicy {
  std::vector<double> class_weights;  // indexed by label id; empty means all 1
  double distance_gain = 1.0;
  double max_range = 51.2;

  double class_weight(int label) const;
  double distance_weight(double range) const;
  void validate() const;
};

/// Occupancy precision/recall/specificity loss averaged over `scales`
/// (block sizes; each must divide every grid dimension).
double scal_geo(const VoxelGrid& pred_logits, const LabelGrid& gt, std::span<const int> scales);

/// Per-class precision/recall/specificity loss averaged over the classes
/// present in the ground truth, then over scales.
double scal_sem(const VoxelGrid& pred_logits, const LabelGrid& gt, std::span<const int> scales);

/// Class-weighted cross-entropy, normalised by the summed weights.
double voxel_ce(const VoxelGrid& pred_logits, const LabelGrid& gt, const ClassWeightPolicy& policy);
VoxelGrid voxel_ce_grad(const VoxelGrid& pred_logits, const LabelGrid& gt, const ClassWeightPolicy& policy);

inline constexpr double kDiceEpsilon = 1e-6;

/// 1 - mean_c (2 sum p t + eps) / (sum p + sum t + eps) over H×W×K maps.
double dice_loss(const FeatureMap& pred_probs, const FeatureMap& target);
FeatureMap dice_loss_grad(const FeatureMap& pred_probs, const FeatureMap& target);

/// Mean over pixels of -sum_c t_c log p_c.
double soft_ce(const FeatureMap& pred_probs, const FeatureMap& target);

/// Forward-difference gradient magnitude per channel. With `binarize` the
/// magnitude is thresholded at `threshold`, otherwise clamped to [0, 1].
FeatureMap edge_map(const FeatureMap& m, bool binarize, double threshold = 0.5);

/// 0.5 * (Dice + BCE) on edge maps; 0 when neither map has an edge.
double boundary_loss(const FeatureMap& pred_probs, const FeatureMap& target);

/// Ground-truth labels collapsed onto the three planes: most frequent
/// non-empty label along the collapsed axis (ties to the lower id),
/// ignore when there is none.
struct PlaneLabels {
  std::vector<std::uint8_t> xy;  // X × Y
  std::vector<std::uint8_t> xz;  // X × Z
  std::vector<std::uint8_t> yz;  // Y × Z
};

PlaneLabels project_gt_planes(const LabelGrid& gt);

double tpv_loss(const TpvPlanes& plane_logits, const LabelGrid& gt, const ClassWeightPolicy& policy,
                const VoxelSpec& spec);

struct LossParts {
  double scal_geo = 0.0;
  double scal_sem = 0.0;
  double ce = 0.0;
  double distill_ce = 0.0;
  double dice = 0.0;
  double boundary = 0.0;
  double tpv = 0.0;

  double voxel() const { return scal_geo + scal_sem + ce; }
  double distill() const { return distill_ce + dice + boundary; }
};

double total_loss(double voxel, double distill, double tpv, const LossWeights& weights);
double total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace ssc
