#pragma once

// Image-to-voxel lifting and voxel refinement: lift-splat, proposal
// selection, deformable cross/self attention, residual merge, the
// local/three-plane occupancy encoder and the semantic head.

#include <cstddef>
#include <span>
#include <vector>

#include "ssc/depth_fusion.hpp"
#include "ssc/geometry.hpp"
#include "ssc/grid.hpp"
#include "ssc/layers.hpp"

namespace ssc {

struct LiftResult {
  VoxelGrid grid;
  std::size_t dropped_points = 0;  // (pixel, bin) points outside the grid
};

/// Splats d_v(b, p) * feat(p) into the voxel containing the point at the
/// centre depth of bin b along pixel p's ray.
LiftResult lss_lift(const DepthVolume& d_v, const FeatureMap& feat, const DepthBins& bins, const CameraModel& cam,
                    const VoxelSpec& spec);

/// Linear voxel indices, ordered by descending feature norm (ties by index).
struct ProposalSet {
  std::vector<std::size_t> indices;
};

ProposalSet propose(const VoxelGrid& v_coarse, double threshold, std::size_t max_count = 1024);

/// Deformable attention head. Offsets (`points` × `offset_dims`) and
/// attention logits (`points`) are predicted linearly from the query feature;
/// `value` maps the sampled feature width to the output width.
struct DeformAttnParams {
  int points = 1;
  int offset_dims = 2;
  Matrix offset_w;  // points*offset_dims × C_query
  std::vector<float> offset_b;
  Matrix attn_w;  // points × C_query
  std::vector<float> attn_b;
  Matrix value;  // C_out × C_sample

  /// Zero offsets, uniform attention, identity value projection.
  static DeformAttnParams zero_offsets(int channels, int points, int offset_dims);
  void validate(int query_channels, int sample_channels) const;
};

std::vector<double> deform_attention_weights(const DeformAttnParams& params, std::span<const float> query);
std::vector<double> deform_offsets(const DeformAttnParams& params, std::span<const float> query);

/// Deformable cross-attention from proposal voxels into the image. Proposal
/// voxels are replaced by the attended image feature; all others pass
/// through. Proposals whose centre is behind the camera are left unchanged.
VoxelGrid dca(const ProposalSet& proposals, const VoxelGrid& v_coarse, const FeatureMap& feat, const CameraModel& cam,
              const VoxelSpec& spec, const DeformAttnParams& params);

VoxelGrid merge_raw(const VoxelGrid& q_s, const VoxelGrid& v_raw);

/// Deformable self-attention in voxel space with a residual connection.
VoxelGrid dsa(const VoxelGrid& grid, const DeformAttnParams& params);

/// Three orthogonal plane features: xy is X×Y, xz is X×Z, yz is Y×Z.
struct TpvPlanes {
  FeatureMap xy;
  FeatureMap xz;
  FeatureMap yz;
};

struct OccEncoderWeights {
  Conv3d local1;
  Conv3d local2;
  Conv2d plane_xy;
  Conv2d plane_xz;
  Conv2d plane_yz;
};

struct OccEncoding {
  VoxelGrid grid;
  VoxelGrid local;
  VoxelGrid global;
  TpvPlanes planes;
};

/// local  = x + conv(relu(conv(x)))
/// global = broadcast sum of the three transformed mean-pooled planes
/// output = w * local + (1 - w) * global
OccEncoding occ_encode(const VoxelGrid& grid, const OccEncoderWeights& weights, double fusion_weight);

TpvPlanes pool_planes(const VoxelGrid& grid);

/// Linear head producing num_classes + 1 logits (index 0 = empty).
struct ClassHead {
  Matrix weight;
  std::vector<float> bias;
};

struct Classification {
  LabelGrid labels;
  VoxelGrid logits;
};

/// Argmax ties resolve to the lowest class id.
Classification classify(const VoxelGrid& grid, const ClassHead& head, int num_classes);

FeatureMap classify_plane(const FeatureMap& plane, const ClassHead& head);

}  // namespace ssc
