#pragma once

// Temporal alignment of history-frame features to the current frame:
// flow warping, forward-backward occlusion detection, mask gating and
// windowed cross-attention fusion.

#include <span>
#include <vector>

#include "ssc/grid.hpp"
#include "ssc/layers.hpp"

namespace ssc {

struct ConsistencyParams {
  double alpha = 0.01;  // scale on the summed flow magnitudes
  double beta = 0.5;    // absolute slack in pixels

  void validate() const;
};

/// `fwd` lives on the forward flow's source grid, `bwd` on the backward
/// flow's source grid. True marks an inconsistent (occluded) pixel.
struct OcclusionMasks {
  BoolMask fwd;
  BoolMask bwd;
};

/// Forward-backward consistency check.
///   mag   = |F_fwd| + |F_bwd|
///   M_fwd = |F_fwd + warp(F_bwd, F_fwd)| > alpha * mag + beta
///   M_bwd = |F_bwd + warp(F_fwd, F_bwd)| > alpha * mag + beta
OcclusionMasks fwd_bwd_check(const FlowField& flow_fwd, const FlowField& flow_bwd,
                             const ConsistencyParams& params = {});

/// Zeroes warped features wherever `occlusion` is set.
FeatureMap mask_gate(const FeatureMap& warped, const BoolMask& occlusion);

/// Single-head neighbourhood cross-attention parameters.
/// query/key/value map C -> dim, output maps dim -> C.
struct NcaParams {
  int window = 3;
  int dim = 0;
  Matrix query;
  Matrix key;
  Matrix value;
  Matrix output;

  static NcaParams identity(int channels, int window);
  void validate(int channels) const;
};

/// Attention weights of the query at (y, x). Keys are enumerated frame by
/// frame, then row-major over the in-bounds window cells.
std::vector<double> nca_attention(const FeatureMap& current, std::span<const FeatureMap> history,
                                  const NcaParams& params, int y, int x);

/// out(p) = current(p) + W_o * sum_k softmax(q.k / sqrt(dim)) v_k
FeatureMap nca_fuse(const FeatureMap& current, std::span<const FeatureMap> history, const NcaParams& params);

/// Channel-concatenates [current, warped_1, ..., warped_n] and projects back
/// to C channels with a C × C(n+1) matrix.
FeatureMap build_raw(const FeatureMap& current, std::span<const FeatureMap> warped, const Matrix& projection);

}  // namespace ssc
