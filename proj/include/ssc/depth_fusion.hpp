#pragma once

// Curriculum-scheduled LiDAR/stereo depth fusion and the depth-volume
// network: soft binning, mono depth head, cross-modal confidence-gated
// attention between the two volumes, and the volume fusion U-Net.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssc/grid.hpp"
#include "ssc/layers.hpp"

namespace ssc {

enum class ScheduleShape { linear, cosine };

ScheduleShape parse_schedule_shape(const std::string& name);
std::string to_string(ScheduleShape shape);

/// Decaying LiDAR weight: 1 during warm-up, then linear or cosine decay to 0
/// at `total_steps`.
struct CurriculumSchedule {
  std::int64_t total_steps = 10000;
  double warmup_fraction = 0.2;
  ScheduleShape shape = ScheduleShape::linear;

  void validate() const;
};

double lambda_at(const CurriculumSchedule& schedule, std::int64_t step);

struct CompletionParams {
  int neighbors = 8;
  double power = 2.0;
};

/// Fills missing pixels by inverse-distance weighting of the k nearest valid
/// pixels (ties broken by row-major index). Valid pixels are kept verbatim.
DepthMap complete_depth(const DepthMap& sparse, const CompletionParams& params = {});

/// lam * dense + (1 - lam) * stereo, per pixel.
DepthMap fuse_depth(const DepthMap& dense, const DepthMap& stereo, double lam);

/// Uniform metric depth bins.
struct DepthBins {
  int count = 64;
  double min_depth = 2.0;
  double max_depth = 58.0;

  double width() const { return (max_depth - min_depth) / count; }
  double center(int b) const { return min_depth + (b + 0.5) * width(); }
  void validate() const;
};

/// Weights of the small depth feature network.
struct DepthNetWeights {
  Conv2d encoder;    // (C + 1) -> C, applied to [f_fuse | depth / depth_scale]
  Matrix mono_head;  // bins × C
  std::vector<float> mono_bias;
  double depth_scale = 58.0;
};

struct DepthVolumes {
  DepthVolume mono;
  DepthVolume stereo;
  FeatureMap encoded;       // F_e
  std::size_t clamped = 0;  // pixels whose depth fell outside the bin range
};

/// `softness` is the Gaussian width of the stereo soft-binning kernel in
/// units of bin width.
DepthVolumes build_depth_volumes(const DepthMap& fused, const FeatureMap& f_fuse, const DepthNetWeights& net,
                                 const DepthBins& bins, double softness = 0.25);

/// Soft one-hot binning of a single depth value; exposed for testing.
std::vector<double> soft_bin(double depth, const DepthBins& bins, double softness);

/// 1×1×1 projections of the scalar volume entries: query/key map a scalar
/// to `dim` features, value maps a scalar to a scalar.
struct CgAttentionParams {
  int dim = 1;
  std::vector<float> query_w, query_b;
  std::vector<float> key_w, key_b;
  float value_w = 1.0F;
  float value_b = 0.0F;

  static CgAttentionParams identity(int dim);
  void validate() const;
};

/// Row-major bins × bins attention matrix at pixel (y, x); row b holds the
/// weights of query bin b over the key bins.
std::vector<double> cg_attention_weights(const DepthVolume& query_vol, const DepthVolume& kv_vol,
                                         const CgAttentionParams& params, int y, int x);

/// Confidence-gated cross attention along the depth-bin axis:
///   A = softmax(Q_query K_kv^T / sqrt(d)), V_hat = A V_kv,
///   P_conf = softmax over bins of V~_query, output = P_conf ⊙ V_hat.
DepthVolume cg_attention_3d(const DepthVolume& query_vol, const DepthVolume& kv_vol, const CgAttentionParams& params);

struct ChannelAttention {
  Matrix fc1;  // reduced × C
  std::vector<float> b1;
  Matrix fc2;  // C × reduced
  std::vector<float> b2;
};

/// Squeeze-and-excitation: scales channel c by sigmoid(MLP(mean_c)).
VoxelGrid channel_attention(const VoxelGrid& in, const ChannelAttention& ca, std::vector<float>* gates = nullptr);

struct VolumeFusionWeights {
  Conv3d fuse;  // 2 -> C
  Conv3d enc1;  // C -> C
  Conv3d enc2;  // C -> 2C, at half resolution
  Conv3d dec;   // 3C -> C, after upsample + skip concat
  ChannelAttention ca;
  Conv3d head;  // C -> 1
};

/// Concatenate, fuse, 2-level U-Net, channel attention, head, softmax over
/// bins. Returns D_v.
DepthVolume fuse_volumes(const DepthVolume& mono_weighted, const DepthVolume& stereo_weighted,
                         const VolumeFusionWeights& weights);

VoxelGrid volume_as_grid(const DepthVolume& v);
DepthVolume grid_as_volume(const VoxelGrid& g);

}  // namespace ssc
