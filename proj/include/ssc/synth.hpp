#pragma once

// Deterministic synthetic driving scenes: a ground plane, a back wall and
// moving axis-aligned boxes seen by a forward-moving pinhole camera. Every
// quantity the pipeline consumes (depth, flow, occlusion, labels, voxels)
// is computed exactly by ray casting.
//
// World axes: x right, y forward, z up. Velocities are in meters per frame.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssc/geometry.hpp"
#include "ssc/grid.hpp"

namespace ssc {

struct SceneObject {
  int label = 1;
  Eigen::Vector3d min = Eigen::Vector3d::Zero();  // at frame 0
  Eigen::Vector3d max = Eigen::Vector3d::Ones();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();

  Eigen::Vector3d min_at(int frame) const { return min + velocity * frame; }
  Eigen::Vector3d max_at(int frame) const { return max + velocity * frame; }
};

struct SceneConfig {
  std::uint64_t seed = 0;
  double extent = 30.0;  // back wall at y = extent
  int width = 64;
  int height = 64;
  double focal = 40.0;
  int frames = 3;
  std::vector<Eigen::Matrix4d> poses;  // cam_to_world per frame
  std::vector<SceneObject> objects;

  bool ground = true;
  bool back_wall = true;
  int ground_label = 1;
  int wall_label = 3;
  int num_classes = 5;
  std::vector<std::string> class_names{"road", "car", "building", "vegetation", "pole"};

  double stereo_sigma = 0.3;  // meters
  int lidar_row_stride = 4;
  int lidar_col_stride = 2;

  /// Throws InputError on fewer than 3 frames, a pose count mismatch, a
  /// non-rigid pose, a bad label or a degenerate box.
  void validate() const;
  CameraModel camera(int frame) const;
  /// Channels of the pseudo image: one per class plus two texture channels.
  int image_channels() const { return num_classes + 2; }
};

/// Rotation taking camera axes (x right, y down, z forward) to world axes.
Eigen::Matrix3d forward_camera_rotation();

/// Straight forward trajectory ending at (0, 0, height) on the last frame.
std::vector<Eigen::Matrix4d> forward_trajectory(int frames, double speed, double height);

struct RandomSceneOptions {
  int frames = 3;
  int width = 64;
  int height = 64;
  double focal = 40.0;
  double camera_speed = 0.5;
  double camera_height = 1.6;
  int min_objects = 3;
  int max_objects = 6;
  double moving_fraction = 0.6;
  double max_speed = 0.8;
};

SceneConfig random_scene(std::uint64_t seed, const RandomSceneOptions& options = {});

/// Reads a scene. Missing "poses" fall back to a forward trajectory and
/// missing "objects" to randomly placed objects drawn from "seed".
SceneConfig scene_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const SceneConfig& config);

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

struct FrameRender {
  DepthMap depth;       // exact z-depth, 0 where nothing is hit
  DepthMap lidar;       // scanline subsample of depth
  DepthMap stereo;      // depth plus seeded Gaussian noise
  FeatureMap image;     // class one-hot plus object-attached texture
  LabelMap labels;      // per-pixel class id, empty where nothing is hit
};

FrameRender render(const SceneConfig& config, int frame);

/// Soft per-pixel class distribution over ids 0..num_classes derived from
/// the label map: `confidence` on the true id, the rest spread uniformly.
FeatureMap pseudo_labels(const LabelMap& labels, int num_classes, double confidence = 0.9);

struct RayHit {
  double depth = 0.0;  // along a direction with unit camera z
  int label = 0;
  int object = -1;     // index into objects, -1 for ground, -2 for wall
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

std::optional<RayHit> cast_ray(const SceneConfig& config, int frame, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction);

/// `fwd` maps frame `from` to `to` on the `from` grid, `bwd` maps `to` back
/// to `from` on the `to` grid. `occlusion` marks `from` pixels whose surface
/// point is hidden or out of view in `to`; `occlusion_bwd` is the converse.
struct FlowTruth {
  FlowField fwd;
  FlowField bwd;
  BoolMask occlusion;
  BoolMask occlusion_bwd;
};

FlowTruth gt_flow(const SceneConfig& config, int from, int to);

/// Later objects overwrite earlier ones; the ground fills the cells whose
/// z-range contains 0 and the wall those whose y-range contains `extent`.
LabelGrid gt_voxels(const SceneConfig& config, int frame, const VoxelSpec& spec);

/// 64-bit FNV-1a over the seed, frame and a tag; used to derive stream seeds.
std::uint64_t stream_seed(std::uint64_t seed, int frame, std::string_view tag);

}  // namespace ssc
