#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>

#include "ssc/grid.hpp"

namespace ssc {

/// Pinhole camera. Camera axes: x right, y down, z forward; `cam_to_world`
/// maps camera coordinates to world meters. Pixel centres sit at integer
/// coordinates.
struct CameraModel {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix4d cam_to_world = Eigen::Matrix4d::Identity();
  int width = 0;
  int height = 0;

  /// Throws InputError for a singular intrinsic matrix or a non-rigid pose.
  void validate() const;

  /// World point at z-depth `depth` along the ray through pixel (u, v).
  Eigen::Vector3d unproject(double u, double v, double depth) const;
  /// World-space direction of the ray through (u, v), scaled so its camera z is 1.
  Eigen::Vector3d ray_direction(double u, double v) const;
  Eigen::Vector3d position() const { return cam_to_world.block<3, 1>(0, 3); }

  /// (u, v, z) of a world point; nullopt when the point is not in front.
  std::optional<Eigen::Vector3d> project(const Eigen::Vector3d& world) const;

  static CameraModel pinhole(int width, int height, double focal, const Eigen::Matrix4d& cam_to_world);
};

/// Axis-aligned voxel grid in world coordinates.
struct VoxelSpec {
  VoxelDims dims{32, 32, 8};
  Eigen::Vector3d origin{-12.8, 0.0, -0.4};  // min corner, meters
  double cell_size = 0.8;
  Eigen::Vector3d sensor_origin{0.0, 0.0, 0.0};

  void validate() const;
  Eigen::Vector3d center(int ix, int iy, int iz) const;
  /// Cell containing `p` (half-open cells), nullopt outside the grid.
  std::optional<std::array<int, 3>> cell_of(const Eigen::Vector3d& p) const;
};

}  // namespace ssc
