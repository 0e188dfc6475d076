#include "ssc/geometry.hpp"

#include <Eigen/LU>
#include <cmath>

#include "ssc/errors.hpp"

namespace ssc {

void CameraModel::validate() const {
  if (width <= 0 || height <= 0) throw InputError("camera: image size must be positive");
  if (!intrinsics.allFinite() || std::abs(intrinsics.determinant()) < 1e-12) {
    throw InputError("camera: intrinsics are not invertible");
  }
  const Eigen::Matrix3d r = cam_to_world.block<3, 3>(0, 0);
  if (!cam_to_world.allFinite() || !(r.transpose() * r).isApprox(Eigen::Matrix3d::Identity(), 1e-6) ||
      std::abs(r.determinant() - 1.0) > 1e-6) {
    throw InputError("camera: extrinsics are not a rigid transform");
  }
  const Eigen::RowVector4d last = cam_to_world.row(3);
  if (!last.isApprox(Eigen::RowVector4d(0, 0, 0, 1))) throw InputError("camera: bad homogeneous row");
}

Eigen::Vector3d CameraModel::ray_direction(double u, double v) const {
  const Eigen::Vector3d cam = intrinsics.inverse() * Eigen::Vector3d(u, v, 1.0);
  return cam_to_world.block<3, 3>(0, 0) * (cam / cam.z());
}

Eigen::Vector3d CameraModel::unproject(double u, double v, double depth) const {
  const Eigen::Vector3d cam = intrinsics.inverse() * Eigen::Vector3d(u, v, 1.0);
  const Eigen::Vector3d p = cam * (depth / cam.z());
  return cam_to_world.block<3, 3>(0, 0) * p + position();
}

std::optional<Eigen::Vector3d> CameraModel::project(const Eigen::Vector3d& world) const {
  const Eigen::Matrix3d r = cam_to_world.block<3, 3>(0, 0);
  const Eigen::Vector3d cam = r.transpose() * (world - position());
  if (!(cam.z() > 1e-9)) return std::nullopt;
  const Eigen::Vector3d h = intrinsics * cam;
  return Eigen::Vector3d(h.x() / h.z(), h.y() / h.z(), cam.z());
}

CameraModel CameraModel::pinhole(int width, int height, double focal, const Eigen::Matrix4d& cam_to_world) {
  CameraModel c;
  c.width = width;
  c.height = height;
  c.intrinsics << focal, 0.0, (width - 1) / 2.0, 0.0, focal, (height - 1) / 2.0, 0.0, 0.0, 1.0;
  c.cam_to_world = cam_to_world;
  return c;
}

void VoxelSpec::validate() const {
  if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw InputError("voxel spec: dims must be positive");
  if (!(cell_size > 0.0)) throw InputError("voxel spec: cell size must be positive");
  if (!origin.allFinite() || !sensor_origin.allFinite()) throw InputError("voxel spec: non-finite origin");
}

Eigen::Vector3d VoxelSpec::center(int ix, int iy, int iz) const {
  return origin + cell_size * Eigen::Vector3d(ix + 0.5, iy + 0.5, iz + 0.5);
}

std::optional<std::array<int, 3>> VoxelSpec::cell_of(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d rel = (p - origin) / cell_size;
  const double fx = std::floor(rel.x());
  const double fy = std::floor(rel.y());
  const double fz = std::floor(rel.z());
  if (!(fx >= 0 && fy >= 0 && fz >= 0 && fx < dims.x && fy < dims.y && fz < dims.z)) return std::nullopt;
  return std::array<int, 3>{static_cast<int>(fx), static_cast<int>(fy), static_cast<int>(fz)};
}

}  // namespace ssc
