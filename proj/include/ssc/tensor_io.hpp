#pragma once

// On-disk tensor format: one JSON header line
//   {"shape":[...],"dtype":"f32","order":"row-major"}
// followed by the raw little-endian float32 payload. Masks and label grids
// are stored as f32 values.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssc/grid.hpp"

namespace ssc {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::size_t element_count() const;
};

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

std::string encode_tensor_header(const std::vector<std::int64_t>& shape);

Tensor to_tensor(const FeatureMap& m);             // [H, W, C]
Tensor to_tensor(const FlowField& f);              // [H, W, 2]
Tensor to_tensor(const BoolMask& m);               // [H, W]
Tensor to_tensor(const VoxelGrid& g);              // [X, Y, Z, C]
Tensor to_tensor(const LabelGrid& g);              // [X, Y, Z]
Tensor to_tensor(const DepthMap& d);               // [H, W]
Tensor to_tensor(const DepthVolume& v);            // [D, H, W]

FeatureMap feature_map_from(const Tensor& t);
FlowField flow_field_from(const Tensor& t);
BoolMask bool_mask_from(const Tensor& t);
VoxelGrid voxel_grid_from(const Tensor& t);
LabelGrid label_grid_from(const Tensor& t, int num_classes);
DepthMap depth_map_from(const Tensor& t);
DepthVolume depth_volume_from(const Tensor& t);

}  // namespace ssc
