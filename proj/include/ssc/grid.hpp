#pragma once

// Dense grid containers shared by every stage, plus the sampling primitives
// used for flow warping and deformable attention.
//
// All grids are row-major with the channel axis last. Continuous sampling
// coordinates put the center of cell (0, 0) at (0.0, 0.0); neighbours that
// fall outside the grid contribute zero.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ssc {

struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c, float fill = 0.0F);

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  float& at(int y, int x, int c) { return data[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data[index(y, x, c)]; }

  std::span<float> pixel(int y, int x) { return {data.data() + index(y, x), static_cast<std::size_t>(channels)}; }
  std::span<const float> pixel(int y, int x) const {
    return {data.data() + index(y, x), static_cast<std::size_t>(channels)};
  }

  bool contains(int y, int x) const { return y >= 0 && y < height && x >= 0 && x < width; }
  bool same_shape(const FeatureMap& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }

  /// Throws ShapeError if data length disagrees with the dimensions.
  void validate() const;
};

/// Per-pixel displacement (dx, dy) in pixels.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // interleaved dx, dy

  FlowField() = default;
  FlowField(int h, int w, float dx = 0.0F, float dy = 0.0F);

  std::size_t index(int y, int x) const {
    return 2 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
  }
  float dx(int y, int x) const { return data[index(y, x)]; }
  float dy(int y, int x) const { return data[index(y, x) + 1]; }
  void set(int y, int x, float dx, float dy) {
    data[index(y, x)] = dx;
    data[index(y, x) + 1] = dy;
  }

  FeatureMap as_feature_map() const;
  static FlowField from_feature_map(const FeatureMap& map);
  void validate() const;
};

struct BoolMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  BoolMask() = default;
  BoolMask(int h, int w, bool fill = false);

  bool at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool v) { values[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
};

struct VoxelDims {
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  std::size_t linear(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * static_cast<std::size_t>(y) + static_cast<std::size_t>(iy)) *
               static_cast<std::size_t>(z) +
           static_cast<std::size_t>(iz);
  }
  bool contains(int ix, int iy, int iz) const {
    return ix >= 0 && ix < x && iy >= 0 && iy < y && iz >= 0 && iz < z;
  }
  bool operator==(const VoxelDims&) const = default;
};

/// X × Y × Z × C real-valued voxel features. Also reused for multi-channel
/// depth feature volumes (dims = bins × height × width).
struct VoxelGrid {
  VoxelDims dims;
  int channels = 0;
  std::vector<float> data;

  VoxelGrid() = default;
  VoxelGrid(VoxelDims d, int c, float fill = 0.0F);

  std::size_t index(int ix, int iy, int iz, int c = 0) const {
    return dims.linear(ix, iy, iz) * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c);
  }
  float& at(int ix, int iy, int iz, int c) { return data[index(ix, iy, iz, c)]; }
  float at(int ix, int iy, int iz, int c) const { return data[index(ix, iy, iz, c)]; }

  std::span<float> cell(std::size_t linear) {
    return {data.data() + linear * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)};
  }
  std::span<const float> cell(std::size_t linear) const {
    return {data.data() + linear * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)};
  }

  bool same_shape(const VoxelGrid& o) const { return dims == o.dims && channels == o.channels; }
  void validate() const;
};

inline constexpr std::uint8_t kEmptyLabel = 0;
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Semantic label per voxel. Id 0 is empty space, ids 1..num_classes are the
/// semantic classes, 255 excludes the voxel from losses and metrics.
struct LabelGrid {
  VoxelDims dims;
  int num_classes = 0;
  std::vector<std::uint8_t> labels;

  LabelGrid() = default;
  LabelGrid(VoxelDims d, int classes, std::uint8_t fill = kEmptyLabel);

  std::uint8_t at(int ix, int iy, int iz) const { return labels[dims.linear(ix, iy, iz)]; }
  void set(int ix, int iy, int iz, std::uint8_t v) { labels[dims.linear(ix, iy, iz)] = v; }

  /// Throws InputError when a label is neither a class id nor empty/ignore.
  void validate() const;
};

/// Metric depth per pixel; values <= 0 (or non-finite) mark missing pixels.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<float> depth;

  DepthMap() = default;
  DepthMap(int h, int w, float fill = 0.0F);

  float at(int y, int x) const { return depth[static_cast<std::size_t>(y) * width + x]; }
  float& at(int y, int x) { return depth[static_cast<std::size_t>(y) * width + x]; }
  bool valid(int y, int x) const;
  std::size_t valid_count() const;
  bool same_shape(const DepthMap& o) const { return height == o.height && width == o.width; }
};

/// bins × height × width, one scalar per (bin, pixel).
struct DepthVolume {
  int bins = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  DepthVolume() = default;
  DepthVolume(int d, int h, int w, float fill = 0.0F);

  std::size_t index(int b, int y, int x) const {
    return (static_cast<std::size_t>(b) * static_cast<std::size_t>(height) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(width) +
           static_cast<std::size_t>(x);
  }
  float at(int b, int y, int x) const { return data[index(b, y, x)]; }
  float& at(int b, int y, int x) { return data[index(b, y, x)]; }
  bool same_shape(const DepthVolume& o) const { return bins == o.bins && height == o.height && width == o.width; }
};

/// Bilinear interpolation of the four cells around (x, y); x is the column.
void bilinear_sample_into(const FeatureMap& src, double x, double y, std::span<float> out);
std::vector<float> bilinear_sample(const FeatureMap& src, double x, double y);

/// Backward warp: out(p) = src(p + flow(p)).
FeatureMap warp(const FeatureMap& src, const FlowField& flow);

/// Trilinear interpolation in voxel-index coordinates, zero outside the grid.
void trilinear_sample_into(const VoxelGrid& src, double x, double y, double z, std::span<float> out);

bool all_finite(std::span<const float> values);

}  // namespace ssc
