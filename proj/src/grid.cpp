#include "ssc/grid.hpp"

#include <algorithm>
#include <cmath>

#include "ssc/errors.hpp"

namespace ssc {

FeatureMap::FeatureMap(int h, int w, int c, float fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
  if (h < 0 || w < 0 || c < 0) throw ShapeError("FeatureMap: negative dimension");
}

void FeatureMap::validate() const {
  if (height < 0 || width < 0 || channels < 0 ||
      data.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ShapeError("FeatureMap: data length does not match height*width*channels");
  }
}

FlowField::FlowField(int h, int w, float dx, float dy)
    : height(h), width(w), data(2 * static_cast<std::size_t>(h) * w) {
  if (h < 0 || w < 0) throw ShapeError("FlowField: negative dimension");
  for (std::size_t i = 0; i < data.size(); i += 2) {
    data[i] = dx;
    data[i + 1] = dy;
  }
}

FeatureMap FlowField::as_feature_map() const {
  FeatureMap m;
  m.height = height;
  m.width = width;
  m.channels = 2;
  m.data = data;
  return m;
}

FlowField FlowField::from_feature_map(const FeatureMap& map) {
  if (map.channels != 2) throw ShapeError("FlowField: expected 2 channels");
  FlowField f;
  f.height = map.height;
  f.width = map.width;
  f.data = map.data;
  return f;
}

void FlowField::validate() const {
  if (data.size() != 2 * static_cast<std::size_t>(height) * width) {
    throw ShapeError("FlowField: data length does not match height*width*2");
  }
}

BoolMask::BoolMask(int h, int w, bool fill)
    : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

std::size_t BoolMask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

VoxelGrid::VoxelGrid(VoxelDims d, int c, float fill) : dims(d), channels(c), data(d.count() * c, fill) {
  if (d.x < 0 || d.y < 0 || d.z < 0 || c < 0) throw ShapeError("VoxelGrid: negative dimension");
}

void VoxelGrid::validate() const {
  if (data.size() != dims.count() * static_cast<std::size_t>(channels)) {
    throw ShapeError("VoxelGrid: data length does not match X*Y*Z*C");
  }
}

LabelGrid::LabelGrid(VoxelDims d, int classes, std::uint8_t fill)
    : dims(d), num_classes(classes), labels(d.count(), fill) {}

void LabelGrid::validate() const {
  if (labels.size() != dims.count()) throw ShapeError("LabelGrid: label count does not match X*Y*Z");
  if (num_classes < 0 || num_classes >= kIgnoreLabel) throw InputError("LabelGrid: num_classes out of range");
  for (auto l : labels) {
    if (l != kIgnoreLabel && l > num_classes) throw InputError("LabelGrid: label id exceeds num_classes");
  }
}

DepthMap::DepthMap(int h, int w, float fill) : height(h), width(w), depth(static_cast<std::size_t>(h) * w, fill) {}

bool DepthMap::valid(int y, int x) const {
  const float d = at(y, x);
  return std::isfinite(d) && d > 0.0F;
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(depth.begin(), depth.end(), [](float d) { return std::isfinite(d) && d > 0.0F; }));
}

DepthVolume::DepthVolume(int d, int h, int w, float fill)
    : bins(d), height(h), width(w), data(static_cast<std::size_t>(d) * h * w, fill) {}

void bilinear_sample_into(const FeatureMap& src, double x, double y, std::span<float> out) {
  const int c = src.channels;
  std::fill(out.begin(), out.end(), 0.0F);
  // Anything further out than one cell has no in-bounds neighbour.
  if (!(x > -1.0 && y > -1.0 && x < src.width && y < src.height)) return;

  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;

  if (ax == 0.0 && ay == 0.0) {
    if (src.contains(y0, x0)) std::copy_n(src.pixel(y0, x0).begin(), c, out.begin());
    return;
  }

  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const double ws[4] = {(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay};
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int k = 0; k < 4; ++k) {
      if (ws[k] == 0.0 || !src.contains(ys[k], xs[k])) continue;
      acc += ws[k] * src.at(ys[k], xs[k], ch);
    }
    out[static_cast<std::size_t>(ch)] = static_cast<float>(acc);
  }
}

std::vector<float> bilinear_sample(const FeatureMap& src, double x, double y) {
  std::vector<float> out(static_cast<std::size_t>(src.channels));
  bilinear_sample_into(src, x, y, out);
  return out;
}

FeatureMap warp(const FeatureMap& src, const FlowField& flow) {
  src.validate();
  flow.validate();
  if (src.height != flow.height || src.width != flow.width) {
    throw ShapeError("warp: feature map and flow dimensions differ");
  }
  FeatureMap out(src.height, src.width, src.channels);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      bilinear_sample_into(src, x + static_cast<double>(flow.dx(y, x)), y + static_cast<double>(flow.dy(y, x)),
                           out.pixel(y, x));
    }
  }
  return out;
}

void trilinear_sample_into(const VoxelGrid& src, double x, double y, double z, std::span<float> out) {
  std::fill(out.begin(), out.end(), 0.0F);
  const auto& d = src.dims;
  if (!(x > -1.0 && y > -1.0 && z > -1.0 && x < d.x && y < d.y && z < d.z)) return;

  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const double fz = std::floor(z);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const int z0 = static_cast<int>(fz);
  const double a[3] = {x - fx, y - fy, z - fz};

  for (int corner = 0; corner < 8; ++corner) {
    const int bx = corner & 1;
    const int by = (corner >> 1) & 1;
    const int bz = (corner >> 2) & 1;
    const double w = (bx ? a[0] : 1.0 - a[0]) * (by ? a[1] : 1.0 - a[1]) * (bz ? a[2] : 1.0 - a[2]);
    if (w == 0.0 || !d.contains(x0 + bx, y0 + by, z0 + bz)) continue;
    const auto cell = src.cell(d.linear(x0 + bx, y0 + by, z0 + bz));
    for (std::size_t ch = 0; ch < cell.size(); ++ch) {
      out[ch] = static_cast<float>(out[ch] + w * cell[ch]);
    }
  }
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace ssc
