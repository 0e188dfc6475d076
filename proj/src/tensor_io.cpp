#include "ssc/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ssc/errors.hpp"

namespace ssc {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.shape.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + " tensor, got rank " +
                     std::to_string(t.shape.size()));
  }
  if (t.data.size() != t.element_count()) throw ShapeError(std::string(what) + ": payload size mismatch");
}

int dim(const Tensor& t, std::size_t i) { return static_cast<int>(t.shape[i]); }

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0x0000FF00U) | ((v << 8) & 0x00FF0000U) | (v << 24);
}

}  // namespace

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

std::string encode_tensor_header(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "{\"shape\":[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << "],\"dtype\":\"f32\",\"order\":\"row-major\"}";
  return os.str();
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  if (t.data.size() != t.element_count()) throw ShapeError("write_tensor: payload size does not match shape");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  out << encode_tensor_header(t.shape) << '\n';
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  } else {
    for (float f : t.data) {
      std::uint32_t bits = byteswap32(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!out) throw InputError("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open tensor file: " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw InputError("missing tensor header: " + path.string());

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad tensor header in " + path.string() + ": " + e.what());
  }
  if (j.value("dtype", "") != "f32" || j.value("order", "") != "row-major" || !j.contains("shape")) {
    throw InputError("unsupported tensor header in " + path.string());
  }

  Tensor t;
  for (const auto& s : j.at("shape")) {
    const auto v = s.get<std::int64_t>();
    if (v < 0) throw InputError("negative dimension in " + path.string());
    t.shape.push_back(v);
  }
  t.data.resize(t.element_count());
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  if (static_cast<std::size_t>(in.gcount()) != t.data.size() * 4) {
    throw InputError("truncated tensor payload: " + path.string());
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& f : t.data) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
  return t;
}

Tensor to_tensor(const FeatureMap& m) { return {{m.height, m.width, m.channels}, m.data}; }
Tensor to_tensor(const FlowField& f) { return {{f.height, f.width, 2}, f.data}; }

Tensor to_tensor(const BoolMask& m) {
  Tensor t{{m.height, m.width}, {}};
  t.data.reserve(m.values.size());
  for (auto v : m.values) t.data.push_back(v ? 1.0F : 0.0F);
  return t;
}

Tensor to_tensor(const VoxelGrid& g) { return {{g.dims.x, g.dims.y, g.dims.z, g.channels}, g.data}; }

Tensor to_tensor(const LabelGrid& g) {
  Tensor t{{g.dims.x, g.dims.y, g.dims.z}, {}};
  t.data.reserve(g.labels.size());
  for (auto v : g.labels) t.data.push_back(static_cast<float>(v));
  return t;
}

Tensor to_tensor(const DepthMap& d) { return {{d.height, d.width}, d.depth}; }
Tensor to_tensor(const DepthVolume& v) { return {{v.bins, v.height, v.width}, v.data}; }

FeatureMap feature_map_from(const Tensor& t) {
  require_rank(t, 3, "feature map");
  FeatureMap m;
  m.height = dim(t, 0);
  m.width = dim(t, 1);
  m.channels = dim(t, 2);
  m.data = t.data;
  return m;
}

FlowField flow_field_from(const Tensor& t) {
  require_rank(t, 3, "flow field");
  if (t.shape[2] != 2) throw ShapeError("flow field: last dimension must be 2");
  FlowField f;
  f.height = dim(t, 0);
  f.width = dim(t, 1);
  f.data = t.data;
  return f;
}

BoolMask bool_mask_from(const Tensor& t) {
  require_rank(t, 2, "mask");
  BoolMask m(dim(t, 0), dim(t, 1));
  for (std::size_t i = 0; i < t.data.size(); ++i) m.values[i] = t.data[i] != 0.0F ? 1 : 0;
  return m;
}

VoxelGrid voxel_grid_from(const Tensor& t) {
  require_rank(t, 4, "voxel grid");
  VoxelGrid g;
  g.dims = {dim(t, 0), dim(t, 1), dim(t, 2)};
  g.channels = dim(t, 3);
  g.data = t.data;
  return g;
}

LabelGrid label_grid_from(const Tensor& t, int num_classes) {
  require_rank(t, 3, "label grid");
  LabelGrid g({dim(t, 0), dim(t, 1), dim(t, 2)}, num_classes);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    const float v = t.data[i];
    if (!(v >= 0.0F && v <= 255.0F) || std::floor(v) != v) throw InputError("label grid: non-integer label");
    g.labels[i] = static_cast<std::uint8_t>(v);
  }
  g.validate();
  return g;
}

DepthMap depth_map_from(const Tensor& t) {
  require_rank(t, 2, "depth map");
  DepthMap d;
  d.height = dim(t, 0);
  d.width = dim(t, 1);
  d.depth = t.data;
  return d;
}

DepthVolume depth_volume_from(const Tensor& t) {
  require_rank(t, 3, "depth volume");
  DepthVolume v;
  v.bins = dim(t, 0);
  v.height = dim(t, 1);
  v.width = dim(t, 2);
  v.data = t.data;
  return v;
}

}  // namespace ssc
