#include "ssc/voxel_lift.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>

#include "ssc/errors.hpp"

namespace ssc {

LiftResult lss_lift(const DepthVolume& d_v, const FeatureMap& feat, const DepthBins& bins, const CameraModel& cam,
                    const VoxelSpec& spec) {
  cam.validate();
  spec.validate();
  bins.validate();
  feat.validate();
  if (d_v.height != feat.height || d_v.width != feat.width) throw ShapeError("lss_lift: volume and features differ");
  if (d_v.bins != bins.count) throw ShapeError("lss_lift: volume bin count differs from bin spec");

  const Eigen::Matrix3d k_inv = cam.intrinsics.inverse();
  const Eigen::Matrix3d rot = cam.cam_to_world.block<3, 3>(0, 0);
  const Eigen::Vector3d pos = cam.position();
  const int c = feat.channels;

  std::vector<double> acc(spec.dims.count() * static_cast<std::size_t>(c), 0.0);
  LiftResult result;
  for (int y = 0; y < feat.height; ++y) {
    for (int x = 0; x < feat.width; ++x) {
      const Eigen::Vector3d ray = k_inv * Eigen::Vector3d(x, y, 1.0);
      const Eigen::Vector3d dir = rot * (ray / ray.z());
      const auto f = feat.pixel(y, x);
      for (int b = 0; b < bins.count; ++b) {
        const auto cell = spec.cell_of(pos + bins.center(b) * dir);
        if (!cell) {
          ++result.dropped_points;
          continue;
        }
        const double w = d_v.at(b, y, x);
        if (w == 0.0) continue;
        double* dst = acc.data() + spec.dims.linear((*cell)[0], (*cell)[1], (*cell)[2]) * static_cast<std::size_t>(c);
        for (int ch = 0; ch < c; ++ch) dst[ch] += w * f[static_cast<std::size_t>(ch)];
      }
    }
  }
  result.grid = VoxelGrid(spec.dims, c);
  std::transform(acc.begin(), acc.end(), result.grid.data.begin(), [](double v) { return static_cast<float>(v); });
  return result;
}

ProposalSet propose(const VoxelGrid& v_coarse, double threshold, std::size_t max_count) {
  v_coarse.validate();
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < v_coarse.dims.count(); ++i) {
    double sq = 0.0;
    for (float v : v_coarse.cell(i)) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (norm > threshold) scored.emplace_back(norm, i);
  }
  const auto by_norm = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
  const std::size_t keep = std::min(max_count, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), by_norm);
  ProposalSet set;
  set.indices.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) set.indices.push_back(scored[i].second);
  return set;
}

DeformAttnParams DeformAttnParams::zero_offsets(int channels, int points, int offset_dims) {
  DeformAttnParams p;
  p.points = points;
  p.offset_dims = offset_dims;
  p.offset_w = Matrix(points * offset_dims, channels);
  p.offset_b.assign(static_cast<std::size_t>(points * offset_dims), 0.0F);
  p.attn_w = Matrix(points, channels);
  p.attn_b.assign(static_cast<std::size_t>(points), 0.0F);
  p.value = Matrix::identity(channels);
  return p;
}

void DeformAttnParams::validate(int query_channels, int sample_channels) const {
  if (points < 1) throw InputError("DeformAttnParams: need at least one sampling point");
  if (offset_dims < 1) throw InputError("DeformAttnParams: offset_dims must be positive");
  if (offset_w.rows != points * offset_dims || offset_w.cols != query_channels ||
      offset_b.size() != static_cast<std::size_t>(points * offset_dims)) {
    throw ShapeError("DeformAttnParams: offset predictor shape mismatch");
  }
  if (attn_w.rows != points || attn_w.cols != query_channels || attn_b.size() != static_cast<std::size_t>(points)) {
    throw ShapeError("DeformAttnParams: attention predictor shape mismatch");
  }
  if (value.cols != sample_channels) throw ShapeError("DeformAttnParams: value projection shape mismatch");
}

std::vector<double> deform_attention_weights(const DeformAttnParams& params, std::span<const float> query) {
  std::vector<float> logits(static_cast<std::size_t>(params.points));
  matvec(params.attn_w, query, logits, params.attn_b);
  std::vector<double> w(logits.begin(), logits.end());
  softmax_inplace(w);
  return w;
}

std::vector<double> deform_offsets(const DeformAttnParams& params, std::span<const float> query) {
  std::vector<float> off(static_cast<std::size_t>(params.points * params.offset_dims));
  matvec(params.offset_w, query, off, params.offset_b);
  return {off.begin(), off.end()};
}

VoxelGrid dca(const ProposalSet& proposals, const VoxelGrid& v_coarse, const FeatureMap& feat, const CameraModel& cam,
              const VoxelSpec& spec, const DeformAttnParams& params) {
  cam.validate();
  spec.validate();
  v_coarse.validate();
  feat.validate();
  if (!(v_coarse.dims == spec.dims)) throw ShapeError("dca: voxel grid does not match spec");
  if (params.offset_dims != 2) throw InputError("dca: offsets must be 2D");
  params.validate(v_coarse.channels, feat.channels);
  if (params.value.rows != v_coarse.channels) throw ShapeError("dca: value projection must output grid channels");

  VoxelGrid out = v_coarse;
  std::vector<float> sample(static_cast<std::size_t>(feat.channels));
  std::vector<double> attended(static_cast<std::size_t>(feat.channels));
  std::vector<float> attended_f(static_cast<std::size_t>(feat.channels));
  for (const std::size_t idx : proposals.indices) {
    if (idx >= spec.dims.count()) throw InputError("dca: proposal index outside grid");
    const int ix = static_cast<int>(idx / (static_cast<std::size_t>(spec.dims.y) * spec.dims.z));
    const int iy = static_cast<int>((idx / static_cast<std::size_t>(spec.dims.z)) % static_cast<std::size_t>(spec.dims.y));
    const int iz = static_cast<int>(idx % static_cast<std::size_t>(spec.dims.z));
    const auto uvz = cam.project(spec.center(ix, iy, iz));
    if (!uvz) continue;

    const auto query = v_coarse.cell(idx);
    const auto offsets = deform_offsets(params, query);
    const auto weights = deform_attention_weights(params, query);
    std::fill(attended.begin(), attended.end(), 0.0);
    for (int k = 0; k < params.points; ++k) {
      const double u = uvz->x() + offsets[static_cast<std::size_t>(2 * k)];
      const double v = uvz->y() + offsets[static_cast<std::size_t>(2 * k + 1)];
      bilinear_sample_into(feat, u, v, sample);
      for (std::size_t c = 0; c < sample.size(); ++c) attended[c] += weights[static_cast<std::size_t>(k)] * sample[c];
    }
    std::transform(attended.begin(), attended.end(), attended_f.begin(), [](double v) { return static_cast<float>(v); });
    matvec(params.value, attended_f, out.cell(idx));
  }
  return out;
}

VoxelGrid merge_raw(const VoxelGrid& q_s, const VoxelGrid& v_raw) {
  q_s.validate();
  v_raw.validate();
  if (!q_s.same_shape(v_raw)) throw ShapeError("merge_raw: grid shapes differ");
  VoxelGrid out = q_s;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += v_raw.data[i];
  return out;
}

VoxelGrid dsa(const VoxelGrid& grid, const DeformAttnParams& params) {
  grid.validate();
  if (params.offset_dims != 3) throw InputError("dsa: offsets must be 3D");
  params.validate(grid.channels, grid.channels);
  if (params.value.rows != grid.channels) throw ShapeError("dsa: value projection must preserve channels");

  const auto& d = grid.dims;
  VoxelGrid out = grid;
  const auto c = static_cast<std::size_t>(grid.channels);
  std::vector<float> sample(c);
  std::vector<double> attended(c);
  std::vector<float> attended_f(c);
  std::vector<float> projected(c);
  for (int x = 0; x < d.x; ++x) {
    for (int y = 0; y < d.y; ++y) {
      for (int z = 0; z < d.z; ++z) {
        const std::size_t idx = d.linear(x, y, z);
        const auto query = grid.cell(idx);
        const auto offsets = deform_offsets(params, query);
        const auto weights = deform_attention_weights(params, query);
        std::fill(attended.begin(), attended.end(), 0.0);
        for (int k = 0; k < params.points; ++k) {
          const auto base = static_cast<std::size_t>(3 * k);
          trilinear_sample_into(grid, x + offsets[base], y + offsets[base + 1], z + offsets[base + 2], sample);
          for (std::size_t ch = 0; ch < c; ++ch) attended[ch] += weights[static_cast<std::size_t>(k)] * sample[ch];
        }
        std::transform(attended.begin(), attended.end(), attended_f.begin(), [](double v) { return static_cast<float>(v); });
        matvec(params.value, attended_f, projected);
        auto dst = out.cell(idx);
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += projected[ch];
      }
    }
  }
  return out;
}

TpvPlanes pool_planes(const VoxelGrid& grid) {
  const auto& d = grid.dims;
  const int c = grid.channels;
  TpvPlanes p{FeatureMap(d.x, d.y, c), FeatureMap(d.x, d.z, c), FeatureMap(d.y, d.z, c)};
  std::vector<double> xy(static_cast<std::size_t>(d.x) * d.y * c, 0.0);
  std::vector<double> xz(static_cast<std::size_t>(d.x) * d.z * c, 0.0);
  std::vector<double> yz(static_cast<std::size_t>(d.y) * d.z * c, 0.0);
  for (int x = 0; x < d.x; ++x)
    for (int y = 0; y < d.y; ++y)
      for (int z = 0; z < d.z; ++z) {
        const auto cell = grid.cell(d.linear(x, y, z));
        for (int ch = 0; ch < c; ++ch) {
          const double v = cell[static_cast<std::size_t>(ch)];
          xy[p.xy.index(x, y, ch)] += v;
          xz[p.xz.index(x, z, ch)] += v;
          yz[p.yz.index(y, z, ch)] += v;
        }
      }
  for (std::size_t i = 0; i < xy.size(); ++i) p.xy.data[i] = static_cast<float>(xy[i] / d.z);
  for (std::size_t i = 0; i < xz.size(); ++i) p.xz.data[i] = static_cast<float>(xz[i] / d.y);
  for (std::size_t i = 0; i < yz.size(); ++i) p.yz.data[i] = static_cast<float>(yz[i] / d.x);
  return p;
}

OccEncoding occ_encode(const VoxelGrid& grid, const OccEncoderWeights& weights, double fusion_weight) {
  grid.validate();
  if (!(fusion_weight >= 0.0 && fusion_weight <= 1.0)) throw InputError("occ_encode: fusion weight must lie in [0, 1]");

  OccEncoding enc;
  VoxelGrid hidden = conv3d(grid, weights.local1);
  relu_inplace(hidden.data);
  enc.local = conv3d(hidden, weights.local2);
  if (!enc.local.same_shape(grid)) throw ShapeError("occ_encode: local branch must preserve channels");
  for (std::size_t i = 0; i < enc.local.data.size(); ++i) enc.local.data[i] += grid.data[i];

  const TpvPlanes pooled = pool_planes(grid);
  enc.planes = {conv2d(pooled.xy, weights.plane_xy), conv2d(pooled.xz, weights.plane_xz),
                conv2d(pooled.yz, weights.plane_yz)};
  const int c = grid.channels;
  if (enc.planes.xy.channels != c || enc.planes.xz.channels != c || enc.planes.yz.channels != c) {
    throw ShapeError("occ_encode: plane transforms must preserve channels");
  }

  const auto& d = grid.dims;
  enc.global = VoxelGrid(d, c);
  enc.grid = VoxelGrid(d, c);
  for (int x = 0; x < d.x; ++x)
    for (int y = 0; y < d.y; ++y)
      for (int z = 0; z < d.z; ++z)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t i = grid.index(x, y, z, ch);
          const double g = static_cast<double>(enc.planes.xy.at(x, y, ch)) + enc.planes.xz.at(x, z, ch) +
                           enc.planes.yz.at(y, z, ch);
          enc.global.data[i] = static_cast<float>(g);
          enc.grid.data[i] =
              static_cast<float>(fusion_weight * enc.local.data[i] + (1.0 - fusion_weight) * enc.global.data[i]);
        }
  return enc;
}

Classification classify(const VoxelGrid& grid, const ClassHead& head, int num_classes) {
  grid.validate();
  const int k = num_classes + 1;
  if (head.weight.rows != k || head.weight.cols != grid.channels || head.bias.size() != static_cast<std::size_t>(k)) {
    throw ShapeError("classify: head must be (num_classes+1) x C");
  }
  Classification out{LabelGrid(grid.dims, num_classes), VoxelGrid(grid.dims, k)};
  for (std::size_t i = 0; i < grid.dims.count(); ++i) {
    auto logits = out.logits.cell(i);
    matvec(head.weight, grid.cell(i), logits, head.bias);
    // max_element returns the first maximum, i.e. the lowest class id.
    out.labels.labels[i] = static_cast<std::uint8_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  return out;
}

FeatureMap classify_plane(const FeatureMap& plane, const ClassHead& head) {
  if (head.weight.cols != plane.channels) throw ShapeError("classify_plane: head input width mismatch");
  FeatureMap out(plane.height, plane.width, head.weight.rows);
  for (int y = 0; y < plane.height; ++y)
    for (int x = 0; x < plane.width; ++x) matvec(head.weight, plane.pixel(y, x), out.pixel(y, x), head.bias);
  return out;
}

}  // namespace ssc
