#include "ssc/depth_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ssc/errors.hpp"

namespace ssc {
namespace {

void require_dense(const DepthMap& d, const char* what) {
  if (d.depth.size() != static_cast<std::size_t>(d.height) * d.width) {
    throw ShapeError(std::string(what) + ": depth data length mismatch");
  }
  if (d.valid_count() != d.depth.size()) throw InputError(std::string(what) + ": depth map has missing pixels");
}

VoxelGrid avg_pool2(const VoxelGrid& in) {
  const VoxelDims od{(in.dims.x + 1) / 2, (in.dims.y + 1) / 2, (in.dims.z + 1) / 2};
  VoxelGrid out(od, in.channels);
  for (int x = 0; x < od.x; ++x) {
    for (int y = 0; y < od.y; ++y) {
      for (int z = 0; z < od.z; ++z) {
        auto dst = out.cell(od.linear(x, y, z));
        int n = 0;
        for (int c = 0; c < 8; ++c) {
          const int sx = 2 * x + (c & 1);
          const int sy = 2 * y + ((c >> 1) & 1);
          const int sz = 2 * z + ((c >> 2) & 1);
          if (!in.dims.contains(sx, sy, sz)) continue;
          ++n;
          const auto src = in.cell(in.dims.linear(sx, sy, sz));
          for (std::size_t ch = 0; ch < dst.size(); ++ch) dst[ch] += src[ch];
        }
        for (auto& v : dst) v /= static_cast<float>(n);
      }
    }
  }
  return out;
}

VoxelGrid upsample_nearest(const VoxelGrid& in, VoxelDims target) {
  VoxelGrid out(target, in.channels);
  for (int x = 0; x < target.x; ++x)
    for (int y = 0; y < target.y; ++y)
      for (int z = 0; z < target.z; ++z) {
        const auto src = in.cell(in.dims.linear(x / 2, y / 2, z / 2));
        std::copy(src.begin(), src.end(), out.cell(target.linear(x, y, z)).begin());
      }
  return out;
}

VoxelGrid concat_channels(const VoxelGrid& a, const VoxelGrid& b) {
  if (!(a.dims == b.dims)) throw ShapeError("concat_channels: dims differ");
  VoxelGrid out(a.dims, a.channels + b.channels);
  for (std::size_t i = 0; i < a.dims.count(); ++i) {
    auto dst = out.cell(i);
    const auto sa = a.cell(i);
    const auto sb = b.cell(i);
    std::copy(sa.begin(), sa.end(), dst.begin());
    std::copy(sb.begin(), sb.end(), dst.begin() + static_cast<std::ptrdiff_t>(sa.size()));
  }
  return out;
}

VoxelGrid conv_relu(const VoxelGrid& in, const Conv3d& conv) {
  VoxelGrid out = conv3d(in, conv);
  relu_inplace(out.data);
  return out;
}

}  // namespace

ScheduleShape parse_schedule_shape(const std::string& name) {
  if (name == "linear") return ScheduleShape::linear;
  if (name == "cosine") return ScheduleShape::cosine;
  throw InputError("unknown lambda shape: " + name);
}

std::string to_string(ScheduleShape shape) { return shape == ScheduleShape::linear ? "linear" : "cosine"; }

void CurriculumSchedule::validate() const {
  if (total_steps < 1) throw InputError("CurriculumSchedule: total_steps must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw InputError("CurriculumSchedule: warmup_fraction must lie in [0, 1]");
  }
}

double lambda_at(const CurriculumSchedule& schedule, std::int64_t step) {
  schedule.validate();
  if (step < 0 || step > schedule.total_steps) throw InputError("lambda_at: step outside [0, total_steps]");
  if (step == schedule.total_steps) return 0.0;
  const double total = static_cast<double>(schedule.total_steps);
  const double warmup = schedule.warmup_fraction * total;
  const double s = static_cast<double>(step);
  if (s < warmup) return 1.0;
  const double progress = (s - warmup) / (total - warmup);
  if (schedule.shape == ScheduleShape::linear) return 1.0 - progress;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

DepthMap complete_depth(const DepthMap& sparse, const CompletionParams& params) {
  if (sparse.depth.size() != static_cast<std::size_t>(sparse.height) * sparse.width) {
    throw ShapeError("complete_depth: depth data length mismatch");
  }
  if (params.neighbors < 1) throw InputError("complete_depth: neighbors must be >= 1");

  struct Source {
    int y, x;
    float depth;
  };
  std::vector<Source> sources;
  for (int y = 0; y < sparse.height; ++y)
    for (int x = 0; x < sparse.width; ++x)
      if (sparse.valid(y, x)) sources.push_back({y, x, sparse.at(y, x)});
  if (sources.empty()) throw InputError("complete_depth: no valid pixels");

  DepthMap out = sparse;
  const std::size_t k = std::min(sources.size(), static_cast<std::size_t>(params.neighbors));
  std::vector<std::pair<double, std::size_t>> dist(sources.size());
  for (int y = 0; y < sparse.height; ++y) {
    for (int x = 0; x < sparse.width; ++x) {
      if (sparse.valid(y, x)) continue;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        const double dy = sources[i].y - y;
        const double dx = sources[i].x - x;
        dist[i] = {dy * dy + dx * dx, i};
      }
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
      double num = 0.0;
      double den = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double w = 1.0 / std::pow(std::sqrt(dist[i].first), params.power);
        num += w * sources[dist[i].second].depth;
        den += w;
      }
      out.at(y, x) = static_cast<float>(num / den);
    }
  }
  return out;
}

DepthMap fuse_depth(const DepthMap& dense, const DepthMap& stereo, double lam) {
  if (!dense.same_shape(stereo)) throw ShapeError("fuse_depth: depth map shapes differ");
  if (!(lam >= 0.0 && lam <= 1.0)) throw InputError("fuse_depth: lambda must lie in [0, 1]");
  require_dense(dense, "fuse_depth(dense)");
  require_dense(stereo, "fuse_depth(stereo)");
  DepthMap out(dense.height, dense.width);
  for (std::size_t i = 0; i < out.depth.size(); ++i) {
    out.depth[i] = static_cast<float>(lam * dense.depth[i] + (1.0 - lam) * stereo.depth[i]);
  }
  return out;
}

void DepthBins::validate() const {
  if (count < 1) throw InputError("DepthBins: count must be >= 1");
  if (!(min_depth > 0.0 && max_depth > min_depth)) throw InputError("DepthBins: need 0 < min < max");
}

std::vector<double> soft_bin(double depth, const DepthBins& bins, double softness) {
  bins.validate();
  const double d = std::clamp(depth, bins.center(0), bins.center(bins.count - 1));
  std::vector<double> p(static_cast<std::size_t>(bins.count), 0.0);
  if (softness <= 0.0) {
    const int b = std::clamp(static_cast<int>((d - bins.min_depth) / bins.width()), 0, bins.count - 1);
    p[static_cast<std::size_t>(b)] = 1.0;
    return p;
  }
  const double sigma = softness * bins.width();
  for (int b = 0; b < bins.count; ++b) {
    const double z = (d - bins.center(b)) / sigma;
    p[static_cast<std::size_t>(b)] = -0.5 * z * z;
  }
  softmax_inplace(p);
  return p;
}

DepthVolumes build_depth_volumes(const DepthMap& fused, const FeatureMap& f_fuse, const DepthNetWeights& net,
                                 const DepthBins& bins, double softness) {
  bins.validate();
  f_fuse.validate();
  if (fused.height != f_fuse.height || fused.width != f_fuse.width) {
    throw ShapeError("build_depth_volumes: depth and feature map sizes differ");
  }
  require_dense(fused, "build_depth_volumes");
  if (net.encoder.in_channels != f_fuse.channels + 1) {
    throw ShapeError("build_depth_volumes: encoder expects C+1 input channels");
  }
  if (net.mono_head.rows != bins.count || net.mono_head.cols != net.encoder.out_channels ||
      net.mono_bias.size() != static_cast<std::size_t>(bins.count)) {
    throw ShapeError("build_depth_volumes: mono head must be bins x encoder channels");
  }

  const int h = fused.height;
  const int w = fused.width;
  FeatureMap stacked(h, w, f_fuse.channels + 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto dst = stacked.pixel(y, x);
      const auto src = f_fuse.pixel(y, x);
      std::copy(src.begin(), src.end(), dst.begin());
      dst.back() = static_cast<float>(fused.at(y, x) / net.depth_scale);
    }
  }

  DepthVolumes out;
  out.encoded = conv2d(stacked, net.encoder);
  relu_inplace(out.encoded.data);
  out.mono = DepthVolume(bins.count, h, w);
  out.stereo = DepthVolume(bins.count, h, w);

  std::vector<float> logits_f(static_cast<std::size_t>(bins.count));
  std::vector<double> logits(static_cast<std::size_t>(bins.count));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      matvec(net.mono_head, out.encoded.pixel(y, x), logits_f, net.mono_bias);
      std::copy(logits_f.begin(), logits_f.end(), logits.begin());
      softmax_inplace(logits);
      const double d = fused.at(y, x);
      if (d < bins.min_depth || d > bins.max_depth) ++out.clamped;
      const auto st = soft_bin(d, bins, softness);
      for (int b = 0; b < bins.count; ++b) {
        out.mono.at(b, y, x) = static_cast<float>(logits[static_cast<std::size_t>(b)]);
        out.stereo.at(b, y, x) = static_cast<float>(st[static_cast<std::size_t>(b)]);
      }
    }
  }
  return out;
}

CgAttentionParams CgAttentionParams::identity(int dim) {
  CgAttentionParams p;
  p.dim = dim;
  p.query_w.assign(static_cast<std::size_t>(dim), 0.0F);
  p.query_b.assign(static_cast<std::size_t>(dim), 0.0F);
  p.key_w.assign(static_cast<std::size_t>(dim), 0.0F);
  p.key_b.assign(static_cast<std::size_t>(dim), 0.0F);
  p.query_w[0] = 1.0F;
  p.key_w[0] = 1.0F;
  return p;
}

void CgAttentionParams::validate() const {
  const auto d = static_cast<std::size_t>(dim);
  if (dim < 1 || query_w.size() != d || query_b.size() != d || key_w.size() != d || key_b.size() != d) {
    throw ShapeError("CgAttentionParams: projection sizes must equal dim");
  }
}

namespace {

void check_volumes(const DepthVolume& a, const DepthVolume& b) {
  if (!a.same_shape(b)) throw ShapeError("cg_attention_3d: volumes must share bins x height x width");
  if (a.data.size() != static_cast<std::size_t>(a.bins) * a.height * a.width ||
      b.data.size() != static_cast<std::size_t>(b.bins) * b.height * b.width) {
    throw ShapeError("cg_attention_3d: volume data length mismatch");
  }
}

// Fills `attn` (bins × bins) for one pixel.
void pixel_attention(const DepthVolume& q_vol, const DepthVolume& kv_vol, const CgAttentionParams& p, int y, int x,
                     std::vector<double>& attn, std::vector<double>& keys) {
  const int bins = q_vol.bins;
  const auto dim = static_cast<std::size_t>(p.dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.dim));
  keys.resize(static_cast<std::size_t>(bins) * dim);
  for (int b = 0; b < bins; ++b) {
    const double v = kv_vol.at(b, y, x);
    for (std::size_t i = 0; i < dim; ++i) {
      keys[static_cast<std::size_t>(b) * dim + i] = static_cast<double>(p.key_w[i]) * v + p.key_b[i];
    }
  }
  attn.resize(static_cast<std::size_t>(bins) * bins);
  for (int b = 0; b < bins; ++b) {
    const double qv = q_vol.at(b, y, x);
    std::span<double> row(attn.data() + static_cast<std::size_t>(b) * bins, static_cast<std::size_t>(bins));
    for (int k = 0; k < bins; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double q = static_cast<double>(p.query_w[i]) * qv + p.query_b[i];
        dot += q * keys[static_cast<std::size_t>(k) * dim + i];
      }
      row[static_cast<std::size_t>(k)] = dot * scale;
    }
    softmax_inplace(row);
  }
}

}  // namespace

std::vector<double> cg_attention_weights(const DepthVolume& query_vol, const DepthVolume& kv_vol,
                                         const CgAttentionParams& params, int y, int x) {
  params.validate();
  check_volumes(query_vol, kv_vol);
  if (y < 0 || y >= query_vol.height || x < 0 || x >= query_vol.width) {
    throw InputError("cg_attention_weights: pixel out of bounds");
  }
  std::vector<double> attn;
  std::vector<double> keys;
  pixel_attention(query_vol, kv_vol, params, y, x, attn, keys);
  return attn;
}

DepthVolume cg_attention_3d(const DepthVolume& query_vol, const DepthVolume& kv_vol, const CgAttentionParams& params) {
  params.validate();
  check_volumes(query_vol, kv_vol);
  const int bins = query_vol.bins;
  DepthVolume out(bins, query_vol.height, query_vol.width);
  std::vector<double> attn;
  std::vector<double> keys;
  std::vector<double> conf(static_cast<std::size_t>(bins));
  for (int y = 0; y < query_vol.height; ++y) {
    for (int x = 0; x < query_vol.width; ++x) {
      pixel_attention(query_vol, kv_vol, params, y, x, attn, keys);
      for (int b = 0; b < bins; ++b) {
        conf[static_cast<std::size_t>(b)] = static_cast<double>(params.value_w) * query_vol.at(b, y, x) + params.value_b;
      }
      softmax_inplace(conf);
      for (int b = 0; b < bins; ++b) {
        double v_hat = 0.0;
        for (int k = 0; k < bins; ++k) {
          const double v = static_cast<double>(params.value_w) * kv_vol.at(k, y, x) + params.value_b;
          v_hat += attn[static_cast<std::size_t>(b) * bins + k] * v;
        }
        out.at(b, y, x) = static_cast<float>(conf[static_cast<std::size_t>(b)] * v_hat);
      }
    }
  }
  return out;
}

VoxelGrid channel_attention(const VoxelGrid& in, const ChannelAttention& ca, std::vector<float>* gates) {
  const int c = in.channels;
  if (ca.fc1.cols != c || ca.fc2.rows != c || ca.fc2.cols != ca.fc1.rows) {
    throw ShapeError("channel_attention: MLP shapes do not match channel count");
  }
  const std::size_t n = in.dims.count();
  std::vector<double> sums(static_cast<std::size_t>(c), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cell = in.cell(i);
    for (int ch = 0; ch < c; ++ch) sums[static_cast<std::size_t>(ch)] += cell[static_cast<std::size_t>(ch)];
  }
  std::vector<float> pooled(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    pooled[static_cast<std::size_t>(ch)] = static_cast<float>(n ? sums[static_cast<std::size_t>(ch)] / static_cast<double>(n) : 0.0);
  }
  std::vector<float> hidden(static_cast<std::size_t>(ca.fc1.rows));
  matvec(ca.fc1, pooled, hidden, ca.b1);
  relu_inplace(hidden);
  std::vector<float> g(static_cast<std::size_t>(c));
  matvec(ca.fc2, hidden, g, ca.b2);
  for (auto& v : g) v = static_cast<float>(sigmoid(v));

  VoxelGrid out = in;
  for (std::size_t i = 0; i < n; ++i) {
    auto cell = out.cell(i);
    for (int ch = 0; ch < c; ++ch) cell[static_cast<std::size_t>(ch)] *= g[static_cast<std::size_t>(ch)];
  }
  if (gates) *gates = g;
  return out;
}

VoxelGrid volume_as_grid(const DepthVolume& v) {
  VoxelGrid g({v.bins, v.height, v.width}, 1);
  g.data = v.data;
  return g;
}

DepthVolume grid_as_volume(const VoxelGrid& g) {
  if (g.channels != 1) throw ShapeError("grid_as_volume: expected a single channel");
  DepthVolume v(g.dims.x, g.dims.y, g.dims.z);
  v.data = g.data;
  return v;
}

DepthVolume fuse_volumes(const DepthVolume& mono_weighted, const DepthVolume& stereo_weighted,
                         const VolumeFusionWeights& weights) {
  if (!mono_weighted.same_shape(stereo_weighted)) throw ShapeError("fuse_volumes: volume shapes differ");
  const VoxelGrid stacked = concat_channels(volume_as_grid(mono_weighted), volume_as_grid(stereo_weighted));
  const VoxelGrid fused = conv_relu(stacked, weights.fuse);
  const VoxelGrid e1 = conv_relu(fused, weights.enc1);
  const VoxelGrid e2 = conv_relu(avg_pool2(e1), weights.enc2);
  const VoxelGrid up = upsample_nearest(e2, e1.dims);
  const VoxelGrid d = conv_relu(concat_channels(e1, up), weights.dec);
  const VoxelGrid attended = channel_attention(d, weights.ca);
  const VoxelGrid logits = conv3d(attended, weights.head);
  if (logits.channels != 1) throw ShapeError("fuse_volumes: head must output one channel");

  DepthVolume out = grid_as_volume(logits);
  const int bins = out.bins;
  std::vector<double> column(static_cast<std::size_t>(bins));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int b = 0; b < bins; ++b) column[static_cast<std::size_t>(b)] = out.at(b, y, x);
      softmax_inplace(column);
      for (int b = 0; b < bins; ++b) out.at(b, y, x) = static_cast<float>(column[static_cast<std::size_t>(b)]);
    }
  }
  return out;
}

}  // namespace ssc
