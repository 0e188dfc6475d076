// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when
// any criterion fails. Tolerances and time budgets are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "ssc/depth_fusion.hpp"
#include "ssc/flow_align.hpp"
#include "ssc/losses.hpp"
#include "ssc/metrics.hpp"
#include "ssc/pipeline.hpp"
#include "ssc/synth.hpp"
#include "ssc/voxel_lift.hpp"

using namespace ssc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// ------------------------------------------------------------ table arithmetic

Outcome table_arithmetic() {
  const std::vector<std::optional<double>> row{66.4, 33.0, 23.0, 0.1, 21.3, 33.8, 18.3, 3.1, 3.9, 11.7,
                                               27.5, 7.9,  39.7, 2.8, 1.1,  0.0,  10.7, 11.2, 6.7};
  const auto m = mean_iou(row);
  const bool ok = m && std::abs(*m - 16.9) <= 0.1;
  return {ok, fmt("mean of 19 class IoUs = %.4f (target 16.9 +- 0.1)", m ? *m : NAN)};
}

// ------------------------------------------------------------ warp identity

Outcome warp_identity() {
  std::mt19937_64 rng(101);
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const int h = uniform_int(rng, 1, 32), w = uniform_int(rng, 1, 32), c = uniform_int(rng, 1, 8);
    const FeatureMap m = oracle::random_map(rng, h, w, c, -1e4, 1e4);
    const FeatureMap out = warp(m, FlowField(h, w));
    exact += out.data.size() == m.data.size() &&
             std::memcmp(out.data.data(), m.data.data(), m.data.size() * sizeof(float)) == 0;
  }
  return {exact == 100, fmt("%d/100 maps reproduced bit-exactly", exact)};
}

// ------------------------------------------------------------ occlusion check

struct F1Count {
  std::size_t tp = 0, fp = 0, fn = 0;
  void add(const BoolMask& pred, const BoolMask& gt, int border) {
    for (int y = border; y < gt.height - border; ++y)
      for (int x = border; x < gt.width - border; ++x) {
        const bool p = pred.at(y, x), g = gt.at(y, x);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
      }
  }
  double f1() const { return tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn); }
};

Outcome occlusion_oracle() {
  F1Count fwd, bwd, pooled;
  const int scenes = 20;
  for (int s = 0; s < scenes; ++s) {
    const SceneConfig scene = random_scene(1000 + static_cast<std::uint64_t>(s));
    const int t = scene.frames - 1;
    const FlowTruth truth = gt_flow(scene, t - 1, t);
    const auto masks = fwd_bwd_check(truth.fwd, truth.bwd);
    fwd.add(masks.fwd, truth.occlusion, 2);
    bwd.add(masks.bwd, truth.occlusion_bwd, 2);
    pooled.add(masks.fwd, truth.occlusion, 2);
    pooled.add(masks.bwd, truth.occlusion_bwd, 2);
  }
  const double f = pooled.f1();
  return {f >= 0.9, fmt("pooled F1 %.4f over %d scenes (forward mask %.4f, backward mask %.4f; need >= 0.9)", f,
                        scenes, fwd.f1(), bwd.f1())};
}

// ------------------------------------------------------------ attention sums

double sum_error(const std::vector<double>& w) {
  double s = 0.0;
  bool nonneg = true;
  for (double v : w) {
    s += v;
    nonneg = nonneg && v >= 0.0;
  }
  return nonneg ? std::abs(s - 1.0) : INFINITY;
}

Outcome attention_normalisation() {
  std::mt19937_64 rng(202);
  double worst_nca = 0.0, worst_cga = 0.0, worst_dca = 0.0, worst_dsa = 0.0;
  int nca_q = 0, cga_q = 0, dca_q = 0, dsa_q = 0;

  while (nca_q < 1000) {
    const int h = uniform_int(rng, 3, 9), w = uniform_int(rng, 3, 9), c = uniform_int(rng, 1, 6);
    const int frames = uniform_int(rng, 1, 4);
    NcaParams p;
    p.window = 2 * uniform_int(rng, 0, 2) + 1;
    p.dim = uniform_int(rng, 1, 6);
    p.query = oracle::random_matrix(rng, p.dim, c, 3.0);
    p.key = oracle::random_matrix(rng, p.dim, c, 3.0);
    p.value = oracle::random_matrix(rng, p.dim, c);
    p.output = oracle::random_matrix(rng, c, p.dim);
    const FeatureMap cur = oracle::random_map(rng, h, w, c, -3, 3);
    std::vector<FeatureMap> hist;
    for (int f = 0; f < frames; ++f) hist.push_back(oracle::random_map(rng, h, w, c, -3, 3));
    for (int q = 0; q < 50 && nca_q < 1000; ++q, ++nca_q) {
      worst_nca = std::max(worst_nca, sum_error(nca_attention(cur, hist, p, uniform_int(rng, 0, h - 1),
                                                              uniform_int(rng, 0, w - 1))));
    }
  }

  while (cga_q < 1000) {
    const int bins = uniform_int(rng, 1, 16), h = uniform_int(rng, 1, 6), w = uniform_int(rng, 1, 6);
    CgAttentionParams p;
    p.dim = uniform_int(rng, 1, 8);
    for (auto* v : {&p.query_w, &p.query_b, &p.key_w, &p.key_b}) {
      v->resize(static_cast<std::size_t>(p.dim));
      for (auto& x : *v) x = static_cast<float>(uniform(rng, -4, 4));
    }
    p.value_w = static_cast<float>(uniform(rng, -2, 2));
    p.value_b = static_cast<float>(uniform(rng, -1, 1));
    DepthVolume qv(bins, h, w), kv(bins, h, w);
    for (auto& v : qv.data) v = static_cast<float>(uniform(rng, 0, 1));
    for (auto& v : kv.data) v = static_cast<float>(uniform(rng, 0, 1));
    for (int q = 0; q < 20 && cga_q < 1000; ++q) {
      const auto a = cg_attention_weights(qv, kv, p, uniform_int(rng, 0, h - 1), uniform_int(rng, 0, w - 1));
      for (int row = 0; row < bins && cga_q < 1000; ++row, ++cga_q) {
        const std::vector<double> r(a.begin() + row * bins, a.begin() + (row + 1) * bins);
        worst_cga = std::max(worst_cga, sum_error(r));
      }
    }
  }

  auto deform = [&](int offset_dims, int& count, double& worst) {
    while (count < 1000) {
      const int c = uniform_int(rng, 1, 8);
      DeformAttnParams p = DeformAttnParams::zero_offsets(c, uniform_int(rng, 1, 8), offset_dims);
      p.offset_w = oracle::random_matrix(rng, p.points * offset_dims, c);
      p.attn_w = oracle::random_matrix(rng, p.points, c, 4.0);
      for (auto& b : p.attn_b) b = static_cast<float>(uniform(rng, -2, 2));
      for (int q = 0; q < 50 && count < 1000; ++q, ++count) {
        std::vector<float> query(static_cast<std::size_t>(c));
        for (auto& v : query) v = static_cast<float>(uniform(rng, -5, 5));
        worst = std::max(worst, sum_error(deform_attention_weights(p, query)));
      }
    }
  };
  deform(2, dca_q, worst_dca);
  deform(3, dsa_q, worst_dsa);

  const double worst = std::max({worst_nca, worst_cga, worst_dca, worst_dsa});
  return {worst <= 1e-5, fmt("max |sum - 1|: NCA %.2e, CGA %.2e, DCA %.2e, DSA %.2e over 1000 queries each", worst_nca,
                             worst_cga, worst_dca, worst_dsa)};
}

// ------------------------------------------------------------ curriculum

bool same_output(const PipelineResult& a, const PipelineResult& b) {
  return a.output.labels.labels == b.output.labels.labels && a.output.logits.data == b.output.logits.data &&
         a.total_loss == b.total_loss && a.losses.tpv == b.losses.tpv && a.losses.ce == b.losses.ce &&
         to_json(a.metrics) == to_json(b.metrics);
}

Outcome curriculum_contract() {
  bool ends = true, monotone = true;
  for (ScheduleShape shape : {ScheduleShape::linear, ScheduleShape::cosine}) {
    CurriculumSchedule s;
    s.total_steps = 9999;
    s.shape = shape;
    ends = ends && lambda_at(s, 0) == 1.0 && lambda_at(s, s.total_steps) == 0.0;
    double prev = 1.0;
    for (std::int64_t step = 0; step <= s.total_steps; ++step) {
      const double l = lambda_at(s, step);
      monotone = monotone && l <= prev && l >= 0.0 && l <= 1.0;
      prev = l;
    }
  }

  std::mt19937_64 rng(303);
  std::size_t outside = 0;
  for (int i = 0; i < 100; ++i) {
    const int h = uniform_int(rng, 1, 24), w = uniform_int(rng, 1, 24);
    DepthMap dense(h, w), stereo(h, w);
    for (auto& v : dense.depth) v = static_cast<float>(uniform(rng, 0.5, 80));
    for (auto& v : stereo.depth) v = static_cast<float>(uniform(rng, 0.5, 80));
    const DepthMap out = fuse_depth(dense, stereo, uniform(rng, 0, 1));
    for (std::size_t k = 0; k < out.depth.size(); ++k) {
      const float lo = std::min(dense.depth[k], stereo.depth[k]), hi = std::max(dense.depth[k], stereo.depth[k]);
      outside += !(out.depth[k] >= lo && out.depth[k] <= hi);
    }
  }

  PipelineConfig zero;
  zero.lambda_override = 0.0;
  PipelineConfig camera_only;
  camera_only.use_lidar = false;
  const bool identical = same_output(run_pipeline(zero), run_pipeline(camera_only));

  return {ends && monotone && outside == 0 && identical,
          fmt("endpoints %s, 10^4-step sweep non-increasing %s, fused pixels out of bounds %zu, "
              "lambda=0 vs stereo-only bit-identical %s",
              ends ? "ok" : "bad", monotone ? "yes" : "no", outside, identical ? "yes" : "no")};
}

// ------------------------------------------------------------ lift-splat

Outcome lss_conservation() {
  std::mt19937_64 rng(404);
  double worst = 0.0;
  std::size_t total_in = 0, total_out = 0;
  for (int cfg = 0; cfg < 50; ++cfg) {
    const int w = uniform_int(rng, 2, 16), h = uniform_int(rng, 2, 16), c = uniform_int(rng, 1, 4);
    const double yaw = uniform(rng, -0.6, 0.6);
    Eigen::Matrix3d rz;
    rz << std::cos(yaw), -std::sin(yaw), 0, std::sin(yaw), std::cos(yaw), 0, 0, 0, 1;
    Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
    pose.block<3, 3>(0, 0) = rz * forward_camera_rotation();
    pose.block<3, 1>(0, 3) = Eigen::Vector3d(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, 0.5, 2.5));
    const CameraModel cam = CameraModel::pinhole(w, h, uniform(rng, 0.5, 2.0) * w, pose);

    VoxelSpec spec;
    spec.dims = {uniform_int(rng, 4, 24), uniform_int(rng, 4, 24), uniform_int(rng, 2, 8)};
    spec.cell_size = uniform(rng, 0.3, 1.5);
    spec.origin = {-0.5 * spec.dims.x * spec.cell_size + uniform(rng, -2, 2), uniform(rng, -1, 2), uniform(rng, -1, 0)};
    const double lo = uniform(rng, 0.5, 3.0);
    const DepthBins bins{uniform_int(rng, 2, 24), lo, lo + uniform(rng, 5, 40)};

    DepthVolume dv(bins.count, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::vector<double> l(static_cast<std::size_t>(bins.count));
        for (auto& v : l) v = uniform(rng, -3, 3);
        const auto p = oracle::softmax(l);
        for (int b = 0; b < bins.count; ++b) dv.at(b, y, x) = static_cast<float>(p[static_cast<std::size_t>(b)]);
      }
    const FeatureMap feat = oracle::random_map(rng, h, w, c, -2, 2);

    const auto res = lss_lift(dv, feat, bins, cam, spec);
    const auto want = oracle::in_bound_mass(dv, feat, bins, cam, spec);
    std::vector<double> got(static_cast<std::size_t>(c), 0.0);
    for (std::size_t i = 0; i < res.grid.data.size(); ++i) got[i % static_cast<std::size_t>(c)] += res.grid.data[i];
    for (int k = 0; k < c; ++k) {
      const double err = std::abs(got[static_cast<std::size_t>(k)] - want[static_cast<std::size_t>(k)]);
      worst = std::max(worst, err / std::max(1.0, std::abs(want[static_cast<std::size_t>(k)])));
    }
    const std::size_t points = static_cast<std::size_t>(w) * h * bins.count;
    total_out += res.dropped_points;
    total_in += points - res.dropped_points;
  }
  return {worst <= 1e-4, fmt("max relative mass error %.2e over 50 configs (%zu points in bounds, %zu dropped)", worst,
                             total_in, total_out)};
}

// ------------------------------------------------------------ losses

LabelGrid random_labels(std::mt19937_64& rng, VoxelDims d, int k, double ignore_fraction) {
  LabelGrid g(d, k);
  std::bernoulli_distribution ign(ignore_fraction);
  for (auto& l : g.labels) l = ign(rng) ? kIgnoreLabel : static_cast<std::uint8_t>(uniform_int(rng, 0, k));
  return g;
}

LabelGrid block_labels(std::mt19937_64& rng, VoxelDims d, int k) {
  const LabelGrid coarse = random_labels(rng, {d.x / 2, d.y / 2, d.z / 2}, k, 0.0);
  LabelGrid g(d, k);
  for (int x = 0; x < d.x; ++x)
    for (int y = 0; y < d.y; ++y)
      for (int z = 0; z < d.z; ++z) g.set(x, y, z, coarse.at(x / 2, y / 2, z / 2));
  return g;
}

void set_one_hot(std::span<float> cell, int label, float margin) {
  std::fill(cell.begin(), cell.end(), 0.0F);
  cell[static_cast<std::size_t>(label)] = margin;
}

VoxelGrid perfect_logits(const LabelGrid& gt) {
  VoxelGrid g(gt.dims, gt.num_classes + 1);
  for (std::size_t i = 0; i < gt.labels.size(); ++i)
    if (gt.labels[i] != kIgnoreLabel) set_one_hot(g.cell(i), gt.labels[i], 40.0F);
  return g;
}

// Reassigns 1..8 labelled voxels; the first one always changes occupancy.
VoxelGrid corrupt_voxels(std::mt19937_64& rng, const LabelGrid& gt, VoxelGrid logits) {
  std::vector<std::size_t> labelled;
  for (std::size_t i = 0; i < gt.labels.size(); ++i)
    if (gt.labels[i] != kIgnoreLabel) labelled.push_back(i);
  const int n = uniform_int(rng, 1, 8);
  for (int j = 0; j < n; ++j) {
    const std::size_t i = labelled[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(labelled.size()) - 1))];
    const int g = gt.labels[i];
    int label;
    if (j == 0) {
      label = g == kEmptyLabel ? uniform_int(rng, 1, gt.num_classes) : kEmptyLabel;
    } else {
      do label = uniform_int(rng, 0, gt.num_classes);
      while (label == g);
    }
    set_one_hot(logits.cell(i), label, static_cast<float>(uniform(rng, 0.5, 40.0)));
  }
  return logits;
}

FeatureMap one_hot_map(const std::vector<int>& labels, int h, int w, int k) {
  FeatureMap m(h, w, k);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x, labels[static_cast<std::size_t>(y) * w + x]) = 1.0F;
  return m;
}

std::vector<int> rectangle_labels(std::mt19937_64& rng, int h, int w, int k) {
  std::vector<int> lab(static_cast<std::size_t>(h) * w, 0);
  for (int r = 0; r < 6; ++r) {
    const int y0 = uniform_int(rng, 0, h - 3), x0 = uniform_int(rng, 0, w - 3);
    const int y1 = std::min(h, y0 + uniform_int(rng, 2, 8)), x1 = std::min(w, x0 + uniform_int(rng, 2, 8));
    const int c = uniform_int(rng, 1, k - 1);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) lab[static_cast<std::size_t>(y) * w + x] = c;
  }
  return lab;
}

FeatureMap plane_logits(const std::vector<std::uint8_t>& lab, int h, int w, int k) {
  FeatureMap m(h, w, k);
  for (int a = 0; a < h; ++a)
    for (int b = 0; b < w; ++b) {
      const auto l = lab[static_cast<std::size_t>(a) * w + b];
      if (l != kIgnoreLabel) m.at(a, b, l) = 40.0F;
    }
  return m;
}

void corrupt_plane(std::mt19937_64& rng, FeatureMap& m, const std::vector<std::uint8_t>& lab) {
  std::vector<std::size_t> labelled;
  for (std::size_t i = 0; i < lab.size(); ++i)
    if (lab[i] != kIgnoreLabel) labelled.push_back(i);
  const std::size_t i = labelled[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(labelled.size()) - 1))];
  int label;
  do label = uniform_int(rng, 0, m.channels - 1);
  while (label == lab[i]);
  set_one_hot(m.pixel(static_cast<int>(i) / m.width, static_cast<int>(i) % m.width), label,
              static_cast<float>(uniform(rng, 0.5, 40.0)));
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return scale == 0.0 ? 0.0 : std::abs(analytic - numeric) / scale;
}

Outcome loss_sanity() {
  std::mt19937_64 rng(505);
  const int k = 5;
  const std::vector<int> s1{1}, s12{1, 2};
  const VoxelSpec spec = [] {
    VoxelSpec s;
    s.dims = {8, 8, 4};
    s.origin = {-3.2, 0.0, -0.4};
    return s;
  }();
  const ClassWeightPolicy policy;
  const LabelGrid mixed = random_labels(rng, spec.dims, k, 0.1);
  const LabelGrid pure = block_labels(rng, spec.dims, k);

  struct VoxelLoss {
    const char* name;
    std::function<double(const VoxelGrid&)> f;
  };
  std::vector<std::pair<const LabelGrid*, std::vector<VoxelLoss>>> voxel_cases;
  for (const LabelGrid* gt : {&mixed, &pure}) {
    const auto& scales = gt == &pure ? s12 : s1;
    voxel_cases.push_back({gt,
                           {{"scal_geo", [gt, &scales](const VoxelGrid& l) { return scal_geo(l, *gt, scales); }},
                            {"scal_sem", [gt, &scales](const VoxelGrid& l) { return scal_sem(l, *gt, scales); }},
                            {"voxel_ce", [gt, &policy](const VoxelGrid& l) { return voxel_ce(l, *gt, policy); }}}});
  }

  double worst_perfect = 0.0;
  std::string worst_name;
  int not_larger = 0, trials = 0;
  auto note_perfect = [&](const std::string& name, double v) {
    if (v > worst_perfect || worst_name.empty()) {
      worst_perfect = std::max(worst_perfect, v);
      worst_name = name;
    }
  };

  for (const auto& [gt, losses] : voxel_cases) {
    const VoxelGrid perfect = perfect_logits(*gt);
    std::vector<double> base;
    for (const auto& l : losses) {
      base.push_back(l.f(perfect));
      note_perfect(l.name, base.back());
    }
    for (int t = 0; t < 100; ++t) {
      const VoxelGrid bad = corrupt_voxels(rng, *gt, perfect);
      for (std::size_t j = 0; j < losses.size(); ++j, ++trials) not_larger += !(losses[j].f(bad) > base[j]);
    }
  }

  {
    const auto planes = project_gt_planes(mixed);
    const auto& d = spec.dims;
    const TpvPlanes perfect{plane_logits(planes.xy, d.x, d.y, k + 1), plane_logits(planes.xz, d.x, d.z, k + 1),
                            plane_logits(planes.yz, d.y, d.z, k + 1)};
    const double base = tpv_loss(perfect, mixed, policy, spec);
    note_perfect("tpv", base);
    for (int t = 0; t < 100; ++t, ++trials) {
      TpvPlanes bad = perfect;
      switch (t % 3) {
        case 0: corrupt_plane(rng, bad.xy, planes.xy); break;
        case 1: corrupt_plane(rng, bad.xz, planes.xz); break;
        default: corrupt_plane(rng, bad.yz, planes.yz); break;
      }
      not_larger += !(tpv_loss(bad, mixed, policy, spec) > base);
    }
  }

  {
    const int h = 16, w = 16, kk = k + 1;
    const auto lab = rectangle_labels(rng, h, w, kk);
    const FeatureMap target = one_hot_map(lab, h, w, kk);
    struct MapLoss {
      const char* name;
      double (*f)(const FeatureMap&, const FeatureMap&);
    };
    const MapLoss losses[] = {{"soft_ce", soft_ce}, {"dice", dice_loss}, {"boundary", boundary_loss}};
    std::vector<double> base;
    for (const auto& l : losses) {
      base.push_back(l.f(target, target));
      note_perfect(l.name, base.back());
    }
    for (int t = 0; t < 100; ++t) {
      auto bad_lab = lab;
      const int y0 = uniform_int(rng, 0, h - 3), x0 = uniform_int(rng, 0, w - 3);
      const int y1 = std::min(h - 1, y0 + uniform_int(rng, 2, 5)), x1 = std::min(w - 1, x0 + uniform_int(rng, 2, 5));
      int c;
      do c = uniform_int(rng, 0, kk - 1);
      while (c == lab[static_cast<std::size_t>(y0) * w + x0]);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) bad_lab[static_cast<std::size_t>(y) * w + x] = c;
      const FeatureMap bad = one_hot_map(bad_lab, h, w, kk);
      for (std::size_t j = 0; j < std::size(losses); ++j, ++trials) not_larger += !(losses[j].f(bad, target) > base[j]);
    }
  }

  // Central differences at 100 random coordinates per differentiable loss.
  double worst_ce = 0.0, worst_dice = 0.0;
  for (int p = 0; p < 100; ++p) {
    const LabelGrid gt = random_labels(rng, {3, 3, 2}, 4, 0.2);
    if (std::all_of(gt.labels.begin(), gt.labels.end(), [](auto l) { return l == kIgnoreLabel; })) {
      --p;
      continue;
    }
    VoxelGrid logits = oracle::random_grid(rng, gt.dims, 5, -2, 2);
    ClassWeightPolicy wp;
    wp.class_weights = {0.5, 1.0, 2.0, 1.5, 0.8};
    const VoxelGrid g = voxel_ce_grad(logits, gt, wp);
    std::size_t i;
    do i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(logits.data.size()) - 1));
    while (gt.labels[i / 5] == kIgnoreLabel);
    const float orig = logits.data[i];
    logits.data[i] = orig + 1e-3F;
    const double hi = logits.data[i], up = voxel_ce(logits, gt, wp);
    logits.data[i] = orig - 1e-3F;
    const double lo = logits.data[i], down = voxel_ce(logits, gt, wp);
    worst_ce = std::max(worst_ce, relative_error(g.data[i], (up - down) / (hi - lo)));
  }
  for (int p = 0; p < 100; ++p) {
    const int h = uniform_int(rng, 2, 6), w = uniform_int(rng, 2, 6), kk = uniform_int(rng, 2, 5);
    FeatureMap pred = oracle::random_map(rng, h, w, kk, 0.05, 1.0);
    const FeatureMap target = oracle::random_map(rng, h, w, kk, 0.0, 1.0);
    const FeatureMap g = dice_loss_grad(pred, target);
    const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pred.data.size()) - 1));
    const float orig = pred.data[i];
    pred.data[i] = orig + 1e-3F;
    const double hi = pred.data[i], up = dice_loss(pred, target);
    pred.data[i] = orig - 1e-3F;
    const double lo = pred.data[i], down = dice_loss(pred, target);
    worst_dice = std::max(worst_dice, relative_error(g.data[i], (up - down) / (hi - lo)));
  }

  const bool ok = worst_perfect <= 1e-5 && not_larger == 0 && worst_ce <= 1e-4 && worst_dice <= 1e-4;
  return {ok, fmt("max loss at perfect %.2e (%s), %d/%d corruptions not larger, gradient rel. error voxel_ce %.2e, "
                  "dice %.2e",
                  worst_perfect, worst_name.c_str(), not_larger, trials, worst_ce, worst_dice)};
}

// ------------------------------------------------------------ oracle equivalence

Outcome oracle_equivalence() {
  std::mt19937_64 rng(606);
  double nca_err = 0.0, bil_err = 0.0, warp_err = 0.0, merge_err = 0.0, iou_err = 0.0;
  int topk_mismatch = 0, cm_mismatch = 0;

  for (int t = 0; t < 20; ++t) {
    const int h = uniform_int(rng, 2, 7), w = uniform_int(rng, 2, 7), c = uniform_int(rng, 1, 5);
    NcaParams p;
    p.window = 2 * uniform_int(rng, 0, 2) + 1;
    p.dim = uniform_int(rng, 1, 5);
    p.query = oracle::random_matrix(rng, p.dim, c);
    p.key = oracle::random_matrix(rng, p.dim, c);
    p.value = oracle::random_matrix(rng, p.dim, c);
    p.output = oracle::random_matrix(rng, c, p.dim);
    const FeatureMap cur = oracle::random_map(rng, h, w, c);
    std::vector<FeatureMap> hist;
    for (int f = uniform_int(rng, 1, 3); f > 0; --f) hist.push_back(oracle::random_map(rng, h, w, c));
    const FeatureMap out = nca_fuse(cur, hist, p);
    const auto want = oracle::nca(cur, hist, p.query, p.key, p.value, p.output, p.window);
    for (std::size_t i = 0; i < want.fused.size(); ++i) nca_err = std::max(nca_err, std::abs(out.data[i] - want.fused[i]));
  }

  for (int t = 0; t < 20; ++t) {
    const int h = uniform_int(rng, 1, 9), w = uniform_int(rng, 1, 9), c = uniform_int(rng, 1, 4);
    const FeatureMap m = oracle::random_map(rng, h, w, c);
    for (int q = 0; q < 20; ++q) {
      const double x = uniform(rng, -2, w + 1), y = uniform(rng, -2, h + 1);
      const auto got = bilinear_sample(m, x, y);
      const auto want = oracle::bilinear(m, x, y);
      for (int k = 0; k < c; ++k)
        bil_err = std::max(bil_err, std::abs(got[static_cast<std::size_t>(k)] - want[static_cast<std::size_t>(k)]));
    }
    const FlowField f = oracle::random_flow(rng, h, w, 3.0);
    const FeatureMap out = warp(m, f);
    const auto want = oracle::warp(m, f);
    for (std::size_t i = 0; i < want.size(); ++i) warp_err = std::max(warp_err, std::abs(out.data[i] - want[i]));
  }

  for (int t = 0; t < 20; ++t) {
    const VoxelDims d{uniform_int(rng, 1, 6), uniform_int(rng, 1, 6), uniform_int(rng, 1, 4)};
    const int c = uniform_int(rng, 1, 4);
    VoxelGrid g = oracle::random_grid(rng, d, c);
    // Duplicate some cells so ties in the norm are exercised.
    for (int r = 0; r < 3; ++r) {
      const auto a = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(d.count()) - 1));
      const auto b = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(d.count()) - 1));
      std::copy(g.cell(a).begin(), g.cell(a).end(), g.cell(b).begin());
    }
    const double thr = uniform(rng, 0.0, 1.0);
    const auto cap = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(d.count()) + 2));
    topk_mismatch += propose(g, thr, cap).indices != oracle::top_k(g, thr, cap);

    const VoxelGrid raw = oracle::random_grid(rng, d, c);
    const VoxelGrid merged = merge_raw(g, raw);
    for (std::size_t i = 0; i < merged.data.size(); ++i) {
      merge_err = std::max(merge_err, std::abs(merged.data[i] - (static_cast<double>(g.data[i]) + raw.data[i])));
    }
  }

  for (int t = 0; t < 20; ++t) {
    const int k = uniform_int(rng, 1, 6);
    const VoxelDims d{uniform_int(rng, 1, 6), uniform_int(rng, 1, 6), uniform_int(rng, 1, 4)};
    const LabelGrid gt = random_labels(rng, d, k, 0.1);
    const LabelGrid pred = random_labels(rng, d, k, 0.0);
    const auto cm = accumulate(pred, gt, ConfusionMatrix(k));
    const auto want = oracle::confusion(pred.labels, gt.labels, k);
    for (int g = 0; g <= k; ++g)
      for (int p = 0; p <= k; ++p) cm_mismatch += cm.at(g, p) != want[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
    if (cm.total() == 0) continue;
    const auto ious = oracle::class_ious(pred.labels, gt.labels, k);
    double sum = 0.0;
    int n = 0;
    for (int c = 1; c <= k; ++c) {
      const auto got = class_iou(cm, c);
      const auto& w = ious[static_cast<std::size_t>(c - 1)];
      if (got.has_value() != w.has_value()) {
        ++cm_mismatch;
        continue;
      }
      if (got) {
        iou_err = std::max(iou_err, std::abs(*got - *w));
        sum += *w;
        ++n;
      }
    }
    const auto m = miou(cm);
    if (n > 0 && m) iou_err = std::max(iou_err, std::abs(*m - sum / n));
    if ((n > 0) != m.has_value()) ++cm_mismatch;
  }

  const double worst = std::max({nca_err, bil_err, warp_err, merge_err, iou_err});
  return {worst <= 1e-5 && topk_mismatch == 0 && cm_mismatch == 0,
          fmt("max |diff|: nca_fuse %.1e, bilinear %.1e, warp %.1e, merge_raw %.1e, IoU %.1e; "
              "top-k mismatches %d, confusion mismatches %d",
              nca_err, bil_err, warp_err, merge_err, iou_err, topk_mismatch, cm_mismatch)};
}

// ------------------------------------------------------------ end to end

Outcome end_to_end() {
  const PipelineConfig cfg;
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineResult a = run_pipeline(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const PipelineResult b = run_pipeline(cfg);

  const int k = a.output.logits.channels - 1;
  const auto& d = a.output.labels.dims;
  const bool shapes = cfg.bins.count == 32 && d.x == 32 && d.y == 32 && d.z == 8 && k == 5 &&
                      a.plane_logits.xy.height == 32 && a.plane_logits.xy.width == 32 &&
                      a.plane_logits.xz.width == 8 && a.plane_logits.yz.height == 32 &&
                      a.seg_probs.height == 64 && a.seg_probs.width == 64 && a.seg_probs.channels == k + 1;
  const bool finite = all_finite(a.output.logits.data) && std::isfinite(a.total_loss) && a.metrics.miou.has_value();
  const bool identical = same_output(a, b) && a.losses.scal_geo == b.losses.scal_geo &&
                         a.losses.scal_sem == b.losses.scal_sem && a.losses.dice == b.losses.dice &&
                         a.losses.boundary == b.losses.boundary && a.losses.distill_ce == b.losses.distill_ce;
  return {shapes && finite && identical && secs < 60.0,
          fmt("64x64 image, 32 bins, %dx%dx%d grid, %d+1 classes: %.2f s, shapes %s, finite %s, bit-identical %s, "
              "mIoU %.1f%%",
              d.x, d.y, d.z, k, secs, shapes ? "ok" : "bad", finite ? "yes" : "no", identical ? "yes" : "no",
              a.metrics.miou ? 100.0 * *a.metrics.miou : NAN)};
}

Outcome temporal_windows() {
  std::ostringstream line;
  bool ok = true;
  for (int h = 1; h <= 4; ++h) {
    PipelineConfig cfg;
    cfg.history = h;
    const auto r = run_pipeline(cfg);
    const bool defined = r.metrics.miou.has_value() && std::isfinite(*r.metrics.miou);
    ok = ok && defined;
    line << (h > 1 ? ", " : "") << h << " frame" << (h > 1 ? "s" : "") << ": ";
    if (defined) {
      line << fmt("%.1f%%", 100.0 * *r.metrics.miou);
    } else {
      line << "undefined";
    }
  }
  return {ok, "mIoU per history window: " + line.str()};
}

struct Criterion {
  const char* name;
  double budget_s;
  Outcome (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"table_arithmetic", 1.0, table_arithmetic},
      {"warp_identity", 1.0, warp_identity},
      {"occlusion_oracle", 30.0, occlusion_oracle},
      {"attention_normalisation", 10.0, attention_normalisation},
      {"curriculum_contract", 10.0, curriculum_contract},
      {"lss_conservation", 10.0, lss_conservation},
      {"loss_sanity", 30.0, loss_sanity},
      {"oracle_equivalence", 30.0, oracle_equivalence},
      {"end_to_end", 60.0, end_to_end},
      {"temporal_windows", 120.0, temporal_windows},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.budget_s;
    failed += !pass;
    std::printf("%s  %-24s %s [%.2f s, budget %.0f s]\n", pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs,
                c.budget_s);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
