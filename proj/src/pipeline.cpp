#include "ssc/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "ssc/errors.hpp"
#include "ssc/weights.hpp"

namespace ssc {
namespace {

using nlohmann::json;

// ---------------------------------------------------------------- config

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InputError("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw InputError("config: unknown key \"" + key + "\" in " + where);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

Eigen::Vector3d vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw InputError(std::string("config: ") + what + " must have 3 entries");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

// ---------------------------------------------------------------- weights

struct Weights {
  Conv2d stem;
  NcaParams nca;
  Matrix raw_projection;
  DepthNetWeights depth;
  CgAttentionParams cga_mono;
  CgAttentionParams cga_stereo;
  VolumeFusionWeights fusion;
  DeformAttnParams dca;
  DeformAttnParams dsa;
  OccEncoderWeights occ;
  ClassHead head;
  Matrix seg_weight;
  std::vector<float> seg_bias;
};

CgAttentionParams cga_params(WeightStore& store, const std::string& name, int dim) {
  CgAttentionParams p;
  p.dim = dim;
  p.query_w = store.uniform(name + ".query_w", {dim}, 1);
  p.query_b = store.uniform(name + ".query_b", {dim}, 1);
  p.key_w = store.uniform(name + ".key_w", {dim}, 1);
  p.key_b = store.uniform(name + ".key_b", {dim}, 1);
  p.value_w = store.constant(name + ".value_w", {1}, 1.0F)[0];
  p.value_b = store.constant(name + ".value_b", {1}, 0.0F)[0];
  return p;
}

// Offsets predicted from the query start at zero weight; their biases spread
// the sampling points on a ring (2D, pixels) or along the axes (3D, voxels).
DeformAttnParams deform_params(WeightStore& store, const std::string& name, int channels, int points, int dims,
                               double radius) {
  DeformAttnParams p;
  p.points = points;
  p.offset_dims = dims;
  p.offset_w = Matrix(points * dims, channels);
  p.offset_w.data = store.constant(name + ".offset_w", {points * dims, channels}, 0.0F);
  std::vector<float> pattern(static_cast<std::size_t>(points * dims), 0.0F);
  for (int k = 0; k < points; ++k) {
    if (dims == 2) {
      const double a = 2.0 * std::numbers::pi * k / points;
      pattern[static_cast<std::size_t>(2 * k)] = static_cast<float>(radius * std::cos(a));
      pattern[static_cast<std::size_t>(2 * k + 1)] = static_cast<float>(radius * std::sin(a));
    } else {
      const int axis = (k / 2) % dims;
      pattern[static_cast<std::size_t>(dims * k + axis)] = static_cast<float>(k % 2 == 0 ? radius : -radius);
    }
  }
  p.offset_b = store.fixed(name + ".offset_b", {points * dims}, std::move(pattern));
  p.attn_w = store.matrix(name + ".attn_w", points, channels);
  p.attn_b = store.bias(name + ".attn_b", points, channels);
  p.value = store.matrix(name + ".value", channels, channels);
  return p;
}

Weights build_weights(const PipelineConfig& cfg, int in_channels, int num_classes) {
  WeightStore store(cfg.seed, cfg.weights_dir);
  const int c = cfg.feature_channels;
  const int f = cfg.fusion_channels;
  const int k = num_classes + 1;
  const int n = cfg.history;
  Weights w;
  w.stem = store.conv2d("stem", in_channels, c, 3);

  w.nca.window = cfg.nca_window;
  w.nca.dim = cfg.nca_dim;
  w.nca.query = store.matrix("nca.query", cfg.nca_dim, c);
  w.nca.key = store.matrix("nca.key", cfg.nca_dim, c);
  w.nca.value = store.matrix("nca.value", cfg.nca_dim, c);
  w.nca.output = store.matrix("nca.output", c, cfg.nca_dim);
  w.raw_projection = store.matrix("raw.projection", c, c * (n + 1));

  w.depth.encoder = store.conv2d("depth.encoder", c + 1, c, 3);
  w.depth.mono_head = store.matrix("depth.mono_head", cfg.bins.count, c);
  w.depth.mono_bias = store.bias("depth.mono_bias", cfg.bins.count, c);
  w.depth.depth_scale = cfg.bins.max_depth;

  w.cga_mono = cga_params(store, "cga.mono", cfg.cga_dim);
  w.cga_stereo = cga_params(store, "cga.stereo", cfg.cga_dim);

  const int reduced = std::max(1, f / 2);
  w.fusion.fuse = store.conv3d("fusion.fuse", 2, f, 3);
  w.fusion.enc1 = store.conv3d("fusion.enc1", f, f, 3);
  w.fusion.enc2 = store.conv3d("fusion.enc2", f, 2 * f, 3);
  w.fusion.dec = store.conv3d("fusion.dec", 3 * f, f, 3);
  w.fusion.ca.fc1 = store.matrix("fusion.ca.fc1", reduced, f);
  w.fusion.ca.b1 = store.bias("fusion.ca.b1", reduced, f);
  w.fusion.ca.fc2 = store.matrix("fusion.ca.fc2", f, reduced);
  w.fusion.ca.b2 = store.bias("fusion.ca.b2", f, reduced);
  w.fusion.head = store.conv3d("fusion.head", f, 1, 3);

  w.dca = deform_params(store, "dca", c, cfg.dca_points, 2, 2.0);
  w.dsa = deform_params(store, "dsa", c, cfg.dsa_points, 3, 1.0);

  w.occ.local1 = store.conv3d("occ.local1", c, c, 3);
  w.occ.local2 = store.conv3d("occ.local2", c, c, 3);
  w.occ.plane_xy = store.conv2d("occ.plane_xy", c, c, 3);
  w.occ.plane_xz = store.conv2d("occ.plane_xz", c, c, 3);
  w.occ.plane_yz = store.conv2d("occ.plane_yz", c, c, 3);

  w.head.weight = store.matrix("head.weight", k, c);
  w.head.bias = store.bias("head.bias", k, c);
  w.seg_weight = store.matrix("seg.weight", k, c);
  w.seg_bias = store.bias("seg.bias", k, c);
  return w;
}

// ---------------------------------------------------------------- stages

bool finite(const std::vector<float>& v) { return all_finite(v); }

class Stages {
 public:
  explicit Stages(std::vector<StageTiming>& timings) : timings_(timings) {}

  template <class F>
  auto run(const std::string& name, F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto out = fn();
      timings_.push_back({name, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()});
      return out;
    } catch (const PipelineError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError(name, e.what());
    }
  }

  static void require_finite(const std::string& name, bool ok) {
    if (!ok) throw PipelineError(name, "non-finite values in stage output");
  }

 private:
  std::vector<StageTiming>& timings_;
};

FeatureMap mean_maps(const FeatureMap& current, const std::vector<FeatureMap>& others) {
  FeatureMap out = current;
  const double n = static_cast<double>(others.size() + 1);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double s = current.data[i];
    for (const auto& o : others) s += o.data[i];
    out.data[i] = static_cast<float>(s / n);
  }
  return out;
}

FeatureMap seg_head(const FeatureMap& feat, const Matrix& w, const std::vector<float>& b) {
  FeatureMap out(feat.height, feat.width, w.rows);
  std::vector<double> logits(static_cast<std::size_t>(w.rows));
  for (int y = 0; y < feat.height; ++y)
    for (int x = 0; x < feat.width; ++x) {
      auto dst = out.pixel(y, x);
      matvec(w, feat.pixel(y, x), dst, b);
      std::copy(dst.begin(), dst.end(), logits.begin());
      softmax_inplace(logits);
      std::transform(logits.begin(), logits.end(), dst.begin(), [](double v) { return static_cast<float>(v); });
    }
  return out;
}

Tensor mask_tensor(const BoolMask& m) { return to_tensor(m); }

// ---------------------------------------------------------------- scene I/O

Tensor label_map_tensor(const LabelMap& m) {
  Tensor t{{m.height, m.width}, std::vector<float>(m.labels.begin(), m.labels.end())};
  return t;
}

json camera_json(const CameraModel& cam) {
  json k = json::array(), p = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) k.push_back(cam.intrinsics(r, c));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) p.push_back(cam.cam_to_world(r, c));
  return {{"width", cam.width}, {"height", cam.height}, {"intrinsics", k}, {"cam_to_world", p}};
}

CameraModel camera_from_json(const json& j) {
  CameraModel cam;
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  const auto& k = j.at("intrinsics");
  const auto& p = j.at("cam_to_world");
  if (k.size() != 9 || p.size() != 16) throw InputError("manifest: bad camera matrices");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.intrinsics(r, c) = k[static_cast<std::size_t>(r * 3 + c)].get<double>();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) cam.cam_to_world(r, c) = p[static_cast<std::size_t>(r * 4 + c)].get<double>();
  cam.validate();
  return cam;
}

Tensor read_required(const std::filesystem::path& dir, const json& manifest_entry) {
  const auto path = dir / manifest_entry.get<std::string>();
  if (!std::filesystem::exists(path)) throw InputError("missing input file: " + path.string());
  return read_tensor(path);
}

}  // namespace

// ---------------------------------------------------------------- config API

VoxelSpec voxel_spec_from_json(const json& j) {
  reject_unknown(j, {"dims", "origin", "cell_size", "sensor_origin"}, "voxel");
  VoxelSpec s;
  if (j.contains("dims")) {
    const auto d = j.at("dims").get<std::vector<int>>();
    if (d.size() != 3) throw InputError("config: voxel.dims must have 3 entries");
    s.dims = {d[0], d[1], d[2]};
  }
  if (j.contains("origin")) s.origin = vec3(j.at("origin"), "voxel.origin");
  if (j.contains("sensor_origin")) s.sensor_origin = vec3(j.at("sensor_origin"), "voxel.sensor_origin");
  s.cell_size = j.value("cell_size", s.cell_size);
  s.validate();
  return s;
}

json voxel_spec_to_json(const VoxelSpec& s) {
  return {{"dims", {s.dims.x, s.dims.y, s.dims.z}},
          {"origin", vec_json(s.origin)},
          {"cell_size", s.cell_size},
          {"sensor_origin", vec_json(s.sensor_origin)}};
}

void PipelineConfig::validate() const {
  if (history < 1) throw InputError("config: history must be >= 1");
  if (scene && !input_dir.empty()) throw InputError("config: give either a scene or an input_dir, not both");
  curriculum.validate();
  if (step < 0) throw InputError("config: step must be >= 0");
  if (lambda_override && !(*lambda_override >= 0.0 && *lambda_override <= 1.0)) {
    throw InputError("config: lambda must lie in [0, 1]");
  }
  bins.validate();
  voxel.validate();
  consistency.validate();
  if (feature_channels < 1 || fusion_channels < 1 || nca_dim < 1 || cga_dim < 1) {
    throw InputError("config: channel counts must be positive");
  }
  if (nca_window < 1 || nca_window % 2 == 0) throw InputError("config: nca_window must be odd and >= 1");
  if (dca_points < 1 || dsa_points < 1) throw InputError("config: deformable attention needs >= 1 point");
  if (!(occ_fusion >= 0.0 && occ_fusion <= 1.0)) throw InputError("config: occ_fusion must lie in [0, 1]");
  loss_weights.validate();
  class_policy.validate();
  if (scal_scales.empty()) throw InputError("config: scal scales are empty");
}

PipelineConfig pipeline_config_from_json(const json& j, const std::filesystem::path& base) {
  reject_unknown(j,
                 {"seed", "scene", "input_dir", "history", "use_lidar", "curriculum", "depth", "voxel", "consistency",
                  "model", "loss", "ranges", "ablation", "weights_dir", "out_dir", "dump_intermediates"},
                 "pipeline config");
  PipelineConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("scene")) c.scene = scene_from_json(j.at("scene"));
  c.input_dir = resolve(base, j.value("input_dir", std::string{}));
  c.history = j.value("history", c.history);
  c.use_lidar = j.value("use_lidar", c.use_lidar);
  if (j.contains("curriculum")) {
    const auto& s = j.at("curriculum");
    reject_unknown(s, {"total_steps", "warmup_fraction", "shape", "step", "lambda"}, "curriculum");
    c.curriculum.total_steps = s.value("total_steps", c.curriculum.total_steps);
    c.curriculum.warmup_fraction = s.value("warmup_fraction", c.curriculum.warmup_fraction);
    if (s.contains("shape")) c.curriculum.shape = parse_schedule_shape(s.at("shape").get<std::string>());
    c.step = s.value("step", c.step);
    if (s.contains("lambda")) c.lambda_override = s.at("lambda").get<double>();
  }
  if (j.contains("depth")) {
    const auto& s = j.at("depth");
    reject_unknown(s, {"bins", "min", "max", "stereo_softness", "completion_neighbors", "completion_power"}, "depth");
    c.bins.count = s.value("bins", c.bins.count);
    c.bins.min_depth = s.value("min", c.bins.min_depth);
    c.bins.max_depth = s.value("max", c.bins.max_depth);
    c.stereo_softness = s.value("stereo_softness", c.stereo_softness);
    c.completion.neighbors = s.value("completion_neighbors", c.completion.neighbors);
    c.completion.power = s.value("completion_power", c.completion.power);
  }
  if (j.contains("voxel")) c.voxel = voxel_spec_from_json(j.at("voxel"));
  if (j.contains("consistency")) {
    const auto& s = j.at("consistency");
    reject_unknown(s, {"alpha", "beta"}, "consistency");
    c.consistency.alpha = s.value("alpha", c.consistency.alpha);
    c.consistency.beta = s.value("beta", c.consistency.beta);
  }
  if (j.contains("model")) {
    const auto& s = j.at("model");
    reject_unknown(s,
                   {"feature_channels", "fusion_channels", "nca_window", "nca_dim", "cga_dim", "dca_points",
                    "dsa_points", "proposal_threshold", "max_proposals", "occ_fusion"},
                   "model");
    c.feature_channels = s.value("feature_channels", c.feature_channels);
    c.fusion_channels = s.value("fusion_channels", c.fusion_channels);
    c.nca_window = s.value("nca_window", c.nca_window);
    c.nca_dim = s.value("nca_dim", c.nca_dim);
    c.cga_dim = s.value("cga_dim", c.cga_dim);
    c.dca_points = s.value("dca_points", c.dca_points);
    c.dsa_points = s.value("dsa_points", c.dsa_points);
    c.proposal_threshold = s.value("proposal_threshold", c.proposal_threshold);
    c.max_proposals = s.value("max_proposals", c.max_proposals);
    c.occ_fusion = s.value("occ_fusion", c.occ_fusion);
  }
  if (j.contains("loss")) {
    const auto& s = j.at("loss");
    reject_unknown(s, {"lambda1", "lambda2", "lambda3", "class_weights", "distance_gain", "max_range", "scales"}, "loss");
    c.loss_weights.lambda1 = s.value("lambda1", c.loss_weights.lambda1);
    c.loss_weights.lambda2 = s.value("lambda2", c.loss_weights.lambda2);
    c.loss_weights.lambda3 = s.value("lambda3", c.loss_weights.lambda3);
    if (s.contains("class_weights")) c.class_policy.class_weights = s.at("class_weights").get<std::vector<double>>();
    c.class_policy.distance_gain = s.value("distance_gain", c.class_policy.distance_gain);
    c.class_policy.max_range = s.value("max_range", c.class_policy.max_range);
    if (s.contains("scales")) c.scal_scales = s.at("scales").get<std::vector<int>>();
  }
  if (j.contains("ranges")) c.ranges = j.at("ranges").get<std::vector<double>>();
  if (j.contains("ablation")) {
    const auto& s = j.at("ablation");
    reject_unknown(s, {"mask_gate", "nca", "cdf", "cga3d", "distill"}, "ablation");
    c.ablation.mask_gate = s.value("mask_gate", c.ablation.mask_gate);
    c.ablation.nca = s.value("nca", c.ablation.nca);
    c.ablation.cdf = s.value("cdf", c.ablation.cdf);
    c.ablation.cga3d = s.value("cga3d", c.ablation.cga3d);
    c.ablation.distill = s.value("distill", c.ablation.distill);
  }
  c.weights_dir = resolve(base, j.value("weights_dir", std::string{}));
  c.out_dir = resolve(base, j.value("out_dir", std::string{}));
  c.dump_intermediates = j.value("dump_intermediates", c.dump_intermediates);
  c.validate();
  return c;
}

json pipeline_config_to_json(const PipelineConfig& c) {
  json j = {
      {"seed", c.seed},
      {"history", c.history},
      {"use_lidar", c.use_lidar},
      {"curriculum",
       {{"total_steps", c.curriculum.total_steps},
        {"warmup_fraction", c.curriculum.warmup_fraction},
        {"shape", to_string(c.curriculum.shape)},
        {"step", c.step}}},
      {"depth",
       {{"bins", c.bins.count},
        {"min", c.bins.min_depth},
        {"max", c.bins.max_depth},
        {"stereo_softness", c.stereo_softness},
        {"completion_neighbors", c.completion.neighbors},
        {"completion_power", c.completion.power}}},
      {"voxel", voxel_spec_to_json(c.voxel)},
      {"consistency", {{"alpha", c.consistency.alpha}, {"beta", c.consistency.beta}}},
      {"model",
       {{"feature_channels", c.feature_channels},
        {"fusion_channels", c.fusion_channels},
        {"nca_window", c.nca_window},
        {"nca_dim", c.nca_dim},
        {"cga_dim", c.cga_dim},
        {"dca_points", c.dca_points},
        {"dsa_points", c.dsa_points},
        {"proposal_threshold", c.proposal_threshold},
        {"max_proposals", c.max_proposals},
        {"occ_fusion", c.occ_fusion}}},
      {"loss",
       {{"lambda1", c.loss_weights.lambda1},
        {"lambda2", c.loss_weights.lambda2},
        {"lambda3", c.loss_weights.lambda3},
        {"class_weights", c.class_policy.class_weights},
        {"distance_gain", c.class_policy.distance_gain},
        {"max_range", c.class_policy.max_range},
        {"scales", c.scal_scales}}},
      {"ranges", c.ranges},
      {"ablation",
       {{"mask_gate", c.ablation.mask_gate},
        {"nca", c.ablation.nca},
        {"cdf", c.ablation.cdf},
        {"cga3d", c.ablation.cga3d},
        {"distill", c.ablation.distill}}},
      {"dump_intermediates", c.dump_intermediates},
  };
  if (c.lambda_override) j["curriculum"]["lambda"] = *c.lambda_override;
  if (c.scene) j["scene"] = scene_to_json(*c.scene);
  if (!c.input_dir.empty()) j["input_dir"] = c.input_dir.string();
  if (!c.weights_dir.empty()) j["weights_dir"] = c.weights_dir.string();
  if (!c.out_dir.empty()) j["out_dir"] = c.out_dir.string();
  return j;
}

// ---------------------------------------------------------------- inputs

void SceneInputs::validate() const {
  current.validate();
  if (history.empty()) throw InputError("inputs: no history frames");
  if (flow_fwd.size() != history.size() || flow_bwd.size() != history.size()) {
    throw InputError("inputs: need one forward and one backward flow per history frame");
  }
  const int h = current.height;
  const int w = current.width;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (!history[i].same_shape(current)) throw ShapeError("inputs: history frame shape differs from current");
    for (const FlowField* f : {&flow_fwd[i], &flow_bwd[i]}) {
      f->validate();
      if (f->height != h || f->width != w) throw ShapeError("inputs: flow size differs from image size");
    }
  }
  if (stereo.height != h || stereo.width != w) throw ShapeError("inputs: stereo depth size differs from image size");
  if (lidar && (lidar->height != h || lidar->width != w)) throw ShapeError("inputs: lidar size differs from image size");
  camera.validate();
  if (camera.width != w || camera.height != h) throw ShapeError("inputs: camera size differs from image size");
  gt.validate();
  if (gt.num_classes != num_classes) throw InputError("inputs: ground-truth class count differs");
  pseudo_labels.validate();
  if (pseudo_labels.height != h || pseudo_labels.width != w || pseudo_labels.channels != num_classes + 1) {
    throw ShapeError("inputs: pseudo labels must be H x W x (num_classes + 1)");
  }
}

SceneInputs synth_inputs(const SceneConfig& scene, int history, const VoxelSpec& spec) {
  scene.validate();
  if (history < 1 || history >= scene.frames) {
    throw InputError("synth_inputs: history must lie in [1, frames - 1]");
  }
  const int t = scene.frames - 1;
  SceneInputs in;
  in.num_classes = scene.num_classes;
  in.class_names = scene.class_names;
  const FrameRender now = render(scene, t);
  in.current = now.image;
  in.lidar = now.lidar;
  in.stereo = now.stereo;
  in.camera = scene.camera(t);
  in.gt = gt_voxels(scene, t, spec);
  in.pseudo_labels = pseudo_labels(now.labels, scene.num_classes);
  for (int i = 1; i <= history; ++i) {
    in.history.push_back(render(scene, t - i).image);
    FlowTruth ft = gt_flow(scene, t - i, t);
    in.flow_fwd.push_back(std::move(ft.fwd));
    in.flow_bwd.push_back(std::move(ft.bwd));
  }
  return in;
}

void write_scene(const SceneConfig& scene, const VoxelSpec& spec, const std::filesystem::path& dir) {
  scene.validate();
  spec.validate();
  std::filesystem::create_directories(dir);
  const int t = scene.frames - 1;
  json frames = json::array();
  for (int f = 0; f < scene.frames; ++f) {
    const FrameRender r = render(scene, f);
    const std::string p = "frame_" + std::to_string(f) + "_";
    write_tensor(dir / (p + "image.tensor"), to_tensor(r.image));
    write_tensor(dir / (p + "depth.tensor"), to_tensor(r.depth));
    write_tensor(dir / (p + "lidar.tensor"), to_tensor(r.lidar));
    write_tensor(dir / (p + "stereo.tensor"), to_tensor(r.stereo));
    write_tensor(dir / (p + "labels.tensor"), label_map_tensor(r.labels));
    frames.push_back({{"frame", f},
                      {"image", p + "image.tensor"},
                      {"depth", p + "depth.tensor"},
                      {"lidar", p + "lidar.tensor"},
                      {"stereo", p + "stereo.tensor"},
                      {"labels", p + "labels.tensor"}});
    if (f == t) write_tensor(dir / "pseudo_labels.tensor", to_tensor(pseudo_labels(r.labels, scene.num_classes)));
  }
  json flows = json::array();
  for (int i = 1; i <= t; ++i) {
    const FlowTruth ft = gt_flow(scene, t - i, t);
    const std::string p = "flow_" + std::to_string(i) + "_";
    write_tensor(dir / (p + "fwd.tensor"), to_tensor(ft.fwd));
    write_tensor(dir / (p + "bwd.tensor"), to_tensor(ft.bwd));
    write_tensor(dir / (p + "occlusion_fwd.tensor"), to_tensor(ft.occlusion));
    write_tensor(dir / (p + "occlusion_bwd.tensor"), to_tensor(ft.occlusion_bwd));
    flows.push_back({{"history", i},
                     {"fwd", p + "fwd.tensor"},
                     {"bwd", p + "bwd.tensor"},
                     {"occlusion_fwd", p + "occlusion_fwd.tensor"},
                     {"occlusion_bwd", p + "occlusion_bwd.tensor"}});
  }
  write_tensor(dir / "gt_voxels.tensor", to_tensor(gt_voxels(scene, t, spec)));

  const json manifest = {{"format", "ssc-scene-1"},
                         {"current", t},
                         {"num_classes", scene.num_classes},
                         {"class_names", scene.class_names},
                         {"camera", camera_json(scene.camera(t))},
                         {"voxel", voxel_spec_to_json(spec)},
                         {"frames", frames},
                         {"flows", flows},
                         {"gt_voxels", "gt_voxels.tensor"},
                         {"pseudo_labels", "pseudo_labels.tensor"},
                         {"scene", scene_to_json(scene)}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw InputError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

SceneInputs load_scene(const std::filesystem::path& dir, int history) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream f(manifest_path);
  if (!f) throw InputError("missing input file: " + manifest_path.string());
  json m;
  try {
    m = json::parse(f);
  } catch (const json::exception& e) {
    throw InputError("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  const int t = m.at("current").get<int>();
  const auto& frames = m.at("frames");
  const auto& flows = m.at("flows");
  if (history < 1 || history > static_cast<int>(flows.size()) || history > t) {
    throw InputError("load_scene: " + dir.string() + " holds " + std::to_string(flows.size()) +
                     " history frames, " + std::to_string(history) + " requested");
  }
  auto frame_entry = [&](int idx) -> const json& {
    for (const auto& fr : frames)
      if (fr.at("frame").get<int>() == idx) return fr;
    throw InputError("load_scene: frame " + std::to_string(idx) + " missing from manifest");
  };

  SceneInputs in;
  in.num_classes = m.at("num_classes").get<int>();
  in.class_names = m.value("class_names", std::vector<std::string>{});
  const json& now = frame_entry(t);
  in.current = feature_map_from(read_required(dir, now.at("image")));
  in.lidar = depth_map_from(read_required(dir, now.at("lidar")));
  in.stereo = depth_map_from(read_required(dir, now.at("stereo")));
  in.camera = camera_from_json(m.at("camera"));
  in.gt = label_grid_from(read_required(dir, m.at("gt_voxels")), in.num_classes);
  in.pseudo_labels = feature_map_from(read_required(dir, m.at("pseudo_labels")));
  for (int i = 1; i <= history; ++i) {
    in.history.push_back(feature_map_from(read_required(dir, frame_entry(t - i).at("image"))));
    const json* flow = nullptr;
    for (const auto& fl : flows)
      if (fl.at("history").get<int>() == i) flow = &fl;
    if (!flow) throw InputError("load_scene: no flow for history frame " + std::to_string(i));
    in.flow_fwd.push_back(flow_field_from(read_required(dir, flow->at("fwd"))));
    in.flow_bwd.push_back(flow_field_from(read_required(dir, flow->at("bwd"))));
  }
  in.validate();
  return in;
}

// ---------------------------------------------------------------- run

PipelineResult run_pipeline(const PipelineConfig& cfg, const SceneInputs& in) {
  cfg.validate();
  in.validate();
  if (static_cast<int>(in.history.size()) < cfg.history) {
    throw InputError("run_pipeline: config wants " + std::to_string(cfg.history) + " history frames, inputs hold " +
                     std::to_string(in.history.size()));
  }
  if (!(in.gt.dims == cfg.voxel.dims)) throw ShapeError("run_pipeline: ground-truth dims differ from the voxel spec");

  PipelineResult res;
  Stages stages(res.timings);
  const bool dump = cfg.dump_intermediates;
  auto keep = [&](const std::string& name, Tensor t) {
    if (dump) res.intermediates.emplace(name, std::move(t));
  };
  const std::size_t n = static_cast<std::size_t>(cfg.history);
  const int k = in.num_classes;

  const Weights w = stages.run("weights", [&] { return build_weights(cfg, in.current.channels, k); });

  // Temporal alignment.
  auto [f_t, f_hist] = stages.run("stem", [&] {
    FeatureMap cur = conv2d(in.current, w.stem);
    relu_inplace(cur.data);
    std::vector<FeatureMap> hist;
    for (std::size_t i = 0; i < n; ++i) {
      hist.push_back(conv2d(in.history[i], w.stem));
      relu_inplace(hist.back().data);
    }
    return std::pair{std::move(cur), std::move(hist)};
  });
  Stages::require_finite("stem", finite(f_t.data));
  keep("features_current", to_tensor(f_t));

  const auto warped = stages.run("warp", [&] {
    std::vector<FeatureMap> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(warp(f_hist[i], in.flow_bwd[i]));
    return out;
  });
  for (const auto& m : warped) Stages::require_finite("warp", finite(m.data));

  const auto masks = stages.run("fwd_bwd_check", [&] {
    std::vector<OcclusionMasks> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(fwd_bwd_check(in.flow_fwd[i], in.flow_bwd[i], cfg.consistency));
    return out;
  });

  const auto gated = stages.run("mask_gate", [&] {
    if (!cfg.ablation.mask_gate) return warped;
    std::vector<FeatureMap> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(mask_gate(warped[i], masks[i].bwd));
    return out;
  });
  for (std::size_t i = 0; i < n; ++i) {
    const std::string s = std::to_string(i + 1);
    keep("warped_" + s, to_tensor(warped[i]));
    keep("mask_fwd_" + s, mask_tensor(masks[i].fwd));
    keep("mask_bwd_" + s, mask_tensor(masks[i].bwd));
    keep("gated_" + s, to_tensor(gated[i]));
  }

  const FeatureMap f_fuse = stages.run("nca", [&] {
    return cfg.ablation.nca ? nca_fuse(f_t, gated, w.nca) : mean_maps(f_t, gated);
  });
  Stages::require_finite("nca", finite(f_fuse.data));
  keep("f_fuse", to_tensor(f_fuse));

  const FeatureMap f_raw = stages.run("build_raw", [&] { return build_raw(f_t, warped, w.raw_projection); });
  Stages::require_finite("build_raw", finite(f_raw.data));
  keep("f_raw", to_tensor(f_raw));

  // Curriculum depth fusion.
  res.lambda = cfg.lambda_override ? *cfg.lambda_override : lambda_at(cfg.curriculum, cfg.step);
  const bool with_lidar = cfg.ablation.cdf && cfg.use_lidar && in.lidar.has_value();
  const DepthMap fused = stages.run("depth_fusion", [&] {
    if (!with_lidar) return in.stereo;
    const DepthMap dense = complete_depth(*in.lidar, cfg.completion);
    keep("depth_completed", to_tensor(dense));
    return fuse_depth(dense, in.stereo, res.lambda);
  });
  Stages::require_finite("depth_fusion", finite(fused.depth));
  keep("depth_fused", to_tensor(fused));

  const DepthVolumes vols = stages.run("depth_volumes", [&] {
    return build_depth_volumes(fused, f_fuse, w.depth, cfg.bins, cfg.stereo_softness);
  });
  Stages::require_finite("depth_volumes", finite(vols.mono.data) && finite(vols.stereo.data) &&
                                              finite(vols.encoded.data));
  keep("volume_mono", to_tensor(vols.mono));
  keep("volume_stereo", to_tensor(vols.stereo));
  keep("f_e", to_tensor(vols.encoded));

  const auto [mono_w, stereo_w] = stages.run("cga3d", [&] {
    if (!cfg.ablation.cga3d) return std::pair{vols.mono, vols.stereo};
    return std::pair{cg_attention_3d(vols.stereo, vols.mono, w.cga_mono),
                     cg_attention_3d(vols.mono, vols.stereo, w.cga_stereo)};
  });
  Stages::require_finite("cga3d", finite(mono_w.data) && finite(stereo_w.data));
  keep("volume_mono_weighted", to_tensor(mono_w));
  keep("volume_stereo_weighted", to_tensor(stereo_w));

  const DepthVolume d_v = stages.run("volume_fusion", [&] { return fuse_volumes(mono_w, stereo_w, w.fusion); });
  Stages::require_finite("volume_fusion", finite(d_v.data));
  keep("depth_volume", to_tensor(d_v));

  // Voxel generation.
  const LiftResult coarse =
      stages.run("lss_coarse", [&] { return lss_lift(d_v, vols.encoded, cfg.bins, in.camera, cfg.voxel); });
  Stages::require_finite("lss_coarse", finite(coarse.grid.data));
  const LiftResult raw = stages.run("lss_raw", [&] { return lss_lift(d_v, f_raw, cfg.bins, in.camera, cfg.voxel); });
  Stages::require_finite("lss_raw", finite(raw.grid.data));
  res.dropped_points = coarse.dropped_points;
  keep("v_coarse", to_tensor(coarse.grid));
  keep("v_raw", to_tensor(raw.grid));

  const ProposalSet proposals =
      stages.run("propose", [&] { return propose(coarse.grid, cfg.proposal_threshold, cfg.max_proposals); });
  res.proposals = proposals.indices.size();

  const VoxelGrid q = stages.run("dca", [&] {
    return dca(proposals, coarse.grid, vols.encoded, in.camera, cfg.voxel, w.dca);
  });
  Stages::require_finite("dca", finite(q.data));
  const VoxelGrid q_s = stages.run("merge_raw", [&] { return merge_raw(q, raw.grid); });
  Stages::require_finite("merge_raw", finite(q_s.data));
  const VoxelGrid refined = stages.run("dsa", [&] { return dsa(q_s, w.dsa); });
  Stages::require_finite("dsa", finite(refined.data));
  keep("q_dca", to_tensor(q));
  keep("q_merged", to_tensor(q_s));
  keep("v_refined", to_tensor(refined));

  const OccEncoding enc = stages.run("occ_encode", [&] { return occ_encode(refined, w.occ, cfg.occ_fusion); });
  Stages::require_finite("occ_encode", finite(enc.grid.data));
  keep("v_encoded", to_tensor(enc.grid));

  res.output = stages.run("classify", [&] { return classify(enc.grid, w.head, k); });
  res.plane_logits = stages.run("classify_planes", [&] {
    return TpvPlanes{classify_plane(enc.planes.xy, w.head), classify_plane(enc.planes.xz, w.head),
                     classify_plane(enc.planes.yz, w.head)};
  });
  Stages::require_finite("classify", finite(res.output.logits.data) && finite(res.plane_logits.xy.data) &&
                                         finite(res.plane_logits.xz.data) && finite(res.plane_logits.yz.data));
  keep("logits", to_tensor(res.output.logits));
  keep("labels", to_tensor(res.output.labels));

  res.seg_probs = stages.run("distill_head", [&] { return seg_head(f_fuse, w.seg_weight, w.seg_bias); });
  Stages::require_finite("distill_head", finite(res.seg_probs.data));
  keep("seg_probs", to_tensor(res.seg_probs));

  res.losses = stages.run("losses", [&] {
    LossParts p;
    p.scal_geo = scal_geo(res.output.logits, in.gt, cfg.scal_scales);
    p.scal_sem = scal_sem(res.output.logits, in.gt, cfg.scal_scales);
    p.ce = voxel_ce(res.output.logits, in.gt, cfg.class_policy);
    if (cfg.ablation.distill) {
      p.distill_ce = soft_ce(res.seg_probs, in.pseudo_labels);
      p.dice = dice_loss(res.seg_probs, in.pseudo_labels);
      p.boundary = boundary_loss(res.seg_probs, in.pseudo_labels);
    }
    p.tpv = tpv_loss(res.plane_logits, in.gt, cfg.class_policy, cfg.voxel);
    return p;
  });
  res.total_loss = total_loss(res.losses, cfg.loss_weights);
  for (double v : {res.losses.scal_geo, res.losses.scal_sem, res.losses.ce, res.losses.distill_ce, res.losses.dice,
                   res.losses.boundary, res.losses.tpv, res.total_loss}) {
    Stages::require_finite("losses", std::isfinite(v));
  }

  res.metrics = stages.run("metrics", [&] { return evaluate(res.output.labels, in.gt, cfg.voxel, cfg.ranges); });
  return res;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  if (!cfg.input_dir.empty()) return run_pipeline(cfg, load_scene(cfg.input_dir, cfg.history));
  SceneConfig scene;
  if (cfg.scene) {
    scene = *cfg.scene;
  } else {
    RandomSceneOptions opt;
    opt.frames = std::max(3, cfg.history + 1);
    scene = random_scene(cfg.seed, opt);
  }
  return run_pipeline(cfg, synth_inputs(scene, cfg.history, cfg.voxel));
}

// ---------------------------------------------------------------- reports

json loss_report(const LossParts& p, double total) {
  return {{"scal_geo", p.scal_geo}, {"scal_sem", p.scal_sem}, {"ce", p.ce},       {"distill_ce", p.distill_ce},
          {"dice", p.dice},         {"boundary", p.boundary}, {"tpv", p.tpv},     {"total", total}};
}

json result_report(const PipelineResult& r, const std::vector<std::string>& class_names) {
  json timing = json::array();
  for (const auto& t : r.timings) timing.push_back({{"stage", t.stage}, {"ms", t.ms}});
  const auto& d = r.output.labels.dims;
  return {{"losses", loss_report(r.losses, r.total_loss)},
          {"metrics", to_json(r.metrics, class_names)},
          {"lambda", r.lambda},
          {"proposals", r.proposals},
          {"dropped_points", r.dropped_points},
          {"output_shape", {d.x, d.y, d.z}},
          {"timing", timing}};
}

void write_outputs(const PipelineResult& r, const std::vector<std::string>& class_names,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "labels.tensor", to_tensor(r.output.labels));
  write_tensor(dir / "logits.tensor", to_tensor(r.output.logits));
  const json report = result_report(r, class_names);
  auto write_json = [&](const std::string& name, const json& j) {
    std::ofstream out(dir / name);
    if (!out) throw InputError("cannot write " + (dir / name).string());
    out << j.dump(2) << '\n';
  };
  write_json("losses.json", report.at("losses"));
  write_json("metrics.json", report.at("metrics"));
  write_json("report.json", report);
  if (!r.intermediates.empty()) {
    const auto sub = dir / "intermediates";
    std::filesystem::create_directories(sub);
    for (const auto& [name, t] : r.intermediates) write_tensor(sub / (name + ".tensor"), t);
  }
}

MetricsReport eval_only(const std::filesystem::path& pred, const std::filesystem::path& gt, const VoxelSpec& spec,
                        int num_classes) {
  for (const auto& p : {pred, gt}) {
    if (!std::filesystem::exists(p)) throw InputError("missing input file: " + p.string());
  }
  const Tensor tp = read_tensor(pred);
  const Tensor tg = read_tensor(gt);
  if (tp.shape != tg.shape) throw ShapeError("eval: prediction and ground-truth shapes differ");
  if (num_classes <= 0) {
    float top = 1.0F;
    for (const Tensor* t : {&tp, &tg})
      for (float v : t->data)
        if (v != kIgnoreLabel) top = std::max(top, v);
    num_classes = static_cast<int>(top);
  }
  const LabelGrid p = label_grid_from(tp, num_classes);
  const LabelGrid g = label_grid_from(tg, num_classes);
  VoxelSpec s = spec;
  s.dims = g.dims;
  return evaluate(p, g, s);
}

}  // namespace ssc
