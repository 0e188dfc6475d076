#include "ssc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ssc/errors.hpp"

namespace ssc {
namespace {

constexpr double kHitEps = 1e-6;
constexpr double kOcclusionTol = 1e-4;  // relative depth slack of the z-buffer test
constexpr double kViewTol = 1e-6;       // pixels of slack on the image hull

std::optional<double> ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& lo,
                              const Eigen::Vector3d& hi) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a];
    double tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= kHitEps) return std::nullopt;
  return t0;
}

Eigen::Vector3d vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw InputError("scene: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json vec_json(const Eigen::Vector3d& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Eigen::Matrix4d mat4(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 16) throw InputError("scene: a pose needs 16 row-major values");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = j[static_cast<std::size_t>(r * 4 + c)].get<double>();
  return m;
}

// Texture attached to the surface so it moves with its object.
void shade(const SceneConfig& cfg, const RayHit& hit, int frame, std::span<float> out) {
  std::fill(out.begin(), out.end(), 0.0F);
  out[static_cast<std::size_t>(hit.label - 1)] = 1.0F;
  Eigen::Vector3d local = hit.point;
  if (hit.object >= 0) local -= cfg.objects[static_cast<std::size_t>(hit.object)].min_at(frame);
  const std::size_t k = static_cast<std::size_t>(cfg.num_classes);
  out[k] = static_cast<float>(0.5 + 0.5 * std::sin(2.1 * local.x() + 1.7 * local.y() + 2.9 * local.z()));
  out[k + 1] = static_cast<float>(0.5 + 0.5 * std::cos(1.3 * local.x() - 2.3 * local.y() + 1.1 * local.z()));
}

void check_frame(const SceneConfig& cfg, int frame) {
  if (frame < 0 || frame >= cfg.frames) {
    throw InputError("synth: frame " + std::to_string(frame) + " out of range [0, " + std::to_string(cfg.frames) + ")");
  }
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, int frame, std::string_view tag) {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](unsigned char b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (int i = 0; i < 4; ++i) mix(static_cast<unsigned char>(static_cast<std::uint32_t>(frame) >> (8 * i)));
  for (char c : tag) mix(static_cast<unsigned char>(c));
  return h;
}

void SceneConfig::validate() const {
  if (frames < 3) throw InputError("scene: at least 3 frames are required");
  if (width <= 0 || height <= 0 || !(focal > 0.0)) throw InputError("scene: bad image size or focal length");
  if (static_cast<int>(poses.size()) != frames) throw InputError("scene: need one pose per frame");
  if (num_classes < 1 || num_classes >= kIgnoreLabel) throw InputError("scene: bad class count");
  if (!(extent > 0.0)) throw InputError("scene: extent must be positive");
  if (!(stereo_sigma >= 0.0)) throw InputError("scene: stereo sigma must be >= 0");
  if (lidar_row_stride < 1 || lidar_col_stride < 1) throw InputError("scene: lidar strides must be >= 1");
  auto check_label = [&](int l) {
    if (l < 1 || l > num_classes) throw InputError("scene: label " + std::to_string(l) + " out of range");
  };
  if (ground) check_label(ground_label);
  if (back_wall) check_label(wall_label);
  for (const auto& o : objects) {
    check_label(o.label);
    if (!(o.max.array() > o.min.array()).all()) throw InputError("scene: object box has non-positive size");
    if (!o.velocity.allFinite()) throw InputError("scene: non-finite object velocity");
  }
  for (int f = 0; f < frames; ++f) camera(f).validate();
}

CameraModel SceneConfig::camera(int frame) const {
  check_frame(*this, frame);
  return CameraModel::pinhole(width, height, focal, poses[static_cast<std::size_t>(frame)]);
}

Eigen::Matrix3d forward_camera_rotation() {
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, 0, 1, 0, -1, 0;
  return r;
}

std::vector<Eigen::Matrix4d> forward_trajectory(int frames, double speed, double height) {
  std::vector<Eigen::Matrix4d> poses;
  for (int f = 0; f < frames; ++f) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = forward_camera_rotation();
    m.block<3, 1>(0, 3) = Eigen::Vector3d(0.0, -speed * (frames - 1 - f), height);
    poses.push_back(m);
  }
  return poses;
}

namespace {

std::vector<SceneObject> random_objects(std::uint64_t seed, int frames, const RandomSceneOptions& opt) {
  std::mt19937_64 rng(stream_seed(seed, 0, "objects"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * unit(rng); };
  const int count = opt.min_objects + static_cast<int>(unit(rng) * (opt.max_objects - opt.min_objects + 1));
  std::vector<SceneObject> objects;
  for (int i = 0; i < std::min(count, opt.max_objects); ++i) {
    const double c = unit(rng);
    SceneObject o;
    Eigen::Vector3d size;
    if (c < 0.45) {
      o.label = 2;
      size = {1.8, 4.2, 1.5};
      if (unit(rng) < 0.5) std::swap(size.x(), size.y());
    } else if (c < 0.65) {
      o.label = 3;
      size = {uni(3.0, 5.0), uni(3.0, 5.0), uni(4.0, 6.0)};
    } else if (c < 0.85) {
      o.label = 4;
      const double w = uni(1.2, 2.0);
      size = {w, w, uni(1.5, 3.0)};
    } else {
      o.label = 5;
      size = {0.3, 0.3, uni(3.5, 5.0)};
    }
    const double y = uni(5.0, 22.0);
    const double half_view = std::min(0.7 * y, 10.0);
    const double x = uni(-half_view, half_view);
    o.min = {x - size.x() / 2, y, 0.0};
    o.max = o.min + size;
    if (o.label == 2 && unit(rng) < opt.moving_fraction) {
      const double speed = uni(0.3, opt.max_speed) * (unit(rng) < 0.5 ? -1.0 : 1.0);
      o.velocity = unit(rng) < 0.5 ? Eigen::Vector3d(speed, 0, 0) : Eigen::Vector3d(0, speed, 0);
    }
    // Positions are sampled for the last frame.
    o.min -= o.velocity * (frames - 1);
    o.max -= o.velocity * (frames - 1);
    objects.push_back(o);
  }
  return objects;
}

}  // namespace

SceneConfig random_scene(std::uint64_t seed, const RandomSceneOptions& options) {
  SceneConfig cfg;
  cfg.seed = seed;
  cfg.frames = options.frames;
  cfg.width = options.width;
  cfg.height = options.height;
  cfg.focal = options.focal;
  cfg.poses = forward_trajectory(options.frames, options.camera_speed, options.camera_height);
  cfg.objects = random_objects(seed, options.frames, options);
  cfg.validate();
  return cfg;
}

SceneConfig scene_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("scene: config must be a JSON object");
  SceneConfig cfg;
  RandomSceneOptions opt;
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.extent = j.value("extent", cfg.extent);
  cfg.width = j.value("width", cfg.width);
  cfg.height = j.value("height", cfg.height);
  cfg.focal = j.value("focal", cfg.focal);
  cfg.frames = j.value("frames", cfg.frames);
  cfg.ground = j.value("ground", cfg.ground);
  cfg.back_wall = j.value("back_wall", cfg.back_wall);
  cfg.ground_label = j.value("ground_label", cfg.ground_label);
  cfg.wall_label = j.value("wall_label", cfg.wall_label);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  if (j.contains("class_names")) cfg.class_names = j.at("class_names").get<std::vector<std::string>>();
  cfg.stereo_sigma = j.value("stereo_sigma", cfg.stereo_sigma);
  cfg.lidar_row_stride = j.value("lidar_row_stride", cfg.lidar_row_stride);
  cfg.lidar_col_stride = j.value("lidar_col_stride", cfg.lidar_col_stride);
  opt.frames = cfg.frames;
  opt.camera_speed = j.value("camera_speed", opt.camera_speed);
  opt.camera_height = j.value("camera_height", opt.camera_height);
  opt.min_objects = j.value("min_objects", opt.min_objects);
  opt.max_objects = j.value("max_objects", opt.max_objects);
  opt.moving_fraction = j.value("moving_fraction", opt.moving_fraction);
  opt.max_speed = j.value("max_speed", opt.max_speed);

  if (j.contains("poses")) {
    for (const auto& p : j.at("poses")) cfg.poses.push_back(mat4(p));
  } else {
    cfg.poses = forward_trajectory(cfg.frames, opt.camera_speed, opt.camera_height);
  }
  if (j.contains("objects")) {
    for (const auto& o : j.at("objects")) {
      SceneObject obj;
      obj.label = o.at("label").get<int>();
      obj.min = vec3(o.at("min"));
      obj.max = vec3(o.at("max"));
      if (o.contains("velocity")) obj.velocity = vec3(o.at("velocity"));
      cfg.objects.push_back(obj);
    }
  } else {
    cfg.objects = random_objects(cfg.seed, cfg.frames, opt);
  }
  cfg.validate();
  return cfg;
}

nlohmann::json scene_to_json(const SceneConfig& cfg) {
  nlohmann::json poses = nlohmann::json::array();
  for (const auto& p : cfg.poses) {
    nlohmann::json row = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) row.push_back(p(r, c));
    poses.push_back(row);
  }
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : cfg.objects) {
    objects.push_back(
        {{"label", o.label}, {"min", vec_json(o.min)}, {"max", vec_json(o.max)}, {"velocity", vec_json(o.velocity)}});
  }
  return {{"seed", cfg.seed},
          {"extent", cfg.extent},
          {"width", cfg.width},
          {"height", cfg.height},
          {"focal", cfg.focal},
          {"frames", cfg.frames},
          {"ground", cfg.ground},
          {"back_wall", cfg.back_wall},
          {"ground_label", cfg.ground_label},
          {"wall_label", cfg.wall_label},
          {"num_classes", cfg.num_classes},
          {"class_names", cfg.class_names},
          {"stereo_sigma", cfg.stereo_sigma},
          {"lidar_row_stride", cfg.lidar_row_stride},
          {"lidar_col_stride", cfg.lidar_col_stride},
          {"poses", poses},
          {"objects", objects}};
}

std::optional<RayHit> cast_ray(const SceneConfig& cfg, int frame, const Eigen::Vector3d& o,
                               const Eigen::Vector3d& d) {
  std::optional<RayHit> best;
  auto offer = [&](double t, int label, int object, bool later_wins) {
    if (!(t > kHitEps)) return;
    if (best && (later_wins ? t > best->depth : t >= best->depth)) return;
    best = RayHit{t, label, object, o + t * d};
  };
  if (cfg.ground && d.z() < 0.0) offer(-o.z() / d.z(), cfg.ground_label, -1, false);
  if (cfg.back_wall && d.y() > 0.0) offer((cfg.extent - o.y()) / d.y(), cfg.wall_label, -2, false);
  for (std::size_t i = 0; i < cfg.objects.size(); ++i) {
    const auto& obj = cfg.objects[i];
    if (auto t = ray_box(o, d, obj.min_at(frame), obj.max_at(frame))) offer(*t, obj.label, static_cast<int>(i), true);
  }
  return best;
}

FrameRender render(const SceneConfig& cfg, int frame) {
  check_frame(cfg, frame);
  const CameraModel cam = cfg.camera(frame);
  const int h = cfg.height;
  const int w = cfg.width;
  FrameRender r{DepthMap(h, w), DepthMap(h, w), DepthMap(h, w), FeatureMap(h, w, cfg.image_channels()),
                LabelMap{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, kEmptyLabel)}};
  const Eigen::Vector3d origin = cam.position();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto hit = cast_ray(cfg, frame, origin, cam.ray_direction(x, y));
      if (!hit) continue;
      r.depth.at(y, x) = static_cast<float>(hit->depth);
      r.labels.labels[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(hit->label);
      shade(cfg, *hit, frame, r.image.pixel(y, x));
    }

  for (int y = 0; y < h; y += cfg.lidar_row_stride)
    for (int x = 0; x < w; x += cfg.lidar_col_stride) r.lidar.at(y, x) = r.depth.at(y, x);

  std::mt19937_64 rng(stream_seed(cfg.seed, frame, "stereo"));
  std::normal_distribution<double> noise(0.0, 1.0);
  constexpr double kMinDepth = 0.1;
  for (std::size_t i = 0; i < r.depth.depth.size(); ++i) {
    const double n = noise(rng);
    const double d = r.depth.depth[i];
    if (d <= 0.0) continue;
    r.stereo.depth[i] = cfg.stereo_sigma == 0.0 ? r.depth.depth[i]
                                                : static_cast<float>(std::max(d + cfg.stereo_sigma * n, kMinDepth));
  }
  return r;
}

FeatureMap pseudo_labels(const LabelMap& labels, int num_classes, double confidence) {
  if (!(confidence > 0.0 && confidence <= 1.0)) throw InputError("pseudo_labels: confidence must be in (0, 1]");
  const int k = num_classes + 1;
  const double rest = (1.0 - confidence) / (k - 1);
  FeatureMap out(labels.height, labels.width, k);
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x) {
      const int l = labels.at(y, x);
      if (l > num_classes) throw InputError("pseudo_labels: label out of range");
      for (int c = 0; c < k; ++c) out.at(y, x, c) = static_cast<float>(c == l ? confidence : rest);
    }
  return out;
}

namespace {

// Flow of every `from` pixel into `to`, with the z-buffer visibility test.
void one_way(const SceneConfig& cfg, int from, int to, FlowField& flow, BoolMask& occ) {
  const CameraModel src = cfg.camera(from);
  const CameraModel dst = cfg.camera(to);
  const Eigen::Vector3d origin = src.position();
  const double w_lim = cfg.width - 1.0;
  const double h_lim = cfg.height - 1.0;
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const auto hit = cast_ray(cfg, from, origin, src.ray_direction(x, y));
      if (!hit) continue;
      Eigen::Vector3d p = hit->point;
      if (hit->object >= 0) p += cfg.objects[static_cast<std::size_t>(hit->object)].velocity * (to - from);
      const auto proj = dst.project(p);
      if (!proj) {
        occ.set(y, x, true);
        continue;
      }
      const double u = proj->x();
      const double v = proj->y();
      flow.set(y, x, static_cast<float>(u - x), static_cast<float>(v - y));
      if (u < -kViewTol || u > w_lim + kViewTol || v < -kViewTol || v > h_lim + kViewTol) {
        occ.set(y, x, true);
        continue;
      }
      const auto seen = cast_ray(cfg, to, dst.position(), dst.ray_direction(u, v));
      const double z = proj->z();
      if (seen && seen->depth < z - kOcclusionTol * z) occ.set(y, x, true);
    }
}

}  // namespace

FlowTruth gt_flow(const SceneConfig& cfg, int from, int to) {
  check_frame(cfg, from);
  check_frame(cfg, to);
  FlowTruth t{FlowField(cfg.height, cfg.width), FlowField(cfg.height, cfg.width), BoolMask(cfg.height, cfg.width),
              BoolMask(cfg.height, cfg.width)};
  one_way(cfg, from, to, t.fwd, t.occlusion);
  one_way(cfg, to, from, t.bwd, t.occlusion_bwd);
  return t;
}

LabelGrid gt_voxels(const SceneConfig& cfg, int frame, const VoxelSpec& spec) {
  check_frame(cfg, frame);
  spec.validate();
  const auto& d = spec.dims;
  const double s = spec.cell_size;
  LabelGrid grid(d, cfg.num_classes);
  for (int x = 0; x < d.x; ++x)
    for (int y = 0; y < d.y; ++y)
      for (int z = 0; z < d.z; ++z) {
        const Eigen::Vector3d lo = spec.origin + s * Eigen::Vector3d(x, y, z);
        const Eigen::Vector3d c = spec.center(x, y, z);
        std::uint8_t label = kEmptyLabel;
        if (cfg.ground && lo.z() <= 0.0 && 0.0 < lo.z() + s) label = static_cast<std::uint8_t>(cfg.ground_label);
        if (cfg.back_wall && lo.y() <= cfg.extent && cfg.extent < lo.y() + s && lo.z() + s > 0.0) {
          label = static_cast<std::uint8_t>(cfg.wall_label);
        }
        for (const auto& o : cfg.objects) {
          const Eigen::Vector3d mn = o.min_at(frame);
          const Eigen::Vector3d mx = o.max_at(frame);
          if ((c.array() >= mn.array()).all() && (c.array() < mx.array()).all()) {
            label = static_cast<std::uint8_t>(o.label);
          }
        }
        grid.set(x, y, z, label);
      }
  return grid;
}

}  // namespace ssc
