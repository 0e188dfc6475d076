#include "ssc/flow_align.hpp"

#include <cmath>

#include "ssc/errors.hpp"

namespace ssc {
namespace {

void require_same(const FeatureMap& a, const FeatureMap& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": feature map shapes differ");
}

struct Projected {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<float> data;

  std::span<const float> at(int y, int x) const {
    return {data.data() + (static_cast<std::size_t>(y) * width + x) * dim, static_cast<std::size_t>(dim)};
  }
};

Projected project(const FeatureMap& m, const Matrix& w) {
  Projected p{m.height, m.width, w.rows, std::vector<float>(m.pixel_count() * static_cast<std::size_t>(w.rows))};
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      matvec(w, m.pixel(y, x),
             {p.data.data() + (static_cast<std::size_t>(y) * m.width + x) * w.rows, static_cast<std::size_t>(w.rows)});
    }
  }
  return p;
}

struct KeyRef {
  std::size_t frame;
  int y;
  int x;
};

// In-bounds window cells around (y, x) for every frame, in the fixed key order.
std::vector<KeyRef> window_keys(std::size_t frames, int height, int width, int window, int y, int x) {
  const int r = window / 2;
  std::vector<KeyRef> keys;
  for (std::size_t f = 0; f < frames; ++f) {
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const int ky = y + dy;
        const int kx = x + dx;
        if (ky < 0 || ky >= height || kx < 0 || kx >= width) continue;
        keys.push_back({f, ky, kx});
      }
    }
  }
  return keys;
}

std::vector<double> attend(std::span<const float> q, const std::vector<Projected>& keys,
                           const std::vector<KeyRef>& refs, int dim) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> logits(refs.size());
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto kv = keys[refs[k].frame].at(refs[k].y, refs[k].x);
    double dot = 0.0;
    for (int i = 0; i < dim; ++i) dot += static_cast<double>(q[static_cast<std::size_t>(i)]) * kv[static_cast<std::size_t>(i)];
    logits[k] = dot * scale;
  }
  softmax_inplace(logits);
  return logits;
}

void check_history(const FeatureMap& current, std::span<const FeatureMap> history, const NcaParams& params) {
  current.validate();
  if (history.empty()) throw InputError("nca_fuse: at least one history frame is required");
  for (const auto& h : history) require_same(current, h, "nca_fuse");
  params.validate(current.channels);
}

}  // namespace

void ConsistencyParams::validate() const {
  if (!(alpha >= 0.0) || !(beta > 0.0)) throw InputError("ConsistencyParams: need alpha >= 0 and beta > 0");
}

OcclusionMasks fwd_bwd_check(const FlowField& flow_fwd, const FlowField& flow_bwd, const ConsistencyParams& params) {
  params.validate();
  flow_fwd.validate();
  flow_bwd.validate();
  if (flow_fwd.height != flow_bwd.height || flow_fwd.width != flow_bwd.width) {
    throw ShapeError("fwd_bwd_check: flow dimensions differ");
  }
  const FeatureMap fwd_map = flow_fwd.as_feature_map();
  const FeatureMap bwd_map = flow_bwd.as_feature_map();
  const FeatureMap bwd_hat = warp(bwd_map, flow_fwd);
  const FeatureMap fwd_hat = warp(fwd_map, flow_bwd);

  const int h = flow_fwd.height;
  const int w = flow_fwd.width;
  OcclusionMasks masks{BoolMask(h, w), BoolMask(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double fx = flow_fwd.dx(y, x);
      const double fy = flow_fwd.dy(y, x);
      const double bx = flow_bwd.dx(y, x);
      const double by = flow_bwd.dy(y, x);
      const double mag = std::hypot(fx, fy) + std::hypot(bx, by);
      const double threshold = params.alpha * mag + params.beta;
      const double res_fwd = std::hypot(fx + bwd_hat.at(y, x, 0), fy + bwd_hat.at(y, x, 1));
      const double res_bwd = std::hypot(bx + fwd_hat.at(y, x, 0), by + fwd_hat.at(y, x, 1));
      masks.fwd.set(y, x, res_fwd > threshold);
      masks.bwd.set(y, x, res_bwd > threshold);
    }
  }
  return masks;
}

FeatureMap mask_gate(const FeatureMap& warped, const BoolMask& occlusion) {
  warped.validate();
  if (warped.height != occlusion.height || warped.width != occlusion.width) {
    throw ShapeError("mask_gate: mask dimensions differ from feature map");
  }
  FeatureMap out = warped;
  for (int y = 0; y < warped.height; ++y) {
    for (int x = 0; x < warped.width; ++x) {
      if (!occlusion.at(y, x)) continue;
      for (auto& v : out.pixel(y, x)) v = 0.0F;
    }
  }
  return out;
}

NcaParams NcaParams::identity(int channels, int window) {
  return {window, channels, Matrix::identity(channels), Matrix::identity(channels), Matrix::identity(channels),
          Matrix::identity(channels)};
}

void NcaParams::validate(int channels) const {
  if (window < 1 || window % 2 == 0) throw InputError("NcaParams: window must be odd and >= 1");
  if (dim < 1) throw InputError("NcaParams: dim must be positive");
  auto check = [](const Matrix& m, int r, int c, const char* name) {
    if (m.rows != r || m.cols != c || m.data.size() != static_cast<std::size_t>(r) * c) {
      throw ShapeError(std::string("NcaParams: ") + name + " projection has the wrong shape");
    }
  };
  check(query, dim, channels, "query");
  check(key, dim, channels, "key");
  check(value, dim, channels, "value");
  check(output, channels, dim, "output");
}

std::vector<double> nca_attention(const FeatureMap& current, std::span<const FeatureMap> history,
                                  const NcaParams& params, int y, int x) {
  check_history(current, history, params);
  if (!current.contains(y, x)) throw InputError("nca_attention: query pixel out of bounds");
  std::vector<float> q(static_cast<std::size_t>(params.dim));
  matvec(params.query, current.pixel(y, x), q);
  std::vector<Projected> keys;
  for (const auto& h : history) keys.push_back(project(h, params.key));
  const auto refs = window_keys(history.size(), current.height, current.width, params.window, y, x);
  return attend(q, keys, refs, params.dim);
}

FeatureMap nca_fuse(const FeatureMap& current, std::span<const FeatureMap> history, const NcaParams& params) {
  check_history(current, history, params);
  const int dim = params.dim;
  const Projected queries = project(current, params.query);
  std::vector<Projected> keys;
  std::vector<Projected> values;
  for (const auto& h : history) {
    keys.push_back(project(h, params.key));
    values.push_back(project(h, params.value));
  }

  FeatureMap out = current;
  std::vector<double> attended(static_cast<std::size_t>(dim));
  std::vector<float> attended_f(static_cast<std::size_t>(dim));
  std::vector<float> projected(static_cast<std::size_t>(current.channels));
  for (int y = 0; y < current.height; ++y) {
    for (int x = 0; x < current.width; ++x) {
      const auto refs = window_keys(history.size(), current.height, current.width, params.window, y, x);
      const auto weights = attend(queries.at(y, x), keys, refs, dim);
      std::fill(attended.begin(), attended.end(), 0.0);
      for (std::size_t k = 0; k < refs.size(); ++k) {
        const auto v = values[refs[k].frame].at(refs[k].y, refs[k].x);
        for (int i = 0; i < dim; ++i) attended[static_cast<std::size_t>(i)] += weights[k] * v[static_cast<std::size_t>(i)];
      }
      for (int i = 0; i < dim; ++i) attended_f[static_cast<std::size_t>(i)] = static_cast<float>(attended[static_cast<std::size_t>(i)]);
      matvec(params.output, attended_f, projected);
      auto px = out.pixel(y, x);
      for (int c = 0; c < current.channels; ++c) px[static_cast<std::size_t>(c)] += projected[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

FeatureMap build_raw(const FeatureMap& current, std::span<const FeatureMap> warped, const Matrix& projection) {
  current.validate();
  for (const auto& w : warped) require_same(current, w, "build_raw");
  const int c = current.channels;
  const int concat = c * static_cast<int>(warped.size() + 1);
  if (projection.rows != c || projection.cols != concat) {
    throw ShapeError("build_raw: projection must be C x C*(n+1)");
  }
  FeatureMap out(current.height, current.width, c);
  std::vector<float> stacked(static_cast<std::size_t>(concat));
  for (int y = 0; y < current.height; ++y) {
    for (int x = 0; x < current.width; ++x) {
      auto it = std::copy_n(current.pixel(y, x).begin(), c, stacked.begin());
      for (const auto& w : warped) it = std::copy_n(w.pixel(y, x).begin(), c, it);
      matvec(projection, stacked, out.pixel(y, x));
    }
  }
  return out;
}

}  // namespace ssc
