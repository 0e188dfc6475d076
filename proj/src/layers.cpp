#include "ssc/layers.hpp"

#include <algorithm>
#include <cmath>

#include "ssc/errors.hpp"

namespace ssc {

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0F;
  return m;
}

void matvec(const Matrix& m, std::span<const float> x, std::span<float> y, std::span<const float> bias) {
  if (x.size() != static_cast<std::size_t>(m.cols) || y.size() != static_cast<std::size_t>(m.rows)) {
    throw ShapeError("matvec: operand sizes do not match matrix");
  }
  if (!bias.empty() && bias.size() != y.size()) throw ShapeError("matvec: bias size mismatch");
  for (int r = 0; r < m.rows; ++r) {
    double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(r)];
    const float* row = m.data.data() + static_cast<std::size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) acc += static_cast<double>(row[c]) * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = static_cast<float>(acc);
  }
}

void softmax_inplace(std::span<double> logits) {
  if (logits.empty()) return;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - mx);
    total += v;
  }
  for (auto& v : logits) v /= total;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Conv3d::Conv3d(int in, int out, int k)
    : in_channels(in),
      out_channels(out),
      kernel(k),
      weight(static_cast<std::size_t>(out) * in * k * k * k, 0.0F),
      bias(static_cast<std::size_t>(out), 0.0F) {}

void Conv3d::validate() const {
  if (kernel < 1 || kernel % 2 == 0) throw ShapeError("Conv3d: kernel must be odd and positive");
  if (weight.size() != static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel * kernel ||
      bias.size() != static_cast<std::size_t>(out_channels)) {
    throw ShapeError("Conv3d: weight shape mismatch");
  }
}

Conv3d Conv3d::identity(int channels, int kernel) {
  Conv3d c(channels, channels, kernel);
  const int mid = kernel / 2;
  for (int i = 0; i < channels; ++i) c.w(i, i, mid, mid, mid) = 1.0F;
  return c;
}

VoxelGrid conv3d(const VoxelGrid& in, const Conv3d& conv) {
  conv.validate();
  if (in.channels != conv.in_channels) throw ShapeError("conv3d: input channel mismatch");
  const auto d = in.dims;
  const int k = conv.kernel;
  const int r = k / 2;
  const int ci = conv.in_channels;
  const int co = conv.out_channels;

  // Re-pack weights as [kx][ky][kz][in][out] so the inner loop is contiguous.
  std::vector<float> packed(conv.weight.size());
  for (int o = 0; o < co; ++o)
    for (int i = 0; i < ci; ++i)
      for (int kx = 0; kx < k; ++kx)
        for (int ky = 0; ky < k; ++ky)
          for (int kz = 0; kz < k; ++kz) {
            const std::size_t src = ((((static_cast<std::size_t>(o) * ci + i) * k + kx) * k + ky) * k) + kz;
            const std::size_t dst = ((((static_cast<std::size_t>(kx) * k + ky) * k + kz) * ci + i) * co) + o;
            packed[dst] = conv.weight[src];
          }

  VoxelGrid out(d, co);
  std::vector<float> acc(static_cast<std::size_t>(co));
  for (int x = 0; x < d.x; ++x) {
    for (int y = 0; y < d.y; ++y) {
      for (int z = 0; z < d.z; ++z) {
        std::copy(conv.bias.begin(), conv.bias.end(), acc.begin());
        for (int kx = 0; kx < k; ++kx) {
          const int sx = x + kx - r;
          if (sx < 0 || sx >= d.x) continue;
          for (int ky = 0; ky < k; ++ky) {
            const int sy = y + ky - r;
            if (sy < 0 || sy >= d.y) continue;
            for (int kz = 0; kz < k; ++kz) {
              const int sz = z + kz - r;
              if (sz < 0 || sz >= d.z) continue;
              const float* src = in.data.data() + in.index(sx, sy, sz);
              const float* wk = packed.data() + (((static_cast<std::size_t>(kx) * k + ky) * k + kz) * ci) * co;
              for (int i = 0; i < ci; ++i) {
                const float v = src[i];
                if (v == 0.0F) continue;
                const float* wrow = wk + static_cast<std::size_t>(i) * co;
                for (int o = 0; o < co; ++o) acc[static_cast<std::size_t>(o)] += v * wrow[o];
              }
            }
          }
        }
        std::copy(acc.begin(), acc.end(), out.data.begin() + static_cast<std::ptrdiff_t>(out.index(x, y, z)));
      }
    }
  }
  return out;
}

Conv2d::Conv2d(int in, int out, int k)
    : in_channels(in),
      out_channels(out),
      kernel(k),
      weight(static_cast<std::size_t>(out) * in * k * k, 0.0F),
      bias(static_cast<std::size_t>(out), 0.0F) {}

void Conv2d::validate() const {
  if (kernel < 1 || kernel % 2 == 0) throw ShapeError("Conv2d: kernel must be odd and positive");
  if (weight.size() != static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel ||
      bias.size() != static_cast<std::size_t>(out_channels)) {
    throw ShapeError("Conv2d: weight shape mismatch");
  }
}

FeatureMap conv2d(const FeatureMap& in, const Conv2d& conv) {
  conv.validate();
  if (in.channels != conv.in_channels) throw ShapeError("conv2d: input channel mismatch");
  const int k = conv.kernel;
  const int r = k / 2;
  FeatureMap out(in.height, in.width, conv.out_channels);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      for (int o = 0; o < conv.out_channels; ++o) {
        double acc = conv.bias[static_cast<std::size_t>(o)];
        for (int ky = 0; ky < k; ++ky) {
          const int sy = y + ky - r;
          if (sy < 0 || sy >= in.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int sx = x + kx - r;
            if (sx < 0 || sx >= in.width) continue;
            for (int i = 0; i < conv.in_channels; ++i) {
              const std::size_t wi = (((static_cast<std::size_t>(o) * conv.in_channels + i) * k + ky) * k) + kx;
              acc += static_cast<double>(conv.weight[wi]) * in.at(sy, sx, i);
            }
          }
        }
        out.at(y, x, o) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

void relu_inplace(std::span<float> v) {
  for (auto& x : v) x = std::max(x, 0.0F);
}

double pairwise_sum(std::span<const double> v) {
  if (v.empty()) return 0.0;
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace ssc
