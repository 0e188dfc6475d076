#pragma once

// Small dense building blocks (linear maps, convolutions, activations) used
// by the feature networks. Forward pass only.

#include <span>
#include <vector>

#include "ssc/grid.hpp"

namespace ssc {

/// Row-major rows × cols matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(int r, int c, float fill = 0.0F) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  static Matrix identity(int n);
};

/// y = M x (+ bias when non-empty). Accumulates in double.
void matvec(const Matrix& m, std::span<const float> x, std::span<float> y, std::span<const float> bias = {});

/// Numerically stable in-place softmax.
void softmax_inplace(std::span<double> logits);

double sigmoid(double v);

/// Same-size convolution with zero padding and odd cubic kernel.
/// Weight layout: [out][in][kx][ky][kz] over the grid's (x, y, z) axes.
struct Conv3d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  std::vector<float> weight;
  std::vector<float> bias;

  Conv3d() = default;
  Conv3d(int in, int out, int k);

  float& w(int o, int i, int kx, int ky, int kz) {
    return weight[((((static_cast<std::size_t>(o) * in_channels + i) * kernel + kx) * kernel + ky) * kernel) + kz];
  }
  void validate() const;
  /// Kernel that copies input channel i to output channel i (centre tap).
  static Conv3d identity(int channels, int kernel);
};

VoxelGrid conv3d(const VoxelGrid& in, const Conv3d& conv);

/// Same-size 2D convolution, weight layout [out][in][ky][kx].
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  std::vector<float> weight;
  std::vector<float> bias;

  Conv2d() = default;
  Conv2d(int in, int out, int k);

  float& w(int o, int i, int ky, int kx) {
    return weight[(((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel) + kx];
  }
  void validate() const;
};

FeatureMap conv2d(const FeatureMap& in, const Conv2d& conv);

void relu_inplace(std::span<float> v);

/// Pairwise (fan-in 2) summation with a fixed tree shape.
double pairwise_sum(std::span<const double> v);

}  // namespace ssc
