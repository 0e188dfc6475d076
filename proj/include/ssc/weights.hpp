#pragma once

// Named parameter source for the forward pass. A tensor named `n` is read
// from `<dir>/<n>.tensor` when present; otherwise it is drawn uniformly from
// [-1/sqrt(fan_in), 1/sqrt(fan_in)] with a seed derived from (seed, n), so
// each parameter is independent of the order in which others are requested.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssc/layers.hpp"

namespace ssc {

class WeightStore {
 public:
  explicit WeightStore(std::uint64_t seed, std::filesystem::path dir = {});

  std::vector<float> uniform(const std::string& name, const std::vector<std::int64_t>& shape, int fan_in);
  std::vector<float> constant(const std::string& name, const std::vector<std::int64_t>& shape, float value);
  /// `fallback` (already shaped) unless the tensor exists on disk.
  std::vector<float> fixed(const std::string& name, const std::vector<std::int64_t>& shape,
                           std::vector<float> fallback);

  Matrix matrix(const std::string& name, int rows, int cols);
  std::vector<float> bias(const std::string& name, int size, int fan_in);
  Conv2d conv2d(const std::string& name, int in, int out, int kernel);
  Conv3d conv3d(const std::string& name, int in, int out, int kernel);

  std::uint64_t seed() const { return seed_; }
  /// Names of the parameters read from disk, in request order.
  const std::vector<std::string>& loaded() const { return loaded_; }

 private:
  bool try_load(const std::string& name, const std::vector<std::int64_t>& shape, std::vector<float>& out);

  std::uint64_t seed_;
  std::filesystem::path dir_;
  std::vector<std::string> loaded_;
};

}  // namespace ssc
