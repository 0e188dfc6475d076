#include "ssc/weights.hpp"

#include <cmath>
#include <random>

#include "ssc/errors.hpp"
#include "ssc/synth.hpp"
#include "ssc/tensor_io.hpp"

namespace ssc {

WeightStore::WeightStore(std::uint64_t seed, std::filesystem::path dir) : seed_(seed), dir_(std::move(dir)) {}

bool WeightStore::try_load(const std::string& name, const std::vector<std::int64_t>& shape, std::vector<float>& out) {
  if (dir_.empty()) return false;
  const auto path = dir_ / (name + ".tensor");
  if (!std::filesystem::exists(path)) return false;
  Tensor t = read_tensor(path);
  if (t.shape != shape) throw ShapeError("weights: " + path.string() + " has the wrong shape");
  out = std::move(t.data);
  loaded_.push_back(name);
  return true;
}

std::vector<float> WeightStore::uniform(const std::string& name, const std::vector<std::int64_t>& shape, int fan_in) {
  std::vector<float> out;
  if (try_load(name, shape, out)) return out;
  std::size_t n = 1;
  for (auto s : shape) n *= static_cast<std::size_t>(s);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::mt19937_64 rng(stream_seed(seed_, 0, name));
  std::uniform_real_distribution<double> dist(-bound, bound);
  out.resize(n);
  for (auto& v : out) v = static_cast<float>(dist(rng));
  return out;
}

std::vector<float> WeightStore::constant(const std::string& name, const std::vector<std::int64_t>& shape, float value) {
  std::size_t n = 1;
  for (auto s : shape) n *= static_cast<std::size_t>(s);
  return fixed(name, shape, std::vector<float>(n, value));
}

std::vector<float> WeightStore::fixed(const std::string& name, const std::vector<std::int64_t>& shape,
                                      std::vector<float> fallback) {
  std::vector<float> out;
  if (try_load(name, shape, out)) return out;
  return fallback;
}

Matrix WeightStore::matrix(const std::string& name, int rows, int cols) {
  Matrix m(rows, cols);
  m.data = uniform(name, {rows, cols}, cols);
  return m;
}

std::vector<float> WeightStore::bias(const std::string& name, int size, int fan_in) {
  return uniform(name, {size}, fan_in);
}

Conv2d WeightStore::conv2d(const std::string& name, int in, int out, int kernel) {
  Conv2d c(in, out, kernel);
  const int fan_in = in * kernel * kernel;
  c.weight = uniform(name + ".weight", {out, in, kernel, kernel}, fan_in);
  c.bias = uniform(name + ".bias", {out}, fan_in);
  return c;
}

Conv3d WeightStore::conv3d(const std::string& name, int in, int out, int kernel) {
  Conv3d c(in, out, kernel);
  const int fan_in = in * kernel * kernel * kernel;
  c.weight = uniform(name + ".weight", {out, in, kernel, kernel, kernel}, fan_in);
  c.bias = uniform(name + ".bias", {out}, fan_in);
  return c;
}

}  // namespace ssc
