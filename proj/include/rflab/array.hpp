#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace rflab {

// Dense row-major float64 tensor. Rank 1 arrays are vectors, rank 2 are
// matrices indexed (row, col); higher ranks are not needed anywhere.
struct DenseArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  DenseArray() = default;

  static DenseArray zeros(std::vector<std::size_t> shape);
  static DenseArray from(std::vector<std::size_t> shape, std::vector<double> values);

  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

bool same_shape(const DenseArray& a, const DenseArray& b);
void require_finite(const DenseArray& a, const std::string& what);

// Named collection of weight arrays. std::map keeps iteration order stable,
// which the deterministic-output contract relies on.
using ParamSet = std::map<std::string, DenseArray>;

void require_same_structure(const ParamSet& a, const ParamSet& b);
ParamSet zeros_like(const ParamSet& p);
double global_sqnorm(const ParamSet& p);
double layer_sqnorm(const DenseArray& a);

// y += alpha * x, elementwise over matching structures.
void add_scaled(ParamSet& y, double alpha, const ParamSet& x);

}  // namespace rflab
