#include "rflab/array.hpp"

#include <cmath>
#include <stdexcept>

namespace rflab {

DenseArray DenseArray::zeros(std::vector<std::size_t> shape) {
  if (shape.empty()) throw std::invalid_argument("DenseArray: empty shape");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("DenseArray: zero dimension");
    n *= d;
  }
  DenseArray a;
  a.shape = std::move(shape);
  a.data.assign(n, 0.0);
  return a;
}

DenseArray DenseArray::from(std::vector<std::size_t> shape, std::vector<double> values) {
  DenseArray a = zeros(std::move(shape));
  if (values.size() != a.data.size())
    throw std::invalid_argument("DenseArray: value count does not match shape");
  a.data = std::move(values);
  return a;
}

std::size_t DenseArray::numel() const { return data.size(); }

std::size_t DenseArray::rows() const {
  if (shape.empty()) throw std::invalid_argument("DenseArray: empty shape");
  return shape[0];
}

std::size_t DenseArray::cols() const {
  if (shape.size() < 2) throw std::invalid_argument("DenseArray: rank < 2 has no cols");
  return shape[1];
}

bool same_shape(const DenseArray& a, const DenseArray& b) { return a.shape == b.shape; }

void require_finite(const DenseArray& a, const std::string& what) {
  for (double x : a.data)
    if (!std::isfinite(x)) throw std::invalid_argument(what + ": non-finite entry");
}

void require_same_structure(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) throw std::invalid_argument("ParamSet: layer count mismatch");
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first)
      throw std::invalid_argument("ParamSet: layer name mismatch: " + ia->first + " vs " + ib->first);
    if (!same_shape(ia->second, ib->second))
      throw std::invalid_argument("ParamSet: shape mismatch in layer " + ia->first);
  }
}

ParamSet zeros_like(const ParamSet& p) {
  ParamSet out;
  for (const auto& [name, arr] : p) out[name] = DenseArray::zeros(arr.shape);
  return out;
}

double layer_sqnorm(const DenseArray& a) {
  double s = 0.0;
  for (double x : a.data) s += x * x;
  return s;
}

double global_sqnorm(const ParamSet& p) {
  double s = 0.0;
  for (const auto& [name, arr] : p) s += layer_sqnorm(arr);
  return s;
}

void add_scaled(ParamSet& y, double alpha, const ParamSet& x) {
  require_same_structure(y, x);
  auto iy = y.begin();
  auto ix = x.begin();
  for (; iy != y.end(); ++iy, ++ix)
    for (std::size_t i = 0; i < iy->second.data.size(); ++i)
      iy->second.data[i] += alpha * ix->second.data[i];
}

}  // namespace rflab
