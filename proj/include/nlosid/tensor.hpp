#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "nlosid/error.hpp"

namespace nlosid::ann {

/// Dense row-major array of 64-bit reals.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), values(count(shape), 0.0) {}
  Tensor(std::vector<std::size_t> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != count(shape))
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_string(shape));
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor&) const = default;
};

// Fixed-order kernels. The four-way split in `dot` is part of the numeric
// contract: changing it changes every trained network bit-for-bit.

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace nlosid::ann
