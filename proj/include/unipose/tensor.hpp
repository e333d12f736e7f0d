#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "unipose/errors.hpp"

namespace unipose::diff {

// Dense row-major float64 tensor. Values are checked finite after every
// graph operation; NaN/Inf raises NonFiniteValue.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::initializer_list<int64_t> s) : shape(s) { data.assign(numel_of(shape), 0.0); }
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int64_t rows() const { return shape.at(0); }
  int64_t cols() const { return shape.at(1); }

  double& at(int64_t i, int64_t j) { return data[i * shape[1] + j]; }
  double at(int64_t i, int64_t j) const { return data[i * shape[1] + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }
  static Tensor from_rows(int64_t r, int64_t c, std::vector<double> values) {
    Tensor t({r, c});
    if (static_cast<int64_t>(values.size()) != r * c)
      throw ShapeMismatch("from_rows: value count does not match shape");
    t.data = std::move(values);
    return t;
  }
};

std::string shape_str(const std::vector<int64_t>& s);
void check_finite(const Tensor& t, const char* where);

}  // namespace unipose::diff
