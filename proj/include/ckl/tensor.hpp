#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ckl/common.hpp"

namespace ckl {

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense float32 tensor, row-major. Gradient storage sits beside the data and
// is allocated lazily; backward accumulates into it additively.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until ensure_grad()

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    int64_t n = shape_numel(shape);
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(n), 0.0f);
    return t;
  }

  static Tensor full(std::vector<int> shape, float value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<float> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError("value count does not match shape " + shape_str(shape));
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  bool has_grad() const { return !grad.empty(); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

}  // namespace ckl
