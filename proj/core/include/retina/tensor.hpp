#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace retina {

/// Raised when operand shapes are incompatible. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major double tensor. Value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// 2-D convenience constructor, values given row by row.
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor row(std::span<const double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view helpers; valid for rank-2 tensors.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t a, std::size_t b, std::size_t c) {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  double at(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Learnable parameter: value plus accumulated gradient of identical shape.
struct ParamLeaf {
  std::string name;
  Tensor value;
  Tensor grad;

  ParamLeaf() = default;
  ParamLeaf(std::string leaf_name, Tensor initial);

  void zero_grad();
};

// ---------------------------------------------------------------------------
// Pure numeric primitives.

/// Standard product; each output entry sums over k in ascending order.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// aᵀ · b without materialising the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Row-wise softmax over the last axis after adding `bias`. The bias is either
/// empty (no bias), the same shape as `logits`, or a vector broadcast along rows.
/// Entries of -inf in the bias exclude that column.
Tensor softmax_with_bias(const Tensor& logits, const Tensor& bias = {});

/// Per-row normalisation over the last axis followed by `gain * x + shift`.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps);

/// Samples a [C×H×W] field at normalised points [N×2] given as (x, y) in [0,1].
/// Coordinates map to u·(W−1), v·(H−1); out-of-range inputs are clamped.
Tensor bilinear_sample(const Tensor& field, const Tensor& points);

/// Bilinear resize of a [C×H×W] image with aligned end points.
Tensor resize_bilinear(const Tensor& image, std::size_t target_h, std::size_t target_w);

}  // namespace retina
