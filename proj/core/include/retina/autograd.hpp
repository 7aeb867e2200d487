#pragma once

// Reverse-mode differentiation over a linear tape. Every op computes its value
// eagerly and records a closure that maps the output gradient onto its inputs.
// Ops are fused at the granularity the model needs (attention, layer norm,
// margin loss) with hand-derived backward passes; grad_check verifies them.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "retina/tensor.hpp"

namespace retina::ag {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter; backward() accumulates into leaf.grad. The
  /// value is read in place, so leaf.value must not change while the tape is used.
  Var param(ParamLeaf& leaf);

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.bound ? *n.bound : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor& grad(std::size_t id);

  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);

  /// Seeds d(output)/d(output) = 1 for a single-element output and propagates.
  void backward(Var output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* bound = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    ParamLeaf* leaf = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// --- elementwise and linear ------------------------------------------------
Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a [1×n] (or [n]) row to every row of a [m×n] matrix.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var gelu(Var a);
Var sigmoid(Var a);
/// Multiplies row r of `a` by the constant factor `factors[r]`.
Var scale_rows(Var a, std::span<const double> factors);

// --- structural --------------------------------------------------------------
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var a, Shape shape);

// --- normalisation -----------------------------------------------------------
Var layer_norm(Var x, Var gain, Var shift, double eps);
Var l2_normalize_rows(Var a, double eps = 1e-12);

// --- reductions --------------------------------------------------------------
Var sum(Var a);
Var sum_squares(Var a);

// --- activation helpers shared with the pure paths ---------------------------
double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace retina::ag
