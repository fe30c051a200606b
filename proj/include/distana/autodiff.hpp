// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense tensors.
//
// A Var is an immutable tensor value, optionally recorded on a Tape. Ops
// whose operands live on a tape record a node on that same tape; ops on
// untaped constants just compute values, which is how inference runs.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "distana/tensor.hpp"

namespace distana {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool recorded() const { return tape_ != nullptr; }
  bool empty() const { return value_ == nullptr; }

 private:
  friend class Tape;
  friend Var constant(Tensor value);

  std::shared_ptr<const Tensor> value_;
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// An untaped value; gradients never flow into it.
Var constant(Tensor value);

class Tape {
 public:
  // Receives the output gradient; pushes contributions via accumulate().
  using Backprop = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value);

  /// Records an op result. Used by the primitives in ops.hpp.
  Var record(Tensor value, Backprop backprop);

  /// Runs the reverse sweep from a scalar recorded on this tape. Can be called
  /// once per tape; gradients of all nodes stay readable afterwards.
  void backward(const Var& loss);

  /// Gradient of the loss wrt `v`; zeros if `v` did not influence the loss.
  Tensor grad(const Var& v) const;

  /// Add-only accumulation into the gradient of a node on this tape.
  void accumulate(const Var& v, const Tensor& contribution);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<const Tensor> value;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool swept_ = false;
};

// ---------------------------------------------------------------------------
// Primitives. Each output is checked for finiteness (NumericError otherwise).

enum class ElementwiseOp { Add, Sub, Mul, Sigmoid, Tanh };

/// Binary ops accept same-shape operands or a one-element operand on either side.
Var elementwise(ElementwiseOp op, const Var& a, const Var& b);
Var elementwise(ElementwiseOp op, const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var scale(const Var& a, double factor);

Var matmul(const Var& a, const Var& b);

/// m×n plus a length-n row (bias) added to every row.
Var add_row(const Var& m, const Var& row);

Var slice_cols(const Var& m, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);

/// Sparse linear gather: out[i] = sum of in[j] over the sources of i.
/// Indices are flat row-major offsets.
struct GatherMap {
  Shape in_shape;
  Shape out_shape;
  std::vector<std::size_t> offsets;  // CSR row pointer, size(out)+1
  std::vector<std::size_t> sources;
};
Var gather_sum(const Var& in, std::shared_ptr<const GatherMap> map);

Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& pred, const Var& target);

/// Identity in the forward pass, gradient multiplied by `factor` on the way back.
Var scale_gradient(const Var& a, double factor);

// ---------------------------------------------------------------------------

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_leaf;  // worst error per leaf
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
};

using LossFn = std::function<Var(std::span<const Var>)>;

/// Compares tape gradients against fourth-order central differences of `f`
/// at `points`. Relative error per coordinate: |a - n| / max(f, |a| + |n|)
/// with f = 1e-6 · max |a| over all coordinates (at least 1e-12).
GradcheckReport gradcheck(const LossFn& f, std::span<const Tensor> points, double eps = 1e-4);
double gradcheck(const std::function<Var(const Var&)>& f, const Tensor& point, double eps = 1e-4);

}  // namespace distana
