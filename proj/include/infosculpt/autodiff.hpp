#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records nodes in creation order; creation order is a topological
// order, so backward() simply walks the tape in reverse. Leaf gradients
// accumulate across backward() calls until zero_grad(); intermediate
// gradients are reset at the start of every pass.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "infosculpt/matrix.hpp"

namespace infosculpt {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Everything a backward rule may read or write.
class BackwardContext {
 public:
  BackwardContext(const Tape& tape, std::size_t self, std::vector<Matrix*> parent_grads)
      : tape_(tape), self_(self), parent_grads_(std::move(parent_grads)) {}

  const Matrix& grad_out() const;
  const Matrix& out() const;
  const Matrix& input(std::size_t i) const;
  /// Gradient accumulator of parent i, or nullptr when that parent does not
  /// require a gradient.
  Matrix* input_grad(std::size_t i) const { return parent_grads_[i]; }
  std::size_t num_inputs() const noexcept { return parent_grads_.size(); }

 private:
  const Tape& tape_;
  std::size_t self_;
  std::vector<Matrix*> parent_grads_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

struct Node {
  std::string op;
  Matrix value;
  Matrix grad;  // allocated only when requires_grad
  std::vector<std::size_t> parents;
  BackwardFn backward;  // empty for leaves and detached nodes
  bool requires_grad = false;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Differentiable leaf (parameters, inputs under gradient check).
  Var parameter(Matrix value);
  /// Non-differentiable leaf.
  Var constant(Matrix value);
  /// Records an operator node. `backward` may be empty when no parent
  /// requires a gradient.
  Var record(std::string_view op, Matrix value, std::vector<Var> parents, BackwardFn backward);

  /// Accumulates d(root)/d(leaf) into every differentiable leaf reachable
  /// from `root`. Throws ContractError unless root is 1x1.
  void backward(Var root);
  void zero_grad();

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  Node& node(std::size_t id) { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

namespace ad {

// Linear algebra.
Var matmul(Var a, Var b);
Var transpose(Var a);

// Elementwise; `b` may also be a 1 x cols row vector broadcast to every row.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Hadamard product; shapes must match exactly.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var log(Var a);
Var exp(Var a);
Var relu(Var a);
/// x * log(x) with 0 * log(0) := 0. Entries must be nonnegative.
Var xlogx(Var a);

// Row-wise operators.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// n x m -> n x 1 log-sum-exp, stable under large entries.
Var logsumexp_rows(Var a);
/// Each row scaled to unit Euclidean norm. Zero rows are a DomainError that
/// names the row index.
Var l2_normalize_rows(Var a);

// Reductions.
Var sum_rows(Var a);   // n x m -> n x 1
Var mean_rows(Var a);  // n x m -> n x 1
Var mean_cols(Var a);  // n x m -> 1 x m
Var sum(Var a);        // -> 1 x 1
Var mean(Var a);       // -> 1 x 1

// Structural.
Var concat_rows(std::span<const Var> parts);
Var concat_rows(Var a, Var b);
Var select_rows(Var a, std::span<const std::size_t> rows);
/// Stop-gradient: same value, no path back to `a`.
Var detach(Var a);

}  // namespace ad

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(double s, Var a) { return ad::scale(a, s); }
inline Var operator*(Var a, double s) { return ad::scale(a, s); }
inline Var operator-(Var a) { return ad::neg(a); }

}  // namespace infosculpt
