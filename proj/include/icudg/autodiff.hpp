#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records nodes in creation order, so parents always precede children
// and backward() is a single reverse sweep. Gradients accumulate, which makes
// reuse of a node in several places correct by construction. Tapes are
// single-threaded; independent tapes on different threads do not interact.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "icudg/matrix.hpp"

namespace icudg::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double item() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Backward rule: reads grad(self) and accumulates into the parents' grads.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient (a parameter).
  Var variable(Matrix value);
  /// Leaf that never receives a gradient.
  Var constant(Matrix value);

  /// Reverse sweep from a 1x1 loss node.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient of a node; a zero matrix when nothing flowed into it.
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  // Interface for operation implementations.
  Var record(const char* op, Matrix value, std::vector<std::size_t> parents, BackwardFn backward);
  Matrix& grad_ref(std::size_t id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    const char* op = "leaf";
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var make(Node node);

  std::vector<Node> nodes_;
  mutable Matrix empty_grad_scratch_;
};

// ---- primitives ----------------------------------------------------------
// Binary elementwise ops broadcast the right operand: its rows may be 1 or
// a.rows(), its cols 1 or a.cols().

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);
Var relu(Var a);

/// Sum of all elements (1x1).
Var sum(Var a);
/// Mean of all elements (1x1).
Var mean(Var a);
/// Column sums (1 x cols).
Var sum_rows(Var a);
/// Column means (1 x cols).
Var mean_rows(Var a);
/// Per-column variance across rows with divisor rows - ddof (1 x cols).
Var variance_rows(Var a, std::size_t ddof);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Rows of `a` selected by index, in the given order; repeats allowed.
Var gather_rows(Var a, std::vector<std::size_t> rows);
Var transpose(Var a);

/// Elementwise binary cross-entropy on logits, numerically stable form
/// max(l,0) - l*y + log(1 + exp(-|l|)); targets are constants.
Var bce_with_logits(Var logits, const Matrix& targets);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace icudg::ad
