#pragma once

// Dense rank-2 arrays with define-by-run reverse-mode differentiation.
//
// A Var is either a constant (no tape) or a node on a Tape. Every primitive
// checks shapes, computes its value eagerly and, when at least one input is
// on a tape, records a closure that pushes the output adjoint back to the
// inputs. Constants never touch a tape, so evaluation without gradients costs
// only the arithmetic.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdematch {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Matrix& a, const Matrix& b);
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

class Tape;

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value);
  static Var scalar(double v);
  static Var zeros(Index rows, Index cols);

  const Matrix& value() const { return *value_; }
  Index rows() const { return value_->rows(); }
  Index cols() const { return value_->cols(); }
  bool defined() const { return value_ != nullptr; }
  bool is_constant() const { return tape_ == nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  // Value of a 1x1 Var.
  double item() const;

 private:
  friend class Tape;
  std::shared_ptr<const Matrix> value_;
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(const Matrix& grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a trainable leaf; backward() reports gradients for leaves in
  // registration order.
  Var leaf(Matrix value);

  // Records an op. If every input is constant the result is a constant and
  // nothing is recorded.
  Var record(Matrix value, std::initializer_list<const Var*> inputs, Backward fn);
  Var record(Matrix value, std::span<const Var> inputs, Backward fn);

  // Adds an adjoint contribution to v. No-op for constants.
  void accumulate(const Var& v, const Matrix& grad);

  // Gradient of a scalar loss with respect to every registered leaf. Leaves
  // the loss does not depend on receive zero arrays.
  std::vector<Matrix> backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  std::size_t leaf_count() const { return leaves_.size(); }

 private:
  struct Node {
    Backward backward;
    Index rows;
    Index cols;
  };

  Var push(Matrix value, Backward fn);

  std::vector<Node> nodes_;
  std::vector<int> leaves_;
  std::vector<Matrix> grads_;
  bool in_backward_ = false;
};

// Resolves the tape shared by the given inputs (nullptr if all constant).
Tape* common_tape(std::initializer_list<const Var*> inputs);

// ---- primitives -----------------------------------------------------------
// Elementwise binary ops broadcast a dimension of extent 1 against the other
// operand (rank-2 only).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
// Row-wise sum: (B x n) -> (B x 1).
Var sum_cols(const Var& a);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Index begin, Index count);
Var gather_rows(const Var& a, std::span<const Index> rows);
Var repeat_rows(const Var& row, Index n);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, const Var& a) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }

// Overflow-safe log(1 + exp(x)) on plain arrays.
Matrix softplus_value(const Matrix& x);

}  // namespace sdematch
