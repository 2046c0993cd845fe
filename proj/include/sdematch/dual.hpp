#pragma once

// Forward-mode differentiation in a single direction.
//
// A Dual pairs a primal Var with its tangent Var. Both halves are ordinary
// Vars, so tangents computed here are themselves differentiable by the
// reverse-mode tape; this is how the time derivative of the posterior flow
// enters the training loss. An absent tangent means exactly zero and is
// skipped by every rule.

#include "sdematch/tensor.hpp"

#include <functional>
#include <optional>
#include <span>

namespace sdematch {

struct Dual {
  Var primal;
  std::optional<Var> tangent;

  Dual() = default;
  explicit Dual(Var p) : primal(std::move(p)) {}
  Dual(Var p, Var t);

  bool has_tangent() const { return tangent.has_value(); }
  // Tangent as an array, zero-filled when absent.
  Var tangent_or_zero() const;
  Index rows() const { return primal.rows(); }
  Index cols() const { return primal.cols(); }
};

Dual add(const Dual& a, const Dual& b);
Dual sub(const Dual& a, const Dual& b);
Dual mul(const Dual& a, const Dual& b);
Dual div(const Dual& a, const Dual& b);
Dual matmul(const Dual& a, const Var& w);
Dual neg(const Dual& a);
Dual scale(const Dual& a, double s);
Dual add_scalar(const Dual& a, double s);
Dual tanh(const Dual& a);
Dual sigmoid(const Dual& a);
Dual softplus(const Dual& a);
Dual exp(const Dual& a);
Dual log(const Dual& a);
Dual square(const Dual& a);
Dual sum_cols(const Dual& a);
Dual concat_cols(std::span<const Dual> parts);
Dual slice_cols(const Dual& a, Index begin, Index count);
Dual repeat_rows(const Dual& row, Index n);

// Mixed forms: a Var operand carries no tangent.
Dual add(const Dual& a, const Var& b);
Dual mul(const Dual& a, const Var& b);

inline Dual operator+(const Dual& a, const Dual& b) { return add(a, b); }
inline Dual operator-(const Dual& a, const Dual& b) { return sub(a, b); }
inline Dual operator*(const Dual& a, const Dual& b) { return mul(a, b); }
inline Dual operator/(const Dual& a, const Dual& b) { return div(a, b); }
inline Dual operator-(const Dual& a) { return neg(a); }
inline Dual operator*(double s, const Dual& a) { return scale(a, s); }
inline Dual operator+(const Dual& a, double s) { return add_scalar(a, s); }

// Evaluates f at t with unit tangent, returning f(t) and df/dt in one pass.
// t may be a column of times (B x 1); each row is differentiated against its
// own time.
Dual time_jvp(const std::function<Dual(const Dual&)>& f, const Var& t);

}  // namespace sdematch
