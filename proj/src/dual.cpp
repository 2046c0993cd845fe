#include "sdematch/dual.hpp"

#include <vector>

namespace sdematch {

namespace {

// Forces a tangent to the primal's shape after a broadcasting op.
Var fit(const Var& tangent, Index rows, Index cols) {
  if (tangent.rows() == rows && tangent.cols() == cols) return tangent;
  return add(tangent, Var::zeros(rows, cols));
}

Dual make(Var primal, std::optional<Var> tangent) {
  Dual d(std::move(primal));
  if (tangent) d.tangent = fit(*tangent, d.primal.rows(), d.primal.cols());
  return d;
}

std::optional<Var> sum_opt(const std::optional<Var>& a, const std::optional<Var>& b) {
  if (a && b) return add(*a, *b);
  if (a) return a;
  return b;
}

}  // namespace

Dual::Dual(Var p, Var t) : primal(std::move(p)), tangent(std::move(t)) {
  if (tangent->rows() != primal.rows() || tangent->cols() != primal.cols()) {
    throw ShapeError("Dual", primal.value(), tangent->value());
  }
}

Var Dual::tangent_or_zero() const {
  return tangent ? *tangent : Var::zeros(primal.rows(), primal.cols());
}

Dual add(const Dual& a, const Dual& b) {
  return make(add(a.primal, b.primal), sum_opt(a.tangent, b.tangent));
}

Dual sub(const Dual& a, const Dual& b) {
  std::optional<Var> t;
  if (a.tangent && b.tangent) {
    t = sub(*a.tangent, *b.tangent);
  } else if (a.tangent) {
    t = a.tangent;
  } else if (b.tangent) {
    t = neg(*b.tangent);
  }
  return make(sub(a.primal, b.primal), t);
}

Dual mul(const Dual& a, const Dual& b) {
  std::optional<Var> t;
  if (a.tangent) t = mul(*a.tangent, b.primal);
  if (b.tangent) t = sum_opt(t, mul(a.primal, *b.tangent));
  return make(mul(a.primal, b.primal), t);
}

Dual div(const Dual& a, const Dual& b) {
  Var out = div(a.primal, b.primal);
  std::optional<Var> t;
  if (a.tangent) t = div(*a.tangent, b.primal);
  if (b.tangent) t = sum_opt(t, neg(div(mul(out, *b.tangent), b.primal)));
  return make(std::move(out), t);
}

Dual matmul(const Dual& a, const Var& w) {
  std::optional<Var> t;
  if (a.tangent) t = matmul(*a.tangent, w);
  return make(matmul(a.primal, w), t);
}

Dual neg(const Dual& a) {
  std::optional<Var> t;
  if (a.tangent) t = neg(*a.tangent);
  return make(neg(a.primal), t);
}

Dual scale(const Dual& a, double s) {
  std::optional<Var> t;
  if (a.tangent) t = scale(*a.tangent, s);
  return make(scale(a.primal, s), t);
}

Dual add_scalar(const Dual& a, double s) { return make(add_scalar(a.primal, s), a.tangent); }

Dual tanh(const Dual& a) {
  Var y = tanh(a.primal);
  std::optional<Var> t;
  if (a.tangent) t = mul(*a.tangent, add_scalar(neg(square(y)), 1.0));
  return make(std::move(y), t);
}

Dual sigmoid(const Dual& a) {
  Var s = sigmoid(a.primal);
  std::optional<Var> t;
  if (a.tangent) t = mul(*a.tangent, mul(s, add_scalar(neg(s), 1.0)));
  return make(std::move(s), t);
}

Dual softplus(const Dual& a) {
  std::optional<Var> t;
  if (a.tangent) t = mul(*a.tangent, sigmoid(a.primal));
  return make(softplus(a.primal), t);
}

Dual exp(const Dual& a) {
  Var y = exp(a.primal);
  std::optional<Var> t;
  if (a.tangent) t = mul(*a.tangent, y);
  return make(std::move(y), t);
}

Dual log(const Dual& a) {
  std::optional<Var> t;
  if (a.tangent) t = div(*a.tangent, a.primal);
  return make(log(a.primal), t);
}

Dual square(const Dual& a) {
  std::optional<Var> t;
  if (a.tangent) t = scale(mul(a.primal, *a.tangent), 2.0);
  return make(square(a.primal), t);
}

Dual sum_cols(const Dual& a) {
  std::optional<Var> t;
  if (a.tangent) t = sum_cols(*a.tangent);
  return make(sum_cols(a.primal), t);
}

Dual concat_cols(std::span<const Dual> parts) {
  std::vector<Var> primals;
  primals.reserve(parts.size());
  bool any_tangent = false;
  for (const Dual& p : parts) {
    primals.push_back(p.primal);
    any_tangent = any_tangent || p.has_tangent();
  }
  Var primal = concat_cols(primals);
  if (!any_tangent) return Dual(std::move(primal));
  std::vector<Var> tangents;
  tangents.reserve(parts.size());
  for (const Dual& p : parts) tangents.push_back(p.tangent_or_zero());
  return Dual(std::move(primal), concat_cols(tangents));
}

Dual slice_cols(const Dual& a, Index begin, Index count) {
  std::optional<Var> t;
  if (a.tangent) t = slice_cols(*a.tangent, begin, count);
  return make(slice_cols(a.primal, begin, count), t);
}

Dual repeat_rows(const Dual& row, Index n) {
  std::optional<Var> t;
  if (row.tangent) t = repeat_rows(*row.tangent, n);
  return make(repeat_rows(row.primal, n), t);
}

Dual add(const Dual& a, const Var& b) { return make(add(a.primal, b), a.tangent); }

Dual mul(const Dual& a, const Var& b) {
  std::optional<Var> t;
  if (a.tangent) t = mul(*a.tangent, b);
  return make(mul(a.primal, b), t);
}

Dual time_jvp(const std::function<Dual(const Dual&)>& f, const Var& t) {
  return f(Dual(t, Var(Matrix::Ones(t.rows(), t.cols()))));
}

}  // namespace sdematch
