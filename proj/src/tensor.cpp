#include "sdematch/tensor.hpp"

#include <cmath>
#include <sstream>

namespace sdematch {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

struct Shape {
  Index rows;
  Index cols;
};

Shape broadcast_shape(const char* op, const Matrix& a, const Matrix& b) {
  auto dim = [&](Index x, Index y) -> Index {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw ShapeError(op, a, b);
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

Matrix expand(const Matrix& m, Shape s) {
  if (m.rows() == s.rows && m.cols() == s.cols) return m;
  return m.replicate(s.rows / m.rows(), s.cols / m.cols());
}

// Sums an adjoint over the dimensions an input was broadcast along.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix out = g;
  if (rows == 1 && out.rows() != 1) out = out.colwise().sum().eval();
  if (cols == 1 && out.cols() != 1) out = out.rowwise().sum().eval();
  return out;
}

}  // namespace

ShapeError::ShapeError(const std::string& op, const Matrix& a, const Matrix& b)
    : std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                            shape_str(b)) {}

Var::Var(Matrix value) : value_(std::make_shared<const Matrix>(std::move(value))) {}

Var Var::scalar(double v) { return Var(Matrix::Constant(1, 1, v)); }

Var Var::zeros(Index rows, Index cols) { return Var(Matrix::Zero(rows, cols)); }

double Var::item() const {
  if (rows() != 1 || cols() != 1) {
    throw ShapeError("item() requires a 1x1 value, got " + shape_str(value()));
  }
  return (*value_)(0, 0);
}

Var Tape::push(Matrix value, Backward fn) {
  Var v(std::move(value));
  v.tape_ = this;
  v.id_ = static_cast<int>(nodes_.size());
  nodes_.push_back({std::move(fn), v.rows(), v.cols()});
  return v;
}

Var Tape::leaf(Matrix value) {
  Var v = push(std::move(value), nullptr);
  leaves_.push_back(v.id_);
  return v;
}

Tape* common_tape(std::initializer_list<const Var*> inputs) {
  Tape* tape = nullptr;
  for (const Var* in : inputs) {
    if (in->tape() == nullptr) continue;
    if (tape != nullptr && tape != in->tape()) {
      throw std::logic_error("operands recorded on different tapes");
    }
    tape = in->tape();
  }
  return tape;
}

Var Tape::record(Matrix value, std::initializer_list<const Var*> inputs, Backward fn) {
  Tape* tape = common_tape(inputs);
  if (tape == nullptr) return Var(std::move(value));
  if (tape != this) throw std::logic_error("record() called on a foreign tape");
  return push(std::move(value), std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward fn) {
  bool any = false;
  for (const Var& in : inputs) {
    if (in.tape() == nullptr) continue;
    if (in.tape() != this) throw std::logic_error("operands recorded on different tapes");
    any = true;
  }
  if (!any) return Var(std::move(value));
  return push(std::move(value), std::move(fn));
}

void Tape::accumulate(const Var& v, const Matrix& grad) {
  if (v.tape_ == nullptr) return;
  Matrix& slot = grads_[static_cast<std::size_t>(v.id_)];
  if (slot.size() == 0) {
    slot = grad;
  } else {
    slot += grad;
  }
}

std::vector<Matrix> Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " + shape_str(loss.value()));
  }
  if (in_backward_) throw std::logic_error("re-entrant backward()");
  std::vector<Matrix> out;
  out.reserve(leaves_.size());
  if (loss.tape() == nullptr) {
    for (int id : leaves_) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      out.push_back(Matrix::Zero(n.rows, n.cols));
    }
    return out;
  }
  if (loss.tape() != this) throw std::logic_error("loss recorded on a different tape");

  in_backward_ = true;
  grads_.assign(nodes_.size(), Matrix());
  grads_[static_cast<std::size_t>(loss.id())] = Matrix::Ones(1, 1);
  for (int i = loss.id(); i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    if (grads_[idx].size() == 0 || !nodes_[idx].backward) continue;
    nodes_[idx].backward(grads_[idx], *this);
  }
  for (int id : leaves_) {
    const auto idx = static_cast<std::size_t>(id);
    if (grads_[idx].size() == 0) {
      out.push_back(Matrix::Zero(nodes_[idx].rows, nodes_[idx].cols));
    } else {
      out.push_back(std::move(grads_[idx]));
    }
  }
  grads_.clear();
  in_backward_ = false;
  return out;
}

// ---- primitives -----------------------------------------------------------

namespace {

template <typename ValueFn>
Var unary(const Var& a, ValueFn&& value, Tape::Backward fn) {
  Tape* tape = a.tape();
  Matrix v = value(a.value());
  if (tape == nullptr) return Var(std::move(v));
  return tape->record(std::move(v), {&a}, std::move(fn));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  const Shape s = broadcast_shape("add", a.value(), b.value());
  Matrix v = expand(a.value(), s) + expand(b.value(), s);
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Var(std::move(v));
  return tape->record(std::move(v), {&a, &b}, [a, b](const Matrix& g, Tape& t) {
    t.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    t.accumulate(b, reduce_to(g, b.rows(), b.cols()));
  });
}

Var sub(const Var& a, const Var& b) {
  const Shape s = broadcast_shape("sub", a.value(), b.value());
  Matrix v = expand(a.value(), s) - expand(b.value(), s);
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Var(std::move(v));
  return tape->record(std::move(v), {&a, &b}, [a, b](const Matrix& g, Tape& t) {
    t.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    t.accumulate(b, reduce_to(-g, b.rows(), b.cols()));
  });
}

Var mul(const Var& a, const Var& b) {
  const Shape s = broadcast_shape("mul", a.value(), b.value());
  Matrix v = expand(a.value(), s).cwiseProduct(expand(b.value(), s));
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Var(std::move(v));
  return tape->record(std::move(v), {&a, &b}, [a, b, s](const Matrix& g, Tape& t) {
    if (!a.is_constant()) {
      t.accumulate(a, reduce_to(g.cwiseProduct(expand(b.value(), s)), a.rows(), a.cols()));
    }
    if (!b.is_constant()) {
      t.accumulate(b, reduce_to(g.cwiseProduct(expand(a.value(), s)), b.rows(), b.cols()));
    }
  });
}

Var div(const Var& a, const Var& b) {
  const Shape s = broadcast_shape("div", a.value(), b.value());
  Matrix v = expand(a.value(), s).cwiseQuotient(expand(b.value(), s));
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Var(std::move(v));
  auto out = std::make_shared<const Matrix>(v);
  return tape->record(std::move(v), {&a, &b}, [a, b, s, out](const Matrix& g, Tape& t) {
    const Matrix bb = expand(b.value(), s);
    if (!a.is_constant()) t.accumulate(a, reduce_to(g.cwiseQuotient(bb), a.rows(), a.cols()));
    if (!b.is_constant()) {
      const Matrix gb = -g.cwiseProduct(*out).cwiseQuotient(bb);
      t.accumulate(b, reduce_to(gb, b.rows(), b.cols()));
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul", a.value(), b.value());
  Matrix v = a.value() * b.value();
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Var(std::move(v));
  return tape->record(std::move(v), {&a, &b}, [a, b](const Matrix& g, Tape& t) {
    if (!a.is_constant()) t.accumulate(a, g * b.value().transpose());
    if (!b.is_constant()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var neg(const Var& a) {
  return unary(a, [](const Matrix& x) { return Matrix(-x); },
               [a](const Matrix& g, Tape& t) { t.accumulate(a, -g); });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](const Matrix& x) { return Matrix(s * x); },
               [a, s](const Matrix& g, Tape& t) { t.accumulate(a, s * g); });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](const Matrix& x) { return Matrix(x.array() + s); },
               [a](const Matrix& g, Tape& t) { t.accumulate(a, g); });
}

Var tanh(const Var& a) {
  Matrix v = a.value().array().tanh();
  if (a.is_constant()) return Var(std::move(v));
  auto out = std::make_shared<const Matrix>(v);
  return a.tape()->record(std::move(v), {&a}, [a, out](const Matrix& g, Tape& t) {
    t.accumulate(a, g.array() * (1.0 - out->array().square()));
  });
}

Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  if (a.is_constant()) return Var(std::move(v));
  auto out = std::make_shared<const Matrix>(v);
  return a.tape()->record(std::move(v), {&a}, [a, out](const Matrix& g, Tape& t) {
    t.accumulate(a, g.array() * out->array() * (1.0 - out->array()));
  });
}

Matrix softplus_value(const Matrix& x) {
  return x.unaryExpr([](double v) {
    return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  });
}

Var softplus(const Var& a) {
  return unary(a, softplus_value, [a](const Matrix& g, Tape& t) {
    const Matrix sig = a.value().unaryExpr([](double x) {
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    });
    t.accumulate(a, g.cwiseProduct(sig));
  });
}

Var exp(const Var& a) {
  Matrix v = a.value().array().exp();
  if (a.is_constant()) return Var(std::move(v));
  auto out = std::make_shared<const Matrix>(v);
  return a.tape()->record(std::move(v), {&a}, [a, out](const Matrix& g, Tape& t) {
    t.accumulate(a, g.cwiseProduct(*out));
  });
}

Var log(const Var& a) {
  return unary(a, [](const Matrix& x) { return Matrix(x.array().log()); },
               [a](const Matrix& g, Tape& t) { t.accumulate(a, g.cwiseQuotient(a.value())); });
}

Var square(const Var& a) {
  return unary(a, [](const Matrix& x) { return Matrix(x.array().square()); },
               [a](const Matrix& g, Tape& t) {
                 t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
               });
}

Var sum(const Var& a) {
  return unary(a, [](const Matrix& x) { return Matrix::Constant(1, 1, x.sum()); },
               [a](const Matrix& g, Tape& t) {
                 t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
               });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return unary(a, [n](const Matrix& x) { return Matrix::Constant(1, 1, x.sum() / n); },
               [a, n](const Matrix& g, Tape& t) {
                 t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
               });
}

Var sum_cols(const Var& a) {
  return unary(a, [](const Matrix& x) { return Matrix(x.rowwise().sum()); },
               [a](const Matrix& g, Tape& t) { t.accumulate(a, g.replicate(1, a.cols())); });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Tape* tape = nullptr;
  for (const Var& p : parts) {
    if (p.tape() != nullptr) tape = p.tape();
  }
  if (tape == nullptr) return Var(std::move(v));
  std::vector<Var> ins(parts.begin(), parts.end());
  return tape->record(std::move(v), parts, [ins](const Matrix& g, Tape& t) {
    Index off = 0;
    for (const Var& p : ins) {
      if (!p.is_constant()) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix v(rows, cols);
  Index at = 0;
  Tape* tape = nullptr;
  for (const Var& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    if (p.tape() != nullptr) tape = p.tape();
  }
  if (tape == nullptr) return Var(std::move(v));
  std::vector<Var> ins(parts.begin(), parts.end());
  return tape->record(std::move(v), parts, [ins](const Matrix& g, Tape& t) {
    Index off = 0;
    for (const Var& p : ins) {
      if (!p.is_constant()) t.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var slice_cols(const Var& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    std::ostringstream os;
    os << "slice_cols: range [" << begin << ", " << begin + count << ") outside "
       << shape_str(a.value());
    throw ShapeError(os.str());
  }
  return unary(a, [=](const Matrix& x) { return Matrix(x.middleCols(begin, count)); },
               [a, begin, count](const Matrix& g, Tape& t) {
                 Matrix full = Matrix::Zero(a.rows(), a.cols());
                 full.middleCols(begin, count) = g;
                 t.accumulate(a, full);
               });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  for (Index r : rows) {
    if (r < 0 || r >= a.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(r) + " outside " +
                       shape_str(a.value()));
    }
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  Matrix v(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) v.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  if (a.is_constant()) return Var(std::move(v));
  return a.tape()->record(std::move(v), {&a}, [a, idx](const Matrix& g, Tape& t) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(a, full);
  });
}

Var repeat_rows(const Var& row, Index n) {
  if (row.rows() != 1) {
    throw ShapeError("repeat_rows expects a single row, got " + shape_str(row.value()));
  }
  return unary(row, [n](const Matrix& x) { return Matrix(x.replicate(n, 1)); },
               [row](const Matrix& g, Tape& t) { t.accumulate(row, g.colwise().sum()); });
}

}  // namespace sdematch
