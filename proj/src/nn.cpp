#include "sdematch/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace sdematch {

std::size_t ParameterSet::add(std::string name, Matrix init) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const Matrix& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

Binding::Binding(const ParameterSet& params, Tape* tape) {
  vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars_.push_back(tape != nullptr ? tape->leaf(params.value(i)) : Var(params.value(i)));
  }
}

namespace {

Matrix uniform_init(Index rows, Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = bound * (2.0 * rng.uniform() - 1.0);
  }
  return m;
}

}  // namespace

Mlp::Mlp(ParameterSet& params, const std::string& prefix, const std::vector<Index>& sizes,
         Rng& rng, bool zero_last) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  in_ = sizes.front();
  out_ = sizes.back();
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[i]));
    const bool last = i + 2 == sizes.size();
    Matrix w = uniform_init(sizes[i], sizes[i + 1], bound, rng);
    Matrix b = uniform_init(1, sizes[i + 1], bound, rng);
    if (last && zero_last) {
      w.setZero();
      b.setZero();
    }
    const std::string tag = prefix + "." + std::to_string(i);
    layers_.push_back({params.add(tag + ".weight", std::move(w)),
                       params.add(tag + ".bias", std::move(b))});
  }
}

GruCell::GruCell(ParameterSet& params, const std::string& prefix, Index input, Index hidden,
                 Rng& rng)
    : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih_ = params.add(prefix + ".w_ih", uniform_init(input, 3 * hidden, bound, rng));
  w_hh_ = params.add(prefix + ".w_hh", uniform_init(hidden, 3 * hidden, bound, rng));
  b_ih_ = params.add(prefix + ".b_ih", uniform_init(1, 3 * hidden, bound, rng));
  b_hh_ = params.add(prefix + ".b_hh", uniform_init(1, 3 * hidden, bound, rng));
}

Var GruCell::step(const Binding& b, const Var& x, const Var& h) const {
  const Var gi = add(matmul(x, b[w_ih_]), b[b_ih_]);
  const Var gh = add(matmul(h, b[w_hh_]), b[b_hh_]);
  const Index n = hidden_;
  const Var r = sigmoid(add(slice_cols(gi, 0, n), slice_cols(gh, 0, n)));
  const Var z = sigmoid(add(slice_cols(gi, n, n), slice_cols(gh, n, n)));
  const Var cand = tanh(add(slice_cols(gi, 2 * n, n), mul(r, slice_cols(gh, 2 * n, n))));
  return add(cand, mul(z, sub(h, cand)));
}

void Adam::step(const std::vector<ParameterSet*>& sets, const std::vector<Matrix>& grads) {
  std::size_t total = 0;
  for (const ParameterSet* s : sets) total += s->size();
  if (total != grads.size()) {
    throw std::invalid_argument("Adam::step: " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(total) + " parameters");
  }
  if (m_.empty()) {
    for (const Matrix& g : grads) {
      m_.push_back(Matrix::Zero(g.rows(), g.cols()));
      v_.push_back(Matrix::Zero(g.rows(), g.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::size_t k = 0;
  for (ParameterSet* s : sets) {
    for (std::size_t i = 0; i < s->size(); ++i, ++k) {
      const Matrix& g = grads[k];
      m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * g;
      v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * g.cwiseProduct(g);
      const Matrix update =
          (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + config_.eps);
      s->value(i) -= config_.lr * update;
    }
  }
}

double grad_norm(const std::vector<Matrix>& grads) {
  double sq = 0.0;
  for (const Matrix& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

}  // namespace sdematch
