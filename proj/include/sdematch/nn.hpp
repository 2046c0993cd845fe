#pragma once

// Named parameter storage, tape binding, and the small network blocks used by
// the prior and posterior: tanh MLPs, a GRU cell, and Adam.

#include "sdematch/dual.hpp"
#include "sdematch/rng.hpp"
#include "sdematch/tensor.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace sdematch {

class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix init);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Matrix& value(std::size_t i) const { return values_.at(i); }
  Matrix& value(std::size_t i) { return values_.at(i); }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

// Parameters materialized as Vars: leaves on a tape, or constants when no tape
// is given (evaluation only).
class Binding {
 public:
  Binding() = default;
  Binding(const ParameterSet& params, Tape* tape);

  const Var& operator[](std::size_t i) const { return vars_.at(i); }
  std::size_t size() const { return vars_.size(); }

 private:
  std::vector<Var> vars_;
};

class Mlp {
 public:
  Mlp() = default;
  // sizes = {in, hidden..., out}; weights and biases uniform in
  // +-1/sqrt(fan_in). zero_last zeroes the output layer.
  Mlp(ParameterSet& params, const std::string& prefix, const std::vector<Index>& sizes, Rng& rng,
      bool zero_last = false);

  template <typename T>
  T forward(const Binding& b, const T& x) const {
    T h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = add(matmul(h, b[layers_[i].weight]), b[layers_[i].bias]);
      if (i + 1 < layers_.size()) h = tanh(h);
    }
    return h;
  }

  Index in_dim() const { return in_; }
  Index out_dim() const { return out_; }

 private:
  struct Layer {
    std::size_t weight;
    std::size_t bias;
  };
  std::vector<Layer> layers_;
  Index in_ = 0;
  Index out_ = 0;
};

class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterSet& params, const std::string& prefix, Index input, Index hidden, Rng& rng);

  // x: 1 x input, h: 1 x hidden.
  Var step(const Binding& b, const Var& x, const Var& h) const;
  Index hidden() const { return hidden_; }

 private:
  std::size_t w_ih_ = 0, w_hh_ = 0, b_ih_ = 0, b_hh_ = 0;
  Index hidden_ = 0;
};

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // grads are ordered as the parameters of `sets`, concatenated.
  void step(const std::vector<ParameterSet*>& sets, const std::vector<Matrix>& grads);

  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  long steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

double grad_norm(const std::vector<Matrix>& grads);

}  // namespace sdematch
