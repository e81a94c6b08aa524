#pragma once

// Dense layers over a flat parameter vector, evaluated through one of three
// backends: plain doubles, a tape with frozen (constant) parameters, or a
// tape whose parameters are variables.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dss/grad.h"

namespace dss::nn {

struct Dense {
  std::string name;
  std::size_t weights = 0;  // row-major out x in
  std::size_t bias = 0;
  int out = 0;
  int in = 0;
  std::size_t size() const {
    return static_cast<std::size_t>(out) * (in + 1);
  }
};

// Appends a layer to a running layout and returns it.
inline Dense AddDense(std::size_t& cursor, std::string name, int out, int in) {
  Dense d{std::move(name), cursor, cursor + static_cast<std::size_t>(out) * in,
          out, in};
  cursor += d.size();
  return d;
}

class PlainBackend {
 public:
  using Scalar = double;
  explicit PlainBackend(std::span<const double> params) : params_(params) {}

  void Apply(const Dense& d, std::span<const double> x,
             std::vector<double>& y) const {
    y.resize(d.out);
    const double* w = params_.data() + d.weights;
    const double* xp = x.data();
    for (int r = 0; r < d.out; ++r) {
      const double* row = w + static_cast<std::size_t>(r) * d.in;
      y[r] = grad::OrderedDot(
                 d.in, [row](std::size_t k) { return row[k]; },
                 [xp](std::size_t k) { return xp[k]; }) +
             params_[d.bias + r];
    }
  }

 private:
  std::span<const double> params_;
};

// Parameters are borrowed constants; adjoints reach inputs only.
class FrozenBackend {
 public:
  using Scalar = grad::Var;
  FrozenBackend(grad::Tape& tape, std::span<const double> params)
      : tape_(tape), params_(params) {}

  void Apply(const Dense& d, std::span<const grad::Var> x,
             std::vector<grad::Var>& y) {
    refs_.resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) refs_[k] = x[k].ref();
    tape_.Affine(params_.subspan(d.weights,
                                 static_cast<std::size_t>(d.out) * d.in),
                 params_.subspan(d.bias, d.out), refs_, out_);
    y.resize(d.out);
    for (int r = 0; r < d.out; ++r) y[r] = {&tape_, out_[r]};
  }

 private:
  grad::Tape& tape_;
  std::span<const double> params_;
  std::vector<grad::NodeRef> refs_;
  std::vector<grad::NodeRef> out_;
};

// Every parameter is a tape variable; parameter i is node first + i.
class TrainableBackend {
 public:
  using Scalar = grad::Var;
  TrainableBackend(grad::Tape& tape, std::span<const double> params)
      : tape_(tape), count_(params.size()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const grad::NodeRef r = tape.Variable(params[i]);
      if (i == 0) first_ = r;
    }
  }

  grad::NodeRef first() const { return first_; }
  std::size_t count() const { return count_; }
  grad::NodeRef param(std::size_t i) const {
    return {first_.index + static_cast<std::uint32_t>(i), first_.generation};
  }

  void Apply(const Dense& d, std::span<const grad::Var> x,
             std::vector<grad::Var>& y) {
    refs_.resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) refs_[k] = x[k].ref();
    tape_.Affine(param(d.weights), param(d.bias), d.out, refs_, out_);
    y.resize(d.out);
    for (int r = 0; r < d.out; ++r) y[r] = {&tape_, out_[r]};
  }

 private:
  grad::Tape& tape_;
  std::size_t count_;
  grad::NodeRef first_;
  std::vector<grad::NodeRef> refs_;
  std::vector<grad::NodeRef> out_;
};

template <class S>
S Sigmoid(const S& x) {
  using std::exp;
  if (Value(x) >= 0.0) return 1.0 / (1.0 + exp(-x));
  const S e = exp(x);
  return e / (1.0 + e);
}

template <class S>
S Tanh(const S& x) {
  return 2.0 * Sigmoid(2.0 * x) - 1.0;
}

template <class S>
S Softplus(const S& x) {
  using std::exp;
  using std::log;
  if (Value(x) > 0.0) return x + log(1.0 + exp(-x));
  return log(1.0 + exp(x));
}

// Uniform(-b, b) with b = sqrt(6 / (in + out)), biases zero.
void InitDense(const Dense& d, std::span<double> params, std::uint64_t seed,
               double gain = 1.0);

}  // namespace dss::nn
