#pragma once

// Reverse-mode gradient engine.
//
// A Tape is an explicit append-only record of scalar primitive operations.
// Values are computed eagerly when a node is emitted; Backward() walks the
// record in reverse and returns the adjoint of every node with respect to a
// chosen root. Distinct tapes share no state, so independent rollouts can be
// recorded and differentiated concurrently.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dss::grad {

enum class Op : std::uint8_t {
  kConst,
  kVar,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kSin,
  kCos,
  kTan,
  kAtan2,
  kExp,
  kLog,
  kSqrt,
  kClamp,
  kSelect,
  kSum,
  kDot,
};

std::string_view OpName(Op op);

// Raised for domain errors, overflow, stale references and non-finite
// adjoints. node() is the offending node index (or the index the node would
// have received).
class GradError : public std::runtime_error {
 public:
  GradError(const std::string& what, std::size_t node);
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

// Opaque handle into a Tape. Valid until the owning tape is reset.
struct NodeRef {
  std::uint32_t index = 0;
  std::uint64_t generation = 0;
};

class Adjoints {
 public:
  Adjoints() = default;
  Adjoints(std::vector<double> values, std::uint64_t generation)
      : values_(std::move(values)), generation_(generation) {}

  double operator[](NodeRef ref) const;
  std::span<const double> values() const { return values_; }
  // Adjoints of a contiguous run of nodes starting at `first`.
  std::span<const double> Range(NodeRef first, std::size_t count) const;

 private:
  std::vector<double> values_;
  std::uint64_t generation_ = 0;
};

class Tape {
 public:
  Tape();

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Generic entry point: arity must match the tag. kClamp takes attrs
  // {lo, hi}; kConst/kVar take attrs {value} and no inputs; kSelect takes
  // (condition, if_true, if_false) and picks if_true when condition > 0;
  // kDot takes 2n inputs laid out as (a_0..a_{n-1}, b_0..b_{n-1}).
  NodeRef Emit(Op op, std::span<const NodeRef> inputs,
               std::span<const double> attrs = {});

  NodeRef Constant(double value);
  NodeRef Variable(double value);

  NodeRef Add(NodeRef a, NodeRef b);
  NodeRef Sub(NodeRef a, NodeRef b);
  NodeRef Mul(NodeRef a, NodeRef b);
  NodeRef Div(NodeRef a, NodeRef b);
  NodeRef Neg(NodeRef a);
  NodeRef Sin(NodeRef a);
  NodeRef Cos(NodeRef a);
  NodeRef Tan(NodeRef a);
  NodeRef Atan2(NodeRef y, NodeRef x);
  NodeRef Exp(NodeRef a);
  NodeRef Log(NodeRef a);
  NodeRef Sqrt(NodeRef a);
  // Adjoint passes through for lo <= x <= hi, zero outside.
  NodeRef Clamp(NodeRef x, double lo, double hi);
  NodeRef Select(NodeRef condition, NodeRef if_true, NodeRef if_false);
  NodeRef Sum(std::span<const NodeRef> terms);
  NodeRef Dot(std::span<const NodeRef> a, std::span<const NodeRef> b);
  // Dot product against constant coefficients. The coefficients are borrowed,
  // not copied: they must outlive every Backward() call on this tape.
  NodeRef Dot(std::span<const double> weights, std::span<const NodeRef> x);

  // One dot node per row: weights (row-major, rows x x.size()) times x plus
  // bias. x is stored once and shared by the rows. Weights are borrowed like
  // in Dot; biases are copied.
  void Affine(std::span<const double> weights, std::span<const double> bias,
              std::span<const NodeRef> x, std::vector<NodeRef>& out);
  // Same with weights and biases read from contiguous runs of nodes starting
  // at `weights` and `bias`; adjoints reach them and x.
  void Affine(NodeRef weights, NodeRef bias, int rows,
              std::span<const NodeRef> x, std::vector<NodeRef>& out);

  double value(NodeRef ref) const;
  Op op(NodeRef ref) const;
  std::size_t size() const { return nodes_.size(); }

  // Adjoint of every node w.r.t. `root`. Does not modify the tape.
  Adjoints Backward(NodeRef root) const;

  // Drops all nodes and invalidates outstanding NodeRefs.
  void Reset();
  void Reserve(std::size_t nodes, std::size_t inputs);

 private:
  struct Node {
    Op op;
    std::uint32_t arity;
    std::uint32_t first_input;
    double value;
    double lo;
    double hi;
    const double* weights;
    // Dot over a run of parameter nodes: first weight and bias node.
    std::uint32_t param_weights;
    std::uint32_t param_bias;
  };
  static constexpr std::uint32_t kNoParam = 0xffffffffu;

  void Check(NodeRef ref) const {
    if (ref.generation != generation_ || ref.index >= nodes_.size()) {
      ThrowStale(ref);
    }
  }
  [[noreturn]] static void ThrowStale(NodeRef ref);
  NodeRef Push(Op op, double value, std::span<const NodeRef> inputs,
               double lo = 0.0, double hi = 0.0,
               const double* weights = nullptr);
  double in(const Node& node, std::uint32_t k) const {
    return nodes_[inputs_[node.first_input + k]].value;
  }

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> inputs_;
  std::uint64_t generation_;
};

// Dot product with eight interleaved partial sums, combined pairwise and
// then the tail. Every dot product in the library goes through this so plain
// and recorded evaluations agree bit for bit.
template <class A, class B>
double OrderedDot(std::size_t n, A a, B b) {
  double s[8] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    for (int j = 0; j < 8; ++j) s[j] += a(k + j) * b(k + j);
  }
  double acc = ((s[0] + s[4]) + (s[1] + s[5])) + ((s[2] + s[6]) + (s[3] + s[7]));
  for (; k < n; ++k) acc += a(k) * b(k);
  return acc;
}

// Value handle bound to a tape, so generic numeric code can be written once
// for `double` and for recorded scalars.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeRef ref) : tape_(tape), ref_(ref) {}

  double value() const { return tape_->value(ref_); }
  NodeRef ref() const { return ref_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  NodeRef ref_;
};

inline Var MakeConstant(Tape& tape, double v) {
  return {&tape, tape.Constant(v)};
}
inline Var MakeVariable(Tape& tape, double v) {
  return {&tape, tape.Variable(v)};
}

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

Var sin(Var a);
Var cos(Var a);
Var tan(Var a);
Var atan2(Var y, Var x);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var Clamp(Var x, double lo, double hi);
Var Sum(std::span<const Var> terms);
Var Dot(std::span<const double> weights, std::span<const Var> x);

// Records a scalar function of the given input variables and returns its root.
using RecordedFunction =
    std::function<NodeRef(Tape& tape, std::span<const NodeRef> inputs)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double GradCheck(const RecordedFunction& f, std::span<const double> point,
                 double step);

}  // namespace dss::grad

namespace dss {

// Overloads so templated code sees the same vocabulary for double and Var.
inline double Value(double x) { return x; }
inline double Value(const grad::Var& x) { return x.value(); }
inline double Clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

}  // namespace dss
