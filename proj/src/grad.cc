#include "dss/grad.h"

#include <atomic>
#include <cmath>
#include <sstream>

namespace dss::grad {
namespace {

std::atomic<std::uint64_t> next_generation{1};

std::string Describe(std::string_view what, Op op, std::size_t node) {
  std::ostringstream out;
  out << what << " in " << OpName(op) << " at node " << node;
  return out.str();
}

std::size_t ExpectedArity(Op op) {
  switch (op) {
    case Op::kConst:
    case Op::kVar:
      return 0;
    case Op::kNeg:
    case Op::kSin:
    case Op::kCos:
    case Op::kTan:
    case Op::kExp:
    case Op::kLog:
    case Op::kSqrt:
    case Op::kClamp:
      return 1;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv:
    case Op::kAtan2:
      return 2;
    case Op::kSelect:
      return 3;
    case Op::kSum:
    case Op::kDot:
      return 0;  // variadic
  }
  return 0;
}

}  // namespace

std::string_view OpName(Op op) {
  switch (op) {
    case Op::kConst: return "const";
    case Op::kVar: return "var";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kSin: return "sin";
    case Op::kCos: return "cos";
    case Op::kTan: return "tan";
    case Op::kAtan2: return "atan2";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kClamp: return "clamp";
    case Op::kSelect: return "select";
    case Op::kSum: return "sum";
    case Op::kDot: return "dot";
  }
  return "unknown";
}

GradError::GradError(const std::string& what, std::size_t node)
    : std::runtime_error(what), node_(node) {}

double Adjoints::operator[](NodeRef ref) const {
  if (ref.generation != generation_ || ref.index >= values_.size()) {
    throw GradError("adjoint lookup with a reference from another record",
                    ref.index);
  }
  return values_[ref.index];
}

std::span<const double> Adjoints::Range(NodeRef first,
                                        std::size_t count) const {
  if (first.generation != generation_ ||
      first.index + count > values_.size()) {
    throw GradError("adjoint range outside record", first.index);
  }
  return std::span<const double>(values_).subspan(first.index, count);
}

Tape::Tape() : generation_(next_generation.fetch_add(1)) {}

void Tape::Reset() {
  nodes_.clear();
  inputs_.clear();
  generation_ = next_generation.fetch_add(1);
}

void Tape::Reserve(std::size_t nodes, std::size_t inputs) {
  nodes_.reserve(nodes);
  inputs_.reserve(inputs);
}

void Tape::ThrowStale(NodeRef ref) {
  throw GradError("stale or foreign node reference", ref.index);
}

double Tape::value(NodeRef ref) const {
  Check(ref);
  return nodes_[ref.index].value;
}

Op Tape::op(NodeRef ref) const {
  Check(ref);
  return nodes_[ref.index].op;
}

NodeRef Tape::Push(Op op, double value, std::span<const NodeRef> inputs,
                   double lo, double hi, const double* weights) {
  const std::size_t index = nodes_.size();
  if (!std::isfinite(value)) {
    throw GradError(Describe("non-finite value (overflow)", op, index), index);
  }
  Node node{op,    static_cast<std::uint32_t>(inputs.size()),
            static_cast<std::uint32_t>(inputs_.size()),
            value, lo, hi, weights, kNoParam, kNoParam};
  const std::size_t base = inputs_.size();
  inputs_.resize(base + inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs_[base + k] = inputs[k].index;
  }
  nodes_.push_back(node);
  return {static_cast<std::uint32_t>(index), generation_};
}

NodeRef Tape::Emit(Op op, std::span<const NodeRef> inputs,
                   std::span<const double> attrs) {
  const std::size_t index = nodes_.size();
  const std::size_t arity = ExpectedArity(op);
  if (op != Op::kSum && op != Op::kDot && inputs.size() != arity) {
    throw GradError(Describe("arity mismatch", op, index), index);
  }
  for (const NodeRef& r : inputs) Check(r);
  auto v = [&](std::size_t k) { return nodes_[inputs[k].index].value; };
  switch (op) {
    case Op::kConst:
    case Op::kVar:
      if (attrs.size() != 1) {
        throw GradError(Describe("missing value", op, index), index);
      }
      return Push(op, attrs[0], {});
    case Op::kAdd:
      return Push(op, v(0) + v(1), inputs);
    case Op::kSub:
      return Push(op, v(0) - v(1), inputs);
    case Op::kMul:
      return Push(op, v(0) * v(1), inputs);
    case Op::kDiv:
      if (v(1) == 0.0) {
        throw GradError(Describe("division by zero", op, index), index);
      }
      return Push(op, v(0) / v(1), inputs);
    case Op::kNeg:
      return Push(op, -v(0), inputs);
    case Op::kSin:
      return Push(op, std::sin(v(0)), inputs);
    case Op::kCos:
      return Push(op, std::cos(v(0)), inputs);
    case Op::kTan:
      return Push(op, std::tan(v(0)), inputs);
    case Op::kAtan2:
      if (v(0) == 0.0 && v(1) == 0.0) {
        throw GradError(Describe("atan2(0, 0) has no gradient", op, index),
                        index);
      }
      return Push(op, std::atan2(v(0), v(1)), inputs);
    case Op::kExp:
      return Push(op, std::exp(v(0)), inputs);
    case Op::kLog:
      if (!(v(0) > 0.0)) {
        throw GradError(Describe("log of non-positive input", op, index),
                        index);
      }
      return Push(op, std::log(v(0)), inputs);
    case Op::kSqrt:
      if (v(0) < 0.0) {
        throw GradError(Describe("sqrt of negative input", op, index), index);
      }
      return Push(op, std::sqrt(v(0)), inputs);
    case Op::kClamp: {
      if (attrs.size() != 2 || attrs[0] > attrs[1]) {
        throw GradError(Describe("clamp needs lo <= hi", op, index), index);
      }
      const double x = v(0);
      const double y = x < attrs[0] ? attrs[0] : (x > attrs[1] ? attrs[1] : x);
      return Push(op, y, inputs, attrs[0], attrs[1]);
    }
    case Op::kSelect:
      return Push(op, v(0) > 0.0 ? v(1) : v(2), inputs);
    case Op::kSum: {
      if (inputs.empty()) {
        throw GradError(Describe("empty sum", op, index), index);
      }
      double acc = 0.0;
      for (std::size_t k = 0; k < inputs.size(); ++k) acc += v(k);
      return Push(op, acc, inputs);
    }
    case Op::kDot: {
      if (inputs.empty() || inputs.size() % 2 != 0) {
        throw GradError(Describe("dot needs two equal-length operands", op,
                                 index),
                        index);
      }
      const std::size_t n = inputs.size() / 2;
      const double acc = OrderedDot(
          n, v, [&](std::size_t k) { return v(n + k); });
      return Push(op, acc, inputs);
    }
  }
  throw GradError("unknown primitive", index);
}

NodeRef Tape::Constant(double value) {
  return Emit(Op::kConst, {}, std::span<const double>(&value, 1));
}
NodeRef Tape::Variable(double value) {
  return Emit(Op::kVar, {}, std::span<const double>(&value, 1));
}

#define DSS_BINARY(Name, Tag)                   \
  NodeRef Tape::Name(NodeRef a, NodeRef b) {    \
    const NodeRef in[2] = {a, b};               \
    return Emit(Op::Tag, in);                   \
  }
#define DSS_UNARY(Name, Tag)                    \
  NodeRef Tape::Name(NodeRef a) {               \
    const NodeRef in[1] = {a};                  \
    return Emit(Op::Tag, in);                   \
  }
DSS_BINARY(Add, kAdd)
DSS_BINARY(Sub, kSub)
DSS_BINARY(Mul, kMul)
DSS_BINARY(Div, kDiv)
DSS_BINARY(Atan2, kAtan2)
DSS_UNARY(Neg, kNeg)
DSS_UNARY(Sin, kSin)
DSS_UNARY(Cos, kCos)
DSS_UNARY(Tan, kTan)
DSS_UNARY(Exp, kExp)
DSS_UNARY(Log, kLog)
DSS_UNARY(Sqrt, kSqrt)
#undef DSS_BINARY
#undef DSS_UNARY

NodeRef Tape::Clamp(NodeRef x, double lo, double hi) {
  const NodeRef in[1] = {x};
  const double attrs[2] = {lo, hi};
  return Emit(Op::kClamp, in, attrs);
}

NodeRef Tape::Select(NodeRef condition, NodeRef if_true, NodeRef if_false) {
  const NodeRef in[3] = {condition, if_true, if_false};
  return Emit(Op::kSelect, in);
}

NodeRef Tape::Sum(std::span<const NodeRef> terms) {
  return Emit(Op::kSum, terms);
}

NodeRef Tape::Dot(std::span<const NodeRef> a, std::span<const NodeRef> b) {
  if (a.size() != b.size() || a.empty()) {
    throw GradError("dot operands differ in length", nodes_.size());
  }
  std::vector<NodeRef> in;
  in.reserve(a.size() * 2);
  in.insert(in.end(), a.begin(), a.end());
  in.insert(in.end(), b.begin(), b.end());
  return Emit(Op::kDot, in);
}

NodeRef Tape::Dot(std::span<const double> weights,
                  std::span<const NodeRef> x) {
  const std::size_t index = nodes_.size();
  if (weights.size() != x.size() || x.empty()) {
    throw GradError("dot operands differ in length", index);
  }
  for (const NodeRef& r : x) Check(r);
  const double acc = OrderedDot(
      x.size(), [&](std::size_t k) { return weights[k]; },
      [&](std::size_t k) { return nodes_[x[k].index].value; });
  return Push(Op::kDot, acc, x, 0.0, 0.0, weights.data());
}

void Tape::Affine(std::span<const double> weights,
                  std::span<const double> bias, std::span<const NodeRef> x,
                  std::vector<NodeRef>& out) {
  const std::size_t n = x.size();
  const std::size_t rows = bias.size();
  if (n == 0 || weights.size() != rows * n) {
    throw GradError("affine operands differ in size", nodes_.size());
  }
  for (const NodeRef& r : x) Check(r);
  std::vector<double> xv(n);
  for (std::size_t k = 0; k < n; ++k) xv[k] = nodes_[x[k].index].value;
  const auto first = static_cast<std::uint32_t>(inputs_.size());
  for (const NodeRef& r : x) inputs_.push_back(r.index);
  out.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* w = weights.data() + r * n;
    const double* xp = xv.data();
    const double value =
        OrderedDot(
            n, [w](std::size_t k) { return w[k]; },
            [xp](std::size_t k) { return xp[k]; }) +
        bias[r];
    const std::size_t index = nodes_.size();
    if (!std::isfinite(value)) {
      throw GradError(Describe("non-finite value (overflow)", Op::kDot, index),
                      index);
    }
    nodes_.push_back({Op::kDot, static_cast<std::uint32_t>(n), first, value,
                      0.0, 0.0, w, kNoParam, kNoParam});
    out[r] = {static_cast<std::uint32_t>(index), generation_};
  }
}

void Tape::Affine(NodeRef weights, NodeRef bias, int rows,
                  std::span<const NodeRef> x, std::vector<NodeRef>& out) {
  const std::size_t n = x.size();
  Check(weights);
  Check(bias);
  if (n == 0 || rows < 1 ||
      weights.index + static_cast<std::size_t>(rows) * n > nodes_.size() ||
      bias.index + static_cast<std::size_t>(rows) > nodes_.size()) {
    throw GradError("affine parameter run outside record", nodes_.size());
  }
  for (const NodeRef& r : x) Check(r);
  std::vector<double> xv(n);
  for (std::size_t k = 0; k < n; ++k) xv[k] = nodes_[x[k].index].value;
  const auto first = static_cast<std::uint32_t>(inputs_.size());
  for (const NodeRef& r : x) inputs_.push_back(r.index);
  out.resize(rows);
  for (int r = 0; r < rows; ++r) {
    const std::uint32_t w = weights.index + static_cast<std::uint32_t>(r * n);
    const std::uint32_t b = bias.index + static_cast<std::uint32_t>(r);
    const Node* wp = nodes_.data() + w;
    const double* xp = xv.data();
    const double value =
        OrderedDot(
            n, [wp](std::size_t k) { return wp[k].value; },
            [xp](std::size_t k) { return xp[k]; }) +
        nodes_[b].value;
    const std::size_t index = nodes_.size();
    if (!std::isfinite(value)) {
      throw GradError(Describe("non-finite value (overflow)", Op::kDot, index),
                      index);
    }
    nodes_.push_back({Op::kDot, static_cast<std::uint32_t>(n), first, value,
                      0.0, 0.0, nullptr, w, b});
    out[r] = {static_cast<std::uint32_t>(index), generation_};
  }
}

Adjoints Tape::Backward(NodeRef root) const {
  Check(root);
  std::vector<double> adj(root.index + 1, 0.0);
  adj[root.index] = 1.0;
  for (std::size_t i = root.index + 1; i-- > 0;) {
    const double g = adj[i];
    if (g == 0.0) continue;
    if (!std::isfinite(g)) {
      throw GradError(Describe("non-finite adjoint", nodes_[i].op, i), i);
    }
    const Node& n = nodes_[i];
    const std::uint32_t* args = inputs_.data() + n.first_input;
    switch (n.op) {
      case Op::kConst:
      case Op::kVar:
        break;
      case Op::kAdd:
        adj[args[0]] += g;
        adj[args[1]] += g;
        break;
      case Op::kSub:
        adj[args[0]] += g;
        adj[args[1]] -= g;
        break;
      case Op::kMul:
        adj[args[0]] += g * in(n, 1);
        adj[args[1]] += g * in(n, 0);
        break;
      case Op::kDiv: {
        const double b = in(n, 1);
        adj[args[0]] += g / b;
        adj[args[1]] -= g * n.value / b;
        break;
      }
      case Op::kNeg:
        adj[args[0]] -= g;
        break;
      case Op::kSin:
        adj[args[0]] += g * std::cos(in(n, 0));
        break;
      case Op::kCos:
        adj[args[0]] -= g * std::sin(in(n, 0));
        break;
      case Op::kTan:
        adj[args[0]] += g * (1.0 + n.value * n.value);
        break;
      case Op::kAtan2: {
        const double y = in(n, 0);
        const double x = in(n, 1);
        const double r2 = x * x + y * y;
        adj[args[0]] += g * x / r2;
        adj[args[1]] -= g * y / r2;
        break;
      }
      case Op::kExp:
        adj[args[0]] += g * n.value;
        break;
      case Op::kLog:
        adj[args[0]] += g / in(n, 0);
        break;
      case Op::kSqrt:
        adj[args[0]] += g * 0.5 / n.value;
        break;
      case Op::kClamp: {
        const double x = in(n, 0);
        if (x >= n.lo && x <= n.hi) adj[args[0]] += g;
        break;
      }
      case Op::kSelect:
        if (in(n, 0) > 0.0) {
          adj[args[1]] += g;
        } else {
          adj[args[2]] += g;
        }
        break;
      case Op::kSum:
        for (std::uint32_t k = 0; k < n.arity; ++k) adj[args[k]] += g;
        break;
      case Op::kDot:
        if (n.param_weights != kNoParam) {
          for (std::uint32_t k = 0; k < n.arity; ++k) {
            adj[n.param_weights + k] += g * nodes_[args[k]].value;
            adj[args[k]] += g * nodes_[n.param_weights + k].value;
          }
          adj[n.param_bias] += g;
        } else if (n.weights != nullptr) {
          for (std::uint32_t k = 0; k < n.arity; ++k) {
            adj[args[k]] += g * n.weights[k];
          }
        } else {
          const std::uint32_t half = n.arity / 2;
          for (std::uint32_t k = 0; k < half; ++k) {
            const double a = nodes_[args[k]].value;
            const double b = nodes_[args[half + k]].value;
            adj[args[k]] += g * b;
            adj[args[half + k]] += g * a;
          }
        }
        break;
    }
  }
  adj.resize(nodes_.size(), 0.0);
  return Adjoints(std::move(adj), generation_);
}

// Var arithmetic --------------------------------------------------------------

namespace {
Var Wrap(Tape* t, NodeRef r) { return {t, r}; }
Tape* TapeOf(Var a, Var b) {
  if (a.tape() != b.tape()) {
    throw GradError("operands recorded on different tapes", 0);
  }
  return a.tape();
}
}  // namespace

Var operator+(Var a, Var b) {
  Tape* t = TapeOf(a, b);
  return Wrap(t, t->Add(a.ref(), b.ref()));
}
Var operator-(Var a, Var b) {
  Tape* t = TapeOf(a, b);
  return Wrap(t, t->Sub(a.ref(), b.ref()));
}
Var operator*(Var a, Var b) {
  Tape* t = TapeOf(a, b);
  return Wrap(t, t->Mul(a.ref(), b.ref()));
}
Var operator/(Var a, Var b) {
  Tape* t = TapeOf(a, b);
  return Wrap(t, t->Div(a.ref(), b.ref()));
}
Var operator-(Var a) { return Wrap(a.tape(), a.tape()->Neg(a.ref())); }
Var operator+(Var a, double b) { return a + MakeConstant(*a.tape(), b); }
Var operator+(double a, Var b) { return MakeConstant(*b.tape(), a) + b; }
Var operator-(Var a, double b) { return a - MakeConstant(*a.tape(), b); }
Var operator-(double a, Var b) { return MakeConstant(*b.tape(), a) - b; }
Var operator*(Var a, double b) { return a * MakeConstant(*a.tape(), b); }
Var operator*(double a, Var b) { return MakeConstant(*b.tape(), a) * b; }
Var operator/(Var a, double b) { return a / MakeConstant(*a.tape(), b); }
Var operator/(double a, Var b) { return MakeConstant(*b.tape(), a) / b; }

Var sin(Var a) { return Wrap(a.tape(), a.tape()->Sin(a.ref())); }
Var cos(Var a) { return Wrap(a.tape(), a.tape()->Cos(a.ref())); }
Var tan(Var a) { return Wrap(a.tape(), a.tape()->Tan(a.ref())); }
Var atan2(Var y, Var x) {
  Tape* t = TapeOf(y, x);
  return Wrap(t, t->Atan2(y.ref(), x.ref()));
}
Var exp(Var a) { return Wrap(a.tape(), a.tape()->Exp(a.ref())); }
Var log(Var a) { return Wrap(a.tape(), a.tape()->Log(a.ref())); }
Var sqrt(Var a) { return Wrap(a.tape(), a.tape()->Sqrt(a.ref())); }
Var Clamp(Var x, double lo, double hi) {
  return Wrap(x.tape(), x.tape()->Clamp(x.ref(), lo, hi));
}

Var Sum(std::span<const Var> terms) {
  if (terms.empty()) throw GradError("empty sum", 0);
  std::vector<NodeRef> refs;
  refs.reserve(terms.size());
  for (const Var& v : terms) refs.push_back(v.ref());
  Tape* t = terms.front().tape();
  return Wrap(t, t->Sum(refs));
}

Var Dot(std::span<const double> weights, std::span<const Var> x) {
  if (x.empty()) throw GradError("empty dot", 0);
  std::vector<NodeRef> refs;
  refs.reserve(x.size());
  for (const Var& v : x) refs.push_back(v.ref());
  Tape* t = x.front().tape();
  return Wrap(t, t->Dot(weights, refs));
}

// Finite-difference check -----------------------------------------------------

double GradCheck(const RecordedFunction& f, std::span<const double> point,
                 double step) {
  Tape tape;
  std::vector<NodeRef> inputs;
  inputs.reserve(point.size());
  for (double p : point) inputs.push_back(tape.Variable(p));
  const NodeRef root = f(tape, inputs);
  const Adjoints adj = tape.Backward(root);

  auto evaluate = [&](std::span<const double> x) {
    Tape probe;
    std::vector<NodeRef> in;
    in.reserve(x.size());
    for (double p : x) in.push_back(probe.Variable(p));
    const double y = probe.value(f(probe, in));
    if (!std::isfinite(y)) {
      throw GradError("non-finite evaluation at probe point", 0);
    }
    return y;
  };

  double worst = 0.0;
  std::vector<double> x(point.begin(), point.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = evaluate(x);
    x[i] = saved - step;
    const double down = evaluate(x);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = adj[inputs[i]];
    const double err =
        std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace dss::grad
