#include "tppkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tppkit::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kNeg: return "neg";
    case Op::kScale: return "scale";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kSoftplus: return "softplus";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kDot: return "dot";
    case Op::kMatVec: return "matvec";
    case Op::kMatTVec: return "matvec_t";
    case Op::kLinear: return "linear";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kStackRows: return "stack_rows";
    case Op::kAddN: return "add_n";
  }
  return "?";
}

const Tensor& Var::value() const { return tape->value(*this); }
const Tensor& Var::grad() const { return tape->grad(*this); }

namespace {

Tape& tape_of(Var x) {
  if (x.tape == nullptr) throw ShapeError("operation on an unbound Var");
  return *x.tape;
}

Tape& tape_of(Var x, Var y) {
  Tape& t = tape_of(x);
  if (y.tape != &t) throw ShapeError("operands live on different tapes");
  return t;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

// Result shape of a scalar-broadcast binary op.
Shape broadcast_shape(const Tensor& x, const Tensor& y, const char* what) {
  if (x.shape() == y.shape()) return x.shape();
  if (y.is_scalar()) return x.shape();
  if (x.is_scalar()) return y.shape();
  throw ShapeError(std::string(what) + ": shape mismatch " + x.shape().to_string() + " vs " +
                   y.shape().to_string());
}

Tensor& slot(std::vector<Tensor>& adj, std::uint32_t id, const Tensor& like) {
  Tensor& t = adj[id];
  if (t.empty()) t = Tensor(like.shape());
  return t;
}

// Adds g into a parent slot, summing when the parent was a broadcast scalar.
void accumulate(Tensor& dst, const Tensor& g, double sign = 1.0) {
  if (dst.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += sign * g[i];
  } else {
    double s = 0.0;
    for (double v : g.data()) s += v;
    dst[0] += sign * s;
  }
}

template <typename F>
Var unary(Op op, Var x, F f) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return t.record(op, std::move(out), {x.id});
}

template <typename F>
Var binary(Op op, Var x, Var y, const char* what, F f) {
  Tape& t = tape_of(x, y);
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  Tensor out(broadcast_shape(xv, yv, what));
  const bool xs = xv.size() != out.size();
  const bool ys = yv.size() != out.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs ? xv[0] : xv[i], ys ? yv[0] : yv[i]);
  return t.record(op, std::move(out), {x.id, y.id});
}

}  // namespace

Var Tape::leaf(Tensor value) {
  if (value.empty()) throw ShapeError("leaf tensor must be non-empty");
  return record(Op::kLeaf, std::move(value), {});
}

Var Tape::record(Op op, Tensor value, std::vector<std::uint32_t> parents, std::size_t aux,
                 double factor) {
  if (checked_ && !value.all_finite())
    throw NumericError(std::string("non-finite value produced by ") + op_name(op));
  Node node;
  node.grad = Tensor(value.shape());
  node.value = std::move(value);
  node.parents = std::move(parents);
  node.op = op;
  node.aux = aux;
  node.factor = factor;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.fill(0.0);
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ShapeError("backward root belongs to another tape");
  if (!nodes_[root.id].value.is_scalar())
    throw ShapeError("backward root must be scalar, got " +
                     nodes_[root.id].value.shape().to_string());
  std::vector<Tensor> adj(root.id + 1);
  adj[root.id] = Tensor::filled(nodes_[root.id].value.shape(), 1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    if (adj[i].empty()) continue;
    propagate(static_cast<std::uint32_t>(i), adj[i], adj);
  }
  for (std::size_t i = 0; i <= root.id; ++i) {
    if (adj[i].empty()) continue;
    Tensor& g = nodes_[i].grad;
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += adj[i][j];
  }
}

void Tape::propagate(std::uint32_t id, const Tensor& g, std::vector<Tensor>& adj) const {
  const Node& n = nodes_[id];
  const Tensor& y = n.value;
  auto parent = [&](std::size_t k) -> const Tensor& { return nodes_[n.parents[k]].value; };
  auto dparent = [&](std::size_t k) -> Tensor& {
    return slot(adj, n.parents[k], nodes_[n.parents[k]].value);
  };

  switch (n.op) {
    case Op::kLeaf:
      return;
    case Op::kAdd:
      accumulate(dparent(0), g);
      accumulate(dparent(1), g);
      return;
    case Op::kSub:
      accumulate(dparent(0), g);
      accumulate(dparent(1), g, -1.0);
      return;
    case Op::kMul: {
      const Tensor& a = parent(0);
      const Tensor& b = parent(1);
      Tensor ga(g.shape()), gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double av = a.size() == g.size() ? a[i] : a[0];
        const double bv = b.size() == g.size() ? b[i] : b[0];
        ga[i] = g[i] * bv;
        gb[i] = g[i] * av;
      }
      accumulate(dparent(0), ga);
      accumulate(dparent(1), gb);
      return;
    }
    case Op::kNeg:
      accumulate(dparent(0), g, -1.0);
      return;
    case Op::kScale:
      accumulate(dparent(0), g, n.factor);
      return;
    case Op::kTanh: {
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::kSigmoid: {
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::kRelu: {
      const Tensor& x = parent(0);
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) d[i] += g[i];
      return;
    }
    case Op::kSoftplus: {
      const Tensor& x = parent(0);
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * stable_sigmoid(x[i]);
      return;
    }
    case Op::kExp: {
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
      return;
    }
    case Op::kLog: {
      const Tensor& x = parent(0);
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / x[i];
      return;
    }
    case Op::kSquare: {
      const Tensor& x = parent(0);
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += 2.0 * x[i] * g[i];
      return;
    }
    case Op::kSum: {
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
      return;
    }
    case Op::kDot: {
      const Tensor& a = parent(0);
      const Tensor& b = parent(1);
      Tensor& da = dparent(0);
      for (std::size_t i = 0; i < a.size(); ++i) da[i] += g[0] * b[i];
      Tensor& db = dparent(1);
      for (std::size_t i = 0; i < b.size(); ++i) db[i] += g[0] * a[i];
      return;
    }
    case Op::kMatVec:
    case Op::kLinear: {
      const Tensor& w = parent(0);
      const Tensor& x = parent(1);
      const std::size_t rows = w.rows(), cols = w.cols();
      Tensor& dw = dparent(0);
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        double* row = dw.data().data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += gr * x[c];
      }
      Tensor& dx = dparent(1);
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* row = w.data().data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dx[c] += gr * row[c];
      }
      if (n.op == Op::kLinear) accumulate(dparent(2), g);
      return;
    }
    case Op::kMatTVec: {
      const Tensor& w = parent(0);
      const Tensor& v = parent(1);
      const std::size_t rows = w.rows(), cols = w.cols();
      Tensor& dw = dparent(0);
      Tensor& dv = dparent(1);
      for (std::size_t r = 0; r < rows; ++r) {
        double* drow = dw.data().data() + r * cols;
        const double* row = w.data().data() + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          drow[c] += v[r] * g[c];
          acc += row[c] * g[c];
        }
        dv[r] += acc;
      }
      return;
    }
    case Op::kSoftmax: {
      double gy = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += y[i] * (g[i] - gy);
      return;
    }
    case Op::kLogSoftmax: {
      double gs = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) gs += g[i];
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] - std::exp(y[i]) * gs;
      return;
    }
    case Op::kConcat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        Tensor& d = dparent(k);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offset + i];
        offset += d.size();
      }
      return;
    }
    case Op::kSlice: {
      Tensor& d = dparent(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[n.aux + i] += g[i];
      return;
    }
    case Op::kStackRows: {
      const std::size_t cols = y.cols();
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        Tensor& d = dparent(k);
        for (std::size_t c = 0; c < cols; ++c) d[c] += g[k * cols + c];
      }
      return;
    }
    case Op::kAddN:
      for (std::size_t k = 0; k < n.parents.size(); ++k) accumulate(dparent(k), g);
      return;
  }
}

Var add(Var x, Var y) {
  return binary(Op::kAdd, x, y, "add", [](double a, double b) { return a + b; });
}
Var sub(Var x, Var y) {
  return binary(Op::kSub, x, y, "sub", [](double a, double b) { return a - b; });
}
Var mul(Var x, Var y) {
  return binary(Op::kMul, x, y, "mul", [](double a, double b) { return a * b; });
}
Var neg(Var x) {
  return unary(Op::kNeg, x, [](double a) { return -a; });
}
Var scale(Var x, double factor) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = factor * xv[i];
  return t.record(Op::kScale, std::move(out), {x.id}, 0, factor);
}
Var tanh(Var x) {
  return unary(Op::kTanh, x, [](double a) { return std::tanh(a); });
}
Var sigmoid(Var x) { return unary(Op::kSigmoid, x, stable_sigmoid); }
Var relu(Var x) {
  return unary(Op::kRelu, x, [](double a) { return a > 0.0 ? a : 0.0; });
}
Var softplus(Var x) { return unary(Op::kSoftplus, x, stable_softplus); }
Var exp(Var x) {
  return unary(Op::kExp, x, [](double a) { return std::exp(a); });
}
Var log(Var x) {
  if (tape_of(x).checked()) {
    for (double v : x.value().data())
      if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
  }
  return unary(Op::kLog, x, [](double a) { return std::log(a); });
}
Var square(Var x) {
  return unary(Op::kSquare, x, [](double a) { return a * a; });
}

Var elementwise(Unary kind, Var x) {
  switch (kind) {
    case Unary::kTanh: return tanh(x);
    case Unary::kSigmoid: return sigmoid(x);
    case Unary::kRelu: return relu(x);
    case Unary::kSoftplus: return softplus(x);
    case Unary::kExp: return exp(x);
    case Unary::kLog: return log(x);
    case Unary::kNeg: return neg(x);
    case Unary::kSquare: return square(x);
  }
  throw ShapeError("unknown unary op");
}

Var elementwise(Binary kind, Var x, Var y) {
  switch (kind) {
    case Binary::kAdd: return add(x, y);
    case Binary::kSub: return sub(x, y);
    case Binary::kMul: return mul(x, y);
  }
  throw ShapeError("unknown binary op");
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return t.record(Op::kSum, Tensor::scalar(s), {x.id});
}

Var dot(Var x, Var y) {
  Tape& t = tape_of(x, y);
  const Tensor& a = x.value();
  const Tensor& b = y.value();
  if (a.size() != b.size())
    throw ShapeError("dot: length mismatch " + a.shape().to_string() + " vs " +
                     b.shape().to_string());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return t.record(Op::kDot, Tensor::scalar(s), {x.id, y.id});
}

namespace {

Tensor matvec_value(const Tensor& w, const Tensor& x, const char* what) {
  if (w.shape().rank() != 2) throw ShapeError(std::string(what) + ": W must be a matrix");
  const std::size_t rows = w.rows(), cols = w.cols();
  if (x.size() != cols)
    throw ShapeError(std::string(what) + ": W " + w.shape().to_string() + " vs x " +
                     x.shape().to_string());
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data().data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
  return out;
}

}  // namespace

Var matvec(Var w, Var x) {
  Tape& t = tape_of(w, x);
  return t.record(Op::kMatVec, matvec_value(w.value(), x.value(), "matvec"), {w.id, x.id});
}

Var matvec_t(Var w, Var y) {
  Tape& t = tape_of(w, y);
  const Tensor& wv = w.value();
  const Tensor& yv = y.value();
  if (wv.shape().rank() != 2) throw ShapeError("matvec_t: W must be a matrix");
  const std::size_t rows = wv.rows(), cols = wv.cols();
  if (yv.size() != rows)
    throw ShapeError("matvec_t: W " + wv.shape().to_string() + " vs y " + yv.shape().to_string());
  Tensor out(Shape{cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = wv.data().data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += yv[r] * row[c];
  }
  return t.record(Op::kMatTVec, std::move(out), {w.id, y.id});
}

Var linear(Var w, Var x, Var b) {
  Tape& t = tape_of(w, x);
  if (b.tape != &t) throw ShapeError("operands live on different tapes");
  Tensor out = matvec_value(w.value(), x.value(), "linear");
  const Tensor& bv = b.value();
  if (bv.size() != out.size())
    throw ShapeError("linear: bias " + bv.shape().to_string() + " vs output " +
                     out.shape().to_string());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record(Op::kLinear, std::move(out), {w.id, x.id, b.id});
}

Var softmax(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.empty()) throw ShapeError("softmax of empty input");
  const double mx = *std::max_element(xv.data().begin(), xv.data().end());
  Tensor out(xv.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) z += (out[i] = std::exp(xv[i] - mx));
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] /= z;
  return t.record(Op::kSoftmax, std::move(out), {x.id});
}

Var log_softmax(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.empty()) throw ShapeError("log_softmax of empty input");
  const double mx = *std::max_element(xv.data().begin(), xv.data().end());
  double z = 0.0;
  for (double v : xv.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] - lse;
  return t.record(Op::kLogSoftmax, std::move(out), {x.id});
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of zero parts");
  Tape& t = tape_of(parts.front());
  std::vector<double> data;
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  for (Var p : parts) {
    if (p.tape != &t) throw ShapeError("operands live on different tapes");
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
    ids.push_back(p.id);
  }
  return t.record(Op::kConcat, Tensor::vector(std::move(data)), std::move(ids));
}

Var slice(Var x, std::size_t offset, std::size_t length) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  if (length == 0 || offset + length > xv.size())
    throw ShapeError("slice [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                     ") out of range for " + xv.shape().to_string());
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(offset),
                           xv.data().begin() + static_cast<std::ptrdiff_t>(offset + length));
  return t.record(Op::kSlice, Tensor::vector(std::move(data)), {x.id}, offset);
}

Var pick(Var x, std::size_t index) { return slice(x, index, 1); }

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows of zero rows");
  Tape& t = tape_of(rows.front());
  const std::size_t cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  std::vector<std::uint32_t> ids;
  ids.reserve(rows.size());
  for (Var r : rows) {
    if (r.tape != &t) throw ShapeError("operands live on different tapes");
    if (r.size() != cols) throw ShapeError("stack_rows: ragged rows");
    const auto d = r.value().data();
    data.insert(data.end(), d.begin(), d.end());
    ids.push_back(r.id);
  }
  return t.record(Op::kStackRows, Tensor::matrix(rows.size(), cols, std::move(data)),
                  std::move(ids));
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ShapeError("add_n of zero terms");
  Tape& t = tape_of(terms.front());
  Tensor out(terms.front().shape());
  std::vector<std::uint32_t> ids;
  ids.reserve(terms.size());
  for (Var v : terms) {
    if (v.tape != &t) throw ShapeError("operands live on different tapes");
    if (!(v.shape() == out.shape())) throw ShapeError("add_n: shape mismatch");
    const auto d = v.value().data();
    for (std::size_t i = 0; i < d.size(); ++i) out[i] += d[i];
    ids.push_back(v.id);
  }
  return t.record(Op::kAddN, std::move(out), std::move(ids));
}

}  // namespace tppkit::ad
