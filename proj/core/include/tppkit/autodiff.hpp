#pragma once

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// A Tape records every node created by the operations below in creation
// order, which is a topological order of the computation graph. Calling
// backward() on a scalar node sweeps the tape in reverse and adds
// d(root)/d(node) into every node's grad. Grads are never reset implicitly:
// two backward() calls on the same root double every grad.
//
// Broadcasting is limited to scalar-vs-tensor for the binary elementwise
// ops; anything else is a ShapeError.
//
// A Tape and its Vars belong to one thread.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tppkit/tensor.hpp"

namespace tppkit::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kScale,
  kTanh,
  kSigmoid,
  kRelu,
  kSoftplus,
  kExp,
  kLog,
  kSquare,
  kSum,
  kDot,
  kMatVec,
  kMatTVec,
  kLinear,
  kSoftmax,
  kLogSoftmax,
  kConcat,
  kSlice,
  kStackRows,
  kAddN,
};

const char* op_name(Op op);

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
};

class Tape {
 public:
  // In checked mode every created node is validated: non-finite values and
  // log of a non-positive argument raise NumericError.
  explicit Tape(bool checked = true) : checked_(checked) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Tensor value);
  Var scalar(double value) { return leaf(Tensor::scalar(value)); }

  // Adds d(root)/d(node) to the grad of every node. root must be scalar.
  void backward(Var root);
  void zero_grad();

  bool checked() const { return checked_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  Op op(Var v) const { return nodes_[v.id].op; }
  std::span<const std::uint32_t> parents(Var v) const { return nodes_[v.id].parents; }

  // Appends a node produced by `op`. Used by the operation implementations.
  Var record(Op op, Tensor value, std::vector<std::uint32_t> parents, std::size_t aux = 0,
             double factor = 0.0);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::uint32_t> parents;
    Op op = Op::kLeaf;
    std::size_t aux = 0;  // slice offset
    double factor = 0.0;  // scale factor
  };

  void propagate(std::uint32_t id, const Tensor& g, std::vector<Tensor>& adj) const;

  std::vector<Node> nodes_;
  bool checked_;
};

// Pointwise ops.
enum class Unary : std::uint8_t { kTanh, kSigmoid, kRelu, kSoftplus, kExp, kLog, kNeg, kSquare };
enum class Binary : std::uint8_t { kAdd, kSub, kMul };

Var elementwise(Unary kind, Var x);
Var elementwise(Binary kind, Var x, Var y);

Var add(Var x, Var y);
Var sub(Var x, Var y);
Var mul(Var x, Var y);
Var neg(Var x);
Var scale(Var x, double factor);
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
// log1p(exp(-|x|)) + max(x, 0)
Var softplus(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);

// Reductions and products.
Var sum(Var x);
Var dot(Var x, Var y);
Var matvec(Var w, Var x);    // W (r x c) * x (c) -> (r)
Var matvec_t(Var w, Var y);  // W^T * y, y (r) -> (c)
Var linear(Var w, Var x, Var b);
Var softmax(Var x);
Var log_softmax(Var x);

// Structure.
Var concat(std::span<const Var> parts);
Var slice(Var x, std::size_t offset, std::size_t length);
Var pick(Var x, std::size_t index);
Var stack_rows(std::span<const Var> rows);
Var add_n(std::span<const Var> terms);

inline Var operator+(Var x, Var y) { return add(x, y); }
inline Var operator-(Var x, Var y) { return sub(x, y); }
inline Var operator*(Var x, Var y) { return mul(x, y); }
inline Var operator-(Var x) { return neg(x); }

}  // namespace tppkit::ad
