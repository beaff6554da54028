#pragma once

// Reverse-mode differentiation over a dynamic tape.
//
// Every forward op allocates a Node holding its value, its inputs and a
// backward rule. Backward rules are themselves written with the same ops, so
// grad(..., create_graph = true) records the gradient computation and the
// result can be differentiated again. This is what lets a training loss
// contain input-gradients of the decoder (the Fisher trace term) and still be
// differentiated with respect to every parameter.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fisherjscc/tensor.hpp"

namespace fisherjscc::ad {

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Transpose,
  Affine,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  AddRow,
  Sum,
  ColumnSums,
  RowSums,
  RepeatRows,
  RepeatCols,
  Exp,
  Tanh,
  Relu,
  Square,
  LogSoftmax,
};

std::string_view op_name(OpKind kind);

enum class Activation { relu, tanh };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

class Var;
struct Node;

// Receives the node's own handle and the upstream gradient; returns one
// gradient per input (an undefined Var means "no contribution").
using BackwardRule = std::function<std::vector<Var>(const Var& self, const Var& upstream)>;

struct Node {
  OpKind kind = OpKind::Constant;
  Tensor value;
  std::vector<Var> inputs;
  BackwardRule backward;
  bool requires_grad = false;
};

/// Shared handle to a tape node. Copying a Var aliases the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  // Only leaves may be mutated in place (optimizer updates).
  Tensor& mutable_value();
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  OpKind kind() const { return node_->kind; }
  const Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaf that gradients can be taken with respect to (parameters, inputs).
Var variable(Tensor value);
// Leaf that never receives a gradient.
Var constant(Tensor value);

bool grad_enabled();

/// While alive, ops on this thread produce constants and record nothing.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// x[b×in] · w[in×out] + bias[1×out]
Var affine(const Var& x, const Var& w, const Var& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);
Var sum(const Var& a);
Var column_sums(const Var& a);  // [r×c] → [1×c]
Var row_sums(const Var& a);     // [r×c] → [r×1]
Var repeat_rows(const Var& row, std::size_t rows);  // [1×c] → [rows×c]
Var repeat_cols(const Var& col, std::size_t cols);  // [r×1] → [r×cols]
Var exp(const Var& a);
Var tanh(const Var& a);
// relu'(0) is taken as 0.
Var relu(const Var& a);
Var square(const Var& a);
Var activation(const Var& a, Activation kind);
// Row-wise, max-shifted for stability.
Var log_softmax(const Var& logits);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

/// Gradients of a scalar root with respect to `wrt`. Leaves that the root does
/// not depend on get a zero gradient. With create_graph the returned Vars are
/// recorded and can be differentiated again; otherwise they are constants.
/// The graph itself is never mutated, so repeated calls give identical results.
std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph = false);

std::vector<Tensor> backward(const Var& root, std::span<const Var> wrt);

}  // namespace fisherjscc::ad
