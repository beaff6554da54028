#include "fisherjscc/autodiff.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "fisherjscc/error.hpp"

namespace fisherjscc::ad {

namespace {

thread_local bool t_grad_enabled = true;

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.value()) +
                                " vs " + shape_str(b.value()));
  }
}

Var make_node(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardRule rule) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by op '" + std::string(op_name(kind)) + "'");
  }
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->value = std::move(value);
  const bool track =
      t_grad_enabled &&
      std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (track) {
    node->inputs = std::move(inputs);
    node->backward = std::move(rule);
    node->requires_grad = true;
  } else {
    node->kind = OpKind::Constant;
  }
  return Var(std::move(node));
}

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor zip_values(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.rows(), a.cols());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

Var expand_scalar(const Var& g, std::size_t rows, std::size_t cols) {
  return repeat_cols(repeat_rows(g, rows), cols);
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Affine: return "affine";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::AddRow: return "add_row";
    case OpKind::Sum: return "sum";
    case OpKind::ColumnSums: return "column_sums";
    case OpKind::RowSums: return "row_sums";
    case OpKind::RepeatRows: return "repeat_rows";
    case OpKind::RepeatCols: return "repeat_cols";
    case OpKind::Exp: return "exp";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Square: return "square";
    case OpKind::LogSoftmax: return "log_softmax";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

Tensor& Var::mutable_value() {
  if (node_->kind != OpKind::Leaf && node_->kind != OpKind::Constant) {
    throw std::logic_error("Var::mutable_value: only leaves may be modified");
  }
  return node_->value;
}

Var variable(Tensor value) {
  if (!value.all_finite()) throw NumericalError("variable: non-finite leaf value");
  auto node = std::make_shared<Node>();
  node->kind = OpKind::Leaf;
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("constant: non-finite value");
  auto node = std::make_shared<Node>();
  node->kind = OpKind::Constant;
  node->value = std::move(value);
  return Var(std::move(node));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var matmul(const Var& a, const Var& b) {
  return make_node(OpKind::MatMul, fisherjscc::matmul(a.value(), b.value()), {a, b},
                   [a, b](const Var&, const Var& g) {
                     return std::vector<Var>{matmul(g, transpose(b)), matmul(transpose(a), g)};
                   });
}

Var transpose(const Var& a) {
  return make_node(OpKind::Transpose, a.value().transposed(), {a},
                   [](const Var&, const Var& g) { return std::vector<Var>{transpose(g)}; });
}

Var affine(const Var& x, const Var& w, const Var& bias) {
  if (x.cols() != w.rows() || bias.rows() != 1 || bias.cols() != w.cols()) {
    throw std::invalid_argument("affine: shapes do not conform (input " + shape_str(x.value()) +
                                ", weight " + shape_str(w.value()) + ", bias " +
                                shape_str(bias.value()) + ")");
  }
  Tensor out = fisherjscc::matmul(x.value(), w.value());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias.value()(0, j);
  }
  return make_node(OpKind::Affine, std::move(out), {x, w, bias},
                   [x, w](const Var&, const Var& g) {
                     return std::vector<Var>{matmul(g, transpose(w)), matmul(transpose(x), g),
                                             column_sums(g)};
                   });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  return make_node(OpKind::Add, zip_values(a.value(), b.value(), std::plus<>{}), {a, b},
                   [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  return make_node(OpKind::Sub, zip_values(a.value(), b.value(), std::minus<>{}), {a, b},
                   [](const Var&, const Var& g) { return std::vector<Var>{g, scale(g, -1.0)}; });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  return make_node(OpKind::Mul, zip_values(a.value(), b.value(), std::multiplies<>{}), {a, b},
                   [a, b](const Var&, const Var& g) {
                     return std::vector<Var>{mul(g, b), mul(g, a)};
                   });
}

Var scale(const Var& a, double s) {
  return make_node(OpKind::Scale, map_values(a.value(), [s](double v) { return v * s; }), {a},
                   [s](const Var&, const Var& g) { return std::vector<Var>{scale(g, s)}; });
}

Var add_scalar(const Var& a, double s) {
  return make_node(OpKind::AddScalar, map_values(a.value(), [s](double v) { return v + s; }), {a},
                   [](const Var&, const Var& g) { return std::vector<Var>{g}; });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: row " + shape_str(row.value()) + " does not fit " +
                                shape_str(a.value()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row.value()(0, j);
  }
  return make_node(OpKind::AddRow, std::move(out), {a, row}, [](const Var&, const Var& g) {
    return std::vector<Var>{g, column_sums(g)};
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t r = a.rows(), c = a.cols();
  return make_node(OpKind::Sum, Tensor::scalar(s), {a}, [r, c](const Var&, const Var& g) {
    return std::vector<Var>{expand_scalar(g, r, c)};
  });
}

Var column_sums(const Var& a) {
  Tensor out(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.value().row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out(0, j) += r[j];
  }
  const std::size_t rows = a.rows();
  return make_node(OpKind::ColumnSums, std::move(out), {a}, [rows](const Var&, const Var& g) {
    return std::vector<Var>{repeat_rows(g, rows)};
  });
}

Var row_sums(const Var& a) {
  Tensor out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double v : a.value().row(i)) s += v;
    out(i, 0) = s;
  }
  const std::size_t cols = a.cols();
  return make_node(OpKind::RowSums, std::move(out), {a}, [cols](const Var&, const Var& g) {
    return std::vector<Var>{repeat_cols(g, cols)};
  });
}

Var repeat_rows(const Var& row, std::size_t rows) {
  if (row.rows() != 1) throw std::invalid_argument("repeat_rows: input must have one row");
  Tensor out(rows, row.cols());
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(row.value().data().begin(), row.cols(), out.row(i).begin());
  return make_node(OpKind::RepeatRows, std::move(out), {row}, [](const Var&, const Var& g) {
    return std::vector<Var>{column_sums(g)};
  });
}

Var repeat_cols(const Var& col, std::size_t cols) {
  if (col.cols() != 1) throw std::invalid_argument("repeat_cols: input must have one column");
  Tensor out(col.rows(), cols);
  for (std::size_t i = 0; i < col.rows(); ++i) std::fill_n(out.row(i).begin(), cols, col.value()(i, 0));
  return make_node(OpKind::RepeatCols, std::move(out), {col}, [](const Var&, const Var& g) {
    return std::vector<Var>{row_sums(g)};
  });
}

Var exp(const Var& a) {
  return make_node(OpKind::Exp, map_values(a.value(), [](double v) { return std::exp(v); }), {a},
                   [](const Var& self, const Var& g) { return std::vector<Var>{mul(g, self)}; });
}

Var tanh(const Var& a) {
  return make_node(OpKind::Tanh, map_values(a.value(), [](double v) { return std::tanh(v); }), {a},
                   [](const Var& self, const Var& g) {
                     return std::vector<Var>{mul(g, add_scalar(scale(square(self), -1.0), 1.0))};
                   });
}

Var relu(const Var& a) {
  return make_node(OpKind::Relu, map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }),
                   {a}, [a](const Var&, const Var& g) {
                     Tensor mask = map_values(a.value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
                     return std::vector<Var>{mul(g, constant(std::move(mask)))};
                   });
}

Var square(const Var& a) {
  return make_node(OpKind::Square, map_values(a.value(), [](double v) { return v * v; }), {a},
                   [a](const Var&, const Var& g) { return std::vector<Var>{scale(mul(g, a), 2.0)}; });
}

Var activation(const Var& a, Activation kind) {
  return kind == Activation::relu ? relu(a) : tanh(a);
}

Var log_softmax(const Var& logits) {
  const Tensor& x = logits.value();
  if (x.cols() < 2) throw std::invalid_argument("log_softmax: need at least two classes");
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - m);
    const double lse = std::log(s);
    auto o = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) o[j] = (r[j] - m) - lse;
  }
  const std::size_t classes = x.cols();
  return make_node(OpKind::LogSoftmax, std::move(out), {logits},
                   [classes](const Var& self, const Var& g) {
                     return std::vector<Var>{
                         sub(g, mul(exp(self), repeat_cols(row_sums(g), classes)))};
                   });
}

std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph) {
  if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("grad: root must be a scalar (1x1) node");
  }

  std::unordered_map<const Node*, std::size_t> targets;
  for (std::size_t i = 0; i < wrt.size(); ++i) targets.emplace(wrt[i].node(), i);

  // Post-order over nodes from which some target is reachable.
  std::unordered_map<const Node*, bool> relevant;
  std::vector<Var> order;
  struct Frame {
    Var var;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  if (root.requires_grad()) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& top = stack.back();
    const Node* n = top.var.node();
    if (top.next_input < n->inputs.size()) {
      const Var& in = n->inputs[top.next_input++];
      if (in.requires_grad() && !relevant.contains(in.node())) stack.push_back({in, 0});
      continue;
    }
    bool rel = targets.contains(n);
    for (const Var& in : n->inputs) {
      auto it = relevant.find(in.node());
      if (it != relevant.end() && it->second) rel = true;
    }
    relevant[n] = rel;
    if (rel) order.push_back(top.var);
    stack.pop_back();
  }

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  std::unordered_map<const Node*, Var> grads;
  grads[root.node()] = constant(Tensor::scalar(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Var& self = *it;
    const Node* n = self.node();
    if (!n->backward) continue;
    auto g_it = grads.find(n);
    if (g_it == grads.end()) continue;
    const Var upstream = g_it->second;
    std::vector<Var> input_grads = n->backward(self, upstream);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      const Var& in = n->inputs[i];
      if (!input_grads[i].defined()) continue;
      auto r = relevant.find(in.node());
      if (r == relevant.end() || !r->second) continue;
      auto [slot, inserted] = grads.try_emplace(in.node(), input_grads[i]);
      if (!inserted) slot->second = add(slot->second, input_grads[i]);
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto it = grads.find(w.node());
    if (it != grads.end()) {
      out.push_back(it->second);
    } else {
      out.push_back(constant(Tensor(w.rows(), w.cols())));
    }
  }
  return out;
}

std::vector<Tensor> backward(const Var& root, std::span<const Var> wrt) {
  std::vector<Var> g = grad(root, wrt, false);
  std::vector<Tensor> out;
  out.reserve(g.size());
  for (const Var& v : g) out.push_back(v.value());
  return out;
}

}  // namespace fisherjscc::ad
