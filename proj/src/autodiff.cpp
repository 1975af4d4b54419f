#include "cmas/autodiff.hpp"

#include <atomic>
#include <cmath>

#include "cmas/errors.hpp"

namespace cmas {

namespace {

constexpr double kLogGuard = 1e-12;  // log input clamp
constexpr double kExpGuard = 700.0;  // exp input clamp, e^700 is still finite

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

constexpr OpKind kAllKinds[] = {
    OpKind::matmul, OpKind::add,  OpKind::sub,  OpKind::mul,    OpKind::exp,
    OpKind::log,    OpKind::tanh, OpKind::relu, OpKind::sigmoid, OpKind::sum,
    OpKind::mean,   OpKind::square, OpKind::broadcast_add_row,
};

OpKind g_corrupted = OpKind::leaf;  // leaf == none

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::span<const OpKind> all_op_kinds() { return kAllKinds; }

std::string_view op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::square: return "square";
    case OpKind::broadcast_add_row: return "broadcast-add-row";
  }
  return "?";
}

namespace debug {
void corrupt_backward(OpKind kind, bool enabled) { g_corrupted = enabled ? kind : OpKind::leaf; }
bool backward_corrupted(OpKind kind) { return g_corrupted == kind; }
}  // namespace debug

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

void Tape::watch(const Tensor& t) {
  if (watched_.count(&t)) return;
  long id = record(OpKind::leaf, {kNoNode, kNoNode}, t.shape, t.values);
  nodes_.back().requires_grad = true;
  watched_.emplace(&t, id);
}

long Tape::input_id(const Tensor& t) {
  if (t.tape_id == id_ && t.node >= 0) return t.node;
  auto it = watched_.find(&t);
  if (it != watched_.end()) return it->second;
  return record(OpKind::leaf, {kNoNode, kNoNode}, t.shape, t.values);
}

long Tape::record(OpKind kind, std::array<long, 2> in, Shape shape, Matrix value) {
  TapeNode n;
  n.kind = kind;
  n.inputs = in;
  n.shape = std::move(shape);
  n.value = std::move(value);
  if (kind != OpKind::leaf) {
    n.requires_grad = (in[0] >= 0 && nodes_[static_cast<std::size_t>(in[0])].requires_grad) ||
                      (in[1] >= 0 && nodes_[static_cast<std::size_t>(in[1])].requires_grad);
  }
  nodes_.push_back(std::move(n));
  return static_cast<long>(nodes_.size()) - 1;
}

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
TapeScope::~TapeScope() { g_active_tape = prev_; }
Tape* active_tape() { return g_active_tape; }

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

namespace {

void check_same_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape, b.shape))
    throw ShapeError(std::string(op_kind_name(kind)) + ": shape mismatch " +
                     shape_to_string(a.shape) + " vs " + shape_to_string(b.shape));
}

Tensor record_result(OpKind kind, std::initializer_list<const Tensor*> inputs, Shape shape,
                     Matrix value) {
  Tensor out;
  out.shape = std::move(shape);
  out.values = std::move(value);
  if (Tape* tape = active_tape()) {
    std::array<long, 2> ids{kNoNode, kNoNode};
    std::size_t i = 0;
    for (const Tensor* t : inputs) ids[i++] = tape->input_id(*t);
    out.node = tape->record(kind, ids, out.shape, out.values);
    out.tape_id = tape->id();
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    throw ShapeError("matmul: shape mismatch " + shape_to_string(a.shape) + " vs " +
                     shape_to_string(b.shape));
  Matrix v = a.values * b.values;
  return record_result(OpKind::matmul, {&a, &b}, {a.shape[0], b.shape[1]}, std::move(v));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(OpKind::add, a, b);
  return record_result(OpKind::add, {&a, &b}, a.shape, a.values + b.values);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(OpKind::sub, a, b);
  return record_result(OpKind::sub, {&a, &b}, a.shape, a.values - b.values);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(OpKind::mul, a, b);
  return record_result(OpKind::mul, {&a, &b}, a.shape, a.values.cwiseProduct(b.values));
}

Tensor exp(const Tensor& a) {
  Matrix v = a.values.unaryExpr([](double x) { return std::exp(std::min(x, kExpGuard)); });
  return record_result(OpKind::exp, {&a}, a.shape, std::move(v));
}

Tensor log(const Tensor& a) {
  Matrix v = a.values.unaryExpr([](double x) { return std::log(std::max(x, kLogGuard)); });
  return record_result(OpKind::log, {&a}, a.shape, std::move(v));
}

Tensor tanh(const Tensor& a) {
  return record_result(OpKind::tanh, {&a}, a.shape, a.values.array().tanh().matrix());
}

Tensor relu(const Tensor& a) {
  return record_result(OpKind::relu, {&a}, a.shape, a.values.cwiseMax(0.0));
}

Tensor sigmoid(const Tensor& a) {
  Matrix v = a.values.unaryExpr([](double x) { return sigmoid_scalar(x); });
  return record_result(OpKind::sigmoid, {&a}, a.shape, std::move(v));
}

Tensor sum(const Tensor& a) {
  Matrix v(1, 1);
  v(0, 0) = a.values.sum();
  return record_result(OpKind::sum, {&a}, {}, std::move(v));
}

Tensor mean(const Tensor& a) {
  Matrix v(1, 1);
  v(0, 0) = a.values.mean();
  return record_result(OpKind::mean, {&a}, {}, std::move(v));
}

Tensor square(const Tensor& a) {
  return record_result(OpKind::square, {&a}, a.shape, a.values.cwiseProduct(a.values));
}

Tensor broadcast_add_row(const Tensor& m, const Tensor& row) {
  if (m.rank() != 2 || row.rank() != 1 || m.shape[1] != row.shape[0])
    throw ShapeError("broadcast-add-row: shape mismatch " + shape_to_string(m.shape) + " vs " +
                     shape_to_string(row.shape));
  Matrix v = m.values;
  v.rowwise() += row.values.row(0);
  return record_result(OpKind::broadcast_add_row, {&m, &row}, m.shape, std::move(v));
}

Tensor forward_op(OpKind kind, std::span<const Tensor> in) {
  auto want = [&](std::size_t n) {
    if (in.size() != n)
      throw ShapeError(std::string(op_kind_name(kind)) + ": expected " + std::to_string(n) +
                       " inputs, got " + std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::matmul: want(2); return matmul(in[0], in[1]);
    case OpKind::add: want(2); return add(in[0], in[1]);
    case OpKind::sub: want(2); return sub(in[0], in[1]);
    case OpKind::mul: want(2); return mul(in[0], in[1]);
    case OpKind::exp: want(1); return exp(in[0]);
    case OpKind::log: want(1); return log(in[0]);
    case OpKind::tanh: want(1); return tanh(in[0]);
    case OpKind::relu: want(1); return relu(in[0]);
    case OpKind::sigmoid: want(1); return sigmoid(in[0]);
    case OpKind::sum: want(1); return sum(in[0]);
    case OpKind::mean: want(1); return mean(in[0]);
    case OpKind::square: want(1); return square(in[0]);
    case OpKind::broadcast_add_row: want(2); return broadcast_add_row(in[0], in[1]);
    case OpKind::leaf: break;
  }
  throw ShapeError("forward_op: unsupported kind");
}

Tensor scale(const Tensor& t, double c) { return mul(t, constant_like(t, c)); }

Tensor clamp_range(const Tensor& t, double lo, double hi) {
  Tensor lo_t = constant_like(t, lo);
  Tensor hi_t = constant_like(t, hi);
  return add(lo_t, sub(relu(sub(t, lo_t)), relu(sub(t, hi_t))));
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {

// Adjoint accumulation per node; matrices materialized on first touch.
struct Adjoints {
  std::vector<Matrix> grad;
  std::vector<char> has;
  explicit Adjoints(std::size_t n) : grad(n), has(n, 0) {}
  void accumulate(long i, const Matrix& g) {
    auto u = static_cast<std::size_t>(i);
    if (!has[u]) {
      grad[u] = g;
      has[u] = 1;
    } else {
      grad[u] += g;
    }
  }
};

}  // namespace

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.tape_id != id_ || loss.node < 0 || loss.node >= static_cast<long>(nodes_.size()))
    throw TapeError("backward: loss is not on this tape");
  if (!loss.shape.empty()) throw TapeError("backward: loss must be a scalar, got " + shape_to_string(loss.shape));

  Adjoints adj(nodes_.size());
  adj.accumulate(loss.node, Matrix::Constant(1, 1, 1.0));

  for (long i = loss.node; i >= 0; --i) {
    const TapeNode& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !adj.has[static_cast<std::size_t>(i)]) continue;
    if (n.kind == OpKind::leaf) continue;
    const Matrix& g = adj.grad[static_cast<std::size_t>(i)];

    auto in_node = [&](int k) -> const TapeNode& { return nodes_[static_cast<std::size_t>(n.inputs[k])]; };
    auto wants = [&](int k) { return n.inputs[k] >= 0 && in_node(k).requires_grad; };

    double flip = debug::backward_corrupted(n.kind) ? -1.0 : 1.0;

    switch (n.kind) {
      case OpKind::matmul: {
        const Matrix& a = in_node(0).value;
        const Matrix& b = in_node(1).value;
        if (wants(0)) adj.accumulate(n.inputs[0], flip * (g * b.transpose()));
        if (wants(1)) adj.accumulate(n.inputs[1], flip * (a.transpose() * g));
        break;
      }
      case OpKind::add: {
        if (wants(0)) adj.accumulate(n.inputs[0], flip * g);
        if (wants(1)) adj.accumulate(n.inputs[1], flip * g);
        break;
      }
      case OpKind::sub: {
        if (wants(0)) adj.accumulate(n.inputs[0], flip * g);
        if (wants(1)) adj.accumulate(n.inputs[1], Matrix(flip * -g));
        break;
      }
      case OpKind::mul: {
        const Matrix& a = in_node(0).value;
        const Matrix& b = in_node(1).value;
        if (wants(0)) adj.accumulate(n.inputs[0], flip * g.cwiseProduct(b));
        if (wants(1)) adj.accumulate(n.inputs[1], flip * g.cwiseProduct(a));
        break;
      }
      case OpKind::exp: {
        if (wants(0)) {
          const Matrix& x = in_node(0).value;
          Matrix mask = x.unaryExpr([](double v) { return v < kExpGuard ? 1.0 : 0.0; });
          adj.accumulate(n.inputs[0], flip * g.cwiseProduct(n.value).cwiseProduct(mask));
        }
        break;
      }
      case OpKind::log: {
        if (wants(0)) {
          const Matrix& x = in_node(0).value;
          Matrix d = x.unaryExpr([](double v) { return v >= kLogGuard ? 1.0 / v : 0.0; });
          adj.accumulate(n.inputs[0], flip * g.cwiseProduct(d));
        }
        break;
      }
      case OpKind::tanh: {
        if (wants(0)) {
          Matrix d = (1.0 - n.value.array().square()).matrix();
          adj.accumulate(n.inputs[0], flip * g.cwiseProduct(d));
        }
        break;
      }
      case OpKind::relu: {
        if (wants(0)) {
          const Matrix& x = in_node(0).value;
          Matrix d = x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
          adj.accumulate(n.inputs[0], flip * g.cwiseProduct(d));
        }
        break;
      }
      case OpKind::sigmoid: {
        if (wants(0)) {
          Matrix d = n.value.cwiseProduct((1.0 - n.value.array()).matrix());
          adj.accumulate(n.inputs[0], flip * g.cwiseProduct(d));
        }
        break;
      }
      case OpKind::sum: {
        if (wants(0)) {
          const TapeNode& a = in_node(0);
          adj.accumulate(n.inputs[0], Matrix::Constant(a.value.rows(), a.value.cols(), flip * g(0, 0)));
        }
        break;
      }
      case OpKind::mean: {
        if (wants(0)) {
          const TapeNode& a = in_node(0);
          double d = flip * g(0, 0) / static_cast<double>(a.value.size());
          adj.accumulate(n.inputs[0], Matrix::Constant(a.value.rows(), a.value.cols(), d));
        }
        break;
      }
      case OpKind::square: {
        if (wants(0)) {
          const Matrix& x = in_node(0).value;
          adj.accumulate(n.inputs[0], flip * 2.0 * g.cwiseProduct(x));
        }
        break;
      }
      case OpKind::broadcast_add_row: {
        if (wants(0)) adj.accumulate(n.inputs[0], flip * g);
        if (wants(1)) adj.accumulate(n.inputs[1], Matrix(flip * g.colwise().sum()));
        break;
      }
      case OpKind::leaf:
        break;
    }
  }

  Gradients out;
  out.tape_id_ = id_;
  out.watched_ = watched_;
  for (const auto& [tensor, id] : watched_) {
    auto u = static_cast<std::size_t>(id);
    if (adj.has[u]) {
      out.by_node_.emplace(id, std::move(adj.grad[u]));
    } else {
      const TapeNode& n = nodes_[u];
      out.by_node_.emplace(id, Matrix::Zero(n.value.rows(), n.value.cols()));
    }
  }
  // Keep adjoints of op results too; tests inspect intermediate gradients.
  for (std::size_t u = 0; u < nodes_.size(); ++u) {
    long id = static_cast<long>(u);
    if (adj.has[u] && !out.by_node_.count(id)) out.by_node_.emplace(id, std::move(adj.grad[u]));
  }
  return out;
}

long Gradients::node_of(const Tensor& t) const {
  if (t.tape_id == tape_id_ && t.node >= 0) return t.node;
  auto it = watched_.find(&t);
  if (it != watched_.end()) return it->second;
  return kNoNode;
}

bool Gradients::contains(const Tensor& t) const {
  long id = node_of(t);
  return id >= 0 && by_node_.count(id) > 0;
}

const Matrix& Gradients::of(const Tensor& t) const {
  long id = node_of(t);
  if (id < 0 || !by_node_.count(id))
    throw GradientError("no gradient recorded for tensor");
  return by_node_.at(id);
}

const Matrix* Gradients::find_node(long node) const {
  auto it = by_node_.find(node);
  return it == by_node_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace {

double max_rel_error(const Matrix& analytic, Tensor& probe,
                     const std::function<double()>& eval, double eps) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < probe.values.size(); ++k) {
    double saved = probe.values.data()[k];
    probe.values.data()[k] = saved + eps;
    double fp = eval();
    probe.values.data()[k] = saved - eps;
    double fm = eval();
    probe.values.data()[k] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw GradientError("grad_check: non-finite value while probing coordinate " + std::to_string(k));
    double numeric = (fp - fm) / (2.0 * eps);
    double err = std::abs(analytic.data()[k] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (eps <= 0.0) throw GradientError("grad_check: eps must be positive");

  Tensor probe = x;
  probe.node = kNoNode;
  probe.tape_id = 0;

  Matrix analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    tape.watch(probe);
    Tensor y = f(probe);
    if (!y.is_scalar()) throw TapeError("grad_check: f must return a scalar");
    analytic = tape.backward(y).of(probe);
  }
  return max_rel_error(analytic, probe, [&] { return f(probe).item(); }, eps);
}

double grad_check_param(const std::function<Tensor()>& loss_fn, Tensor& param, double eps) {
  if (eps <= 0.0) throw GradientError("grad_check: eps must be positive");

  Matrix analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    tape.watch(param);
    Tensor y = loss_fn();
    if (!y.is_scalar()) throw TapeError("grad_check: loss must be a scalar");
    analytic = tape.backward(y).of(param);
  }
  return max_rel_error(analytic, param, [&] { return loss_fn().item(); }, eps);
}

}  // namespace cmas
