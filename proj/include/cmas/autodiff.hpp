#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmas/tensor.hpp"

namespace cmas {

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  mul,
  exp,
  log,
  tanh,
  relu,
  sigmoid,
  sum,
  mean,
  square,
  broadcast_add_row,
};

// The 13 computational kinds, in a fixed order (leaf excluded).
std::span<const OpKind> all_op_kinds();
std::string_view op_kind_name(OpKind k);

struct TapeNode {
  OpKind kind = OpKind::leaf;
  std::array<long, 2> inputs{kNoNode, kNoNode};
  Shape shape;
  Matrix value;  // saved forward value
  bool requires_grad = false;
};

// Gradient map produced by Tape::backward. Lookup either by the tensor that
// owns the node (op results, watched parameters) or by raw node id.
class Gradients {
 public:
  // Gradient of the loss w.r.t. `t`; throws GradientError when t has none.
  const Matrix& of(const Tensor& t) const;
  bool contains(const Tensor& t) const;
  const Matrix* find_node(long node) const;

 private:
  friend class Tape;
  std::uint64_t tape_id_ = 0;
  std::unordered_map<long, Matrix> by_node_;
  std::unordered_map<const Tensor*, long> watched_;
  long node_of(const Tensor& t) const;
};

// Dynamic (define-by-run) tape. One tape per training step; ops record onto
// the active tape installed by TapeScope. Node ids are topologically ordered
// by construction: every input id precedes its consumer.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t node_count() const { return nodes_.size(); }
  const TapeNode& node(long i) const { return nodes_.at(static_cast<std::size_t>(i)); }

  // Marks a parameter as differentiable on this tape. The tensor must stay
  // alive and unmodified until backward() has run.
  void watch(const Tensor& t);

  // Reverse sweep from a scalar loss recorded on this tape. Seeds the loss
  // gradient with 1.0. Every watched tensor ends up with a gradient (zeros
  // when the loss does not reach it).
  Gradients backward(const Tensor& loss) const;

  // Resolves a tensor to a node id, recording a fresh constant leaf when it
  // is not already on this tape.
  long input_id(const Tensor& t);
  long record(OpKind kind, std::array<long, 2> in, Shape shape, Matrix value);

 private:
  std::uint64_t id_;
  std::vector<TapeNode> nodes_;
  std::unordered_map<const Tensor*, long> watched_;
};

// Installs a tape as the active one for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

// Forward ops. Each computes the mathematical definition elementwise and
// records on the active tape (when one is installed). Inputs with no tape
// handle enter as constant leaves.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor square(const Tensor& a);
Tensor broadcast_add_row(const Tensor& m, const Tensor& row);

// Dispatch by kind; used by the gradient-check suite.
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs);

// Composed helpers (no new op kinds).
Tensor scale(const Tensor& t, double c);                      // t * c
Tensor clamp_range(const Tensor& t, double lo, double hi);    // lo + relu(t-lo) - relu(t-hi)

// Max over coordinates of |analytic - central difference| / max(1, |cd|).
// f must map a tensor to a scalar and be re-evaluable (re-seed any internal
// randomness per call). Throws GradientError on a non-finite probe value.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

// Same check against a parameter embedded in a larger computation: loss_fn
// evaluates the loss through `param` itself, and the numeric probe perturbs
// param in place.
double grad_check_param(const std::function<Tensor()>& loss_fn, Tensor& param, double eps);

namespace debug {
// Test hook: corrupt the backward rule of one op kind (gradcheck mutation
// test). No-op in normal operation.
void corrupt_backward(OpKind kind, bool enabled);
bool backward_corrupted(OpKind kind);
}  // namespace debug

}  // namespace cmas
