#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmas/autodiff.hpp"
#include "cmas/tensor.hpp"

namespace cmas {

enum class OptKind { sgd, adam };

std::string_view opt_kind_name(OptKind k);
OptKind parse_opt_kind(const std::string& s);

// Named handle on a trainable tensor. Names double as keys for the Adam
// moment buffers and for checkpoints, so they must be unique and stable.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
};

using ParamSet = std::vector<ParamRef>;

class Optimizer {
 public:
  explicit Optimizer(OptKind kind, double lr) : kind_(kind), lr_(lr) {}

  // Applies one update from the gradient map. Every parameter must have a
  // gradient; a missing one is an error naming the parameter.
  void step(const ParamSet& params, const Gradients& grads);

  std::int64_t step_count() const { return step_count_; }
  double learning_rate() const { return lr_; }
  OptKind kind() const { return kind_; }

 private:
  OptKind kind_;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t step_count_ = 0;
  std::unordered_map<std::string, Matrix> m_;
  std::unordered_map<std::string, Matrix> v_;
};

}  // namespace cmas
