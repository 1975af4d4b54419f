#include "cmas/optim.hpp"

#include <cmath>

#include "cmas/errors.hpp"

namespace cmas {

std::string_view opt_kind_name(OptKind k) { return k == OptKind::sgd ? "sgd" : "adam"; }

OptKind parse_opt_kind(const std::string& s) {
  if (s == "sgd") return OptKind::sgd;
  if (s == "adam") return OptKind::adam;
  throw ConfigError("unknown optimizer: " + s);
}

void Optimizer::step(const ParamSet& params, const Gradients& grads) {
  ++step_count_;
  double t = static_cast<double>(step_count_);
  for (const ParamRef& p : params) {
    if (!p.value || !grads.contains(*p.value))
      throw GradientError("optimizer: missing gradient for parameter " + p.name);
    const Matrix& g = grads.of(*p.value);
    Matrix& w = p.value->values;
    if (g.rows() != w.rows() || g.cols() != w.cols())
      throw GradientError("optimizer: gradient shape mismatch for parameter " + p.name);

    if (kind_ == OptKind::sgd) {
      w -= lr_ * g;
      continue;
    }
    Matrix& m = m_.try_emplace(p.name, Matrix::Zero(w.rows(), w.cols())).first->second;
    Matrix& v = v_.try_emplace(p.name, Matrix::Zero(w.rows(), w.cols())).first->second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    double mc = 1.0 - std::pow(beta1_, t);
    double vc = 1.0 - std::pow(beta2_, t);
    w.array() -= lr_ * (m.array() / mc) / ((v.array() / vc).sqrt() + eps_);
  }
}

}  // namespace cmas
