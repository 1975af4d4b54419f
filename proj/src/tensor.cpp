#include "cmas/tensor.hpp"

#include <numeric>
#include <sstream>

#include "cmas/errors.hpp"

namespace cmas {

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

Eigen::Index shape_size(const Shape& s) {
  Eigen::Index n = 1;
  for (auto d : s) n *= d;
  return n;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace {

Matrix canonical(const Shape& s, double v) {
  Eigen::Index r = 1, c = 1;
  if (s.size() == 1) {
    c = s[0];
  } else if (s.size() == 2) {
    r = s[0];
    c = s[1];
  } else if (s.size() > 2) {
    throw ShapeError("tensor rank > 2 unsupported: " + shape_to_string(s));
  }
  return Matrix::Constant(r, c, v);
}

}  // namespace

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.values(0, 0) = v;
  return t;
}

Tensor Tensor::row(std::initializer_list<double> v) { return row(std::vector<double>(v)); }

Tensor Tensor::row(const std::vector<double>& v) {
  Tensor t;
  t.shape = {static_cast<Eigen::Index>(v.size())};
  t.values.resize(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) t.values(0, static_cast<Eigen::Index>(i)) = v[i];
  return t;
}

Tensor Tensor::full(const Shape& s, double v) {
  Tensor t;
  t.shape = s;
  t.values = canonical(s, v);
  return t;
}

Tensor Tensor::zeros(const Shape& s) { return full(s, 0.0); }

Tensor Tensor::from_matrix(Matrix m) {
  Tensor t;
  t.shape = {m.rows(), m.cols()};
  t.values = std::move(m);
  return t;
}

double Tensor::item() const {
  if (values.size() != 1)
    throw ShapeError("item() requires a scalar tensor, got " + shape_to_string(shape));
  return values(0, 0);
}

Tensor constant_like(const Tensor& t, double v) {
  Tensor c;
  c.shape = t.shape;
  c.values = Matrix::Constant(t.values.rows(), t.values.cols(), v);
  return c;
}

}  // namespace cmas
