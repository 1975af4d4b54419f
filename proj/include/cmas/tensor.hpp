#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "cmas/rng.hpp"

namespace cmas {

// Logical shape, rank 0 (scalar), 1 (vector) or 2 (matrix).
using Shape = std::vector<Eigen::Index>;

std::string shape_to_string(const Shape& s);
Eigen::Index shape_size(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

constexpr long kNoNode = -1;

// Dense 64-bit tensor. Values live in an Eigen row-major matrix, so data()
// is the flat row-major array. Rank 0 maps to 1x1, rank 1 to 1xn.
//
// `node`/`tape_id` tie a tensor to the tape that produced it; a tensor with
// no live tape handle is a plain immutable value.
struct Tensor {
  Shape shape;
  Matrix values;
  long node = kNoNode;
  std::uint64_t tape_id = 0;

  Tensor() : values(1, 1) { values(0, 0) = 0.0; }
  Tensor(Shape s, Matrix v) : shape(std::move(s)), values(std::move(v)) {}

  static Tensor scalar(double v);
  static Tensor row(std::initializer_list<double> v);
  static Tensor row(const std::vector<double>& v);
  static Tensor full(const Shape& s, double v);
  static Tensor zeros(const Shape& s);
  // Wraps a matrix as a rank-2 tensor.
  static Tensor from_matrix(Matrix m);

  Eigen::Index size() const { return values.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return shape.empty(); }

  // Scalar value; throws ShapeError on non-scalars.
  double item() const;

  std::span<const double> flat() const { return {values.data(), static_cast<std::size_t>(values.size())}; }
  std::span<double> flat() { return {values.data(), static_cast<std::size_t>(values.size())}; }

  bool all_finite() const { return values.allFinite(); }
};

// Same shape, value v everywhere; convenient for building constants inline.
Tensor constant_like(const Tensor& t, double v);

}  // namespace cmas
