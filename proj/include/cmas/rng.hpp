#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cmas {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Deterministic random stream. Every source of randomness in a run is an
// RngStream seeded from the run seed via derive_seed, so two runs with the
// same seed consume identical draws in identical order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  double normal() { return normal_(gen_); }
  double uniform() { return uniform_(gen_); }

  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), gen_);
  }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Mixes a root seed with a stream name so that independent consumers
// (shuffling, eps draws, pairing, init) never share a stream.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

// FNV-1a over a byte range; used for parameter and file checksums.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace cmas
