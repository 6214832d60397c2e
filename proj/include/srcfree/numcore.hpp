#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "srcfree/error.hpp"

namespace srcfree {

// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool operator==(const DenseMatrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// a * bᵀ without materializing the transpose.
DenseMatrix matmul_transposed(const DenseMatrix& a, const DenseMatrix& b);
// aᵀ * b without materializing the transpose.
DenseMatrix transposed_matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);

// y <- alpha * x + y
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void axpy(double alpha, const DenseMatrix& x, DenseMatrix& y);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> x);
double squared_distance(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const DenseMatrix& a);
double trace(const DenseMatrix& a);

// Lower-triangular L with L·Lᵀ = a. Throws NotPositiveDefinite on a pivot <= 0.
DenseMatrix cholesky(const DenseMatrix& a);

// xoshiro256** seeded through splitmix64. Fully specified so that a seed
// produces the same stream on every platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, bound), bound > 0, unbiased (rejection).
  std::uint64_t uniform_index(std::uint64_t bound);
  // Standard normal via the Box-Muller transform; the second variate of each
  // pair is cached.
  double normal();

  // A child generator whose stream is a deterministic function of this
  // generator's current state and the given tag.
  SeededRng fork(std::uint64_t tag);

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

std::vector<double> standard_normal(SeededRng& rng, std::size_t n);

// Fisher-Yates shuffle driven by the given rng.
void shuffle_indices(std::vector<std::size_t>& indices, SeededRng& rng);

}  // namespace srcfree
