#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "srcfree/error.hpp"
#include "srcfree/numcore.hpp"

using namespace srcfree;

TEST_SUITE("numcore") {

TEST_CASE("cholesky of identity and diagonal") {
  CHECK(cholesky(DenseMatrix::identity(3)) == DenseMatrix::identity(3));
  const auto l = cholesky(DenseMatrix::from_rows({{4, 0}, {0, 9}}));
  CHECK(l == DenseMatrix::from_rows({{2, 0}, {0, 3}}));
}

TEST_CASE("cholesky reconstructs random SPD matrices") {
  SeededRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = oracle::random_matrix(6, 6, rng);
    DenseMatrix a = oracle::matmul(transpose(m), m);
    for (std::size_t i = 0; i < 6; ++i) a(i, i) += 1.0;
    const auto l = cholesky(a);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = i + 1; j < 6; ++j) CHECK(l(i, j) == 0.0);
    CHECK(oracle::max_abs_diff(oracle::matmul(l, transpose(l)), a) < 1e-10);
  }
}

TEST_CASE("cholesky recovers a lower-triangular factor") {
  SeededRng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    DenseMatrix l(5, 5);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < i; ++j) l(i, j) = rng.normal();
      l(i, i) = 0.5 + rng.uniform();
    }
    CHECK(oracle::max_abs_diff(cholesky(oracle::matmul(l, transpose(l))), l) < 1e-8);
  }
}

TEST_CASE("cholesky rejects indefinite input") {
  try {
    cholesky(DenseMatrix::from_rows({{1, 2}, {2, 1}}));
    FAIL("expected NotPositiveDefinite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotPositiveDefinite);
  }
  CHECK_THROWS_AS(cholesky(DenseMatrix(2, 3)), Error);
}

TEST_CASE("standard normal is deterministic per seed") {
  SeededRng a(0), b(0);
  CHECK(standard_normal(a, 2) == standard_normal(b, 2));
  SeededRng c(1);
  SeededRng d(0);
  CHECK(standard_normal(c, 4) != standard_normal(d, 4));
}

TEST_CASE("standard normal moments") {
  SeededRng rng(0);
  const auto z = standard_normal(rng, 100000);
  double mean = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(z.size());
  double var = 0.0;
  for (double v : z) var += (v - mean) * (v - mean);
  var /= static_cast<double>(z.size());
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("uniform_index stays in range and covers it") {
  SeededRng rng(3);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = rng.uniform_index(7);
    REQUIRE(v < 7);
    ++hits[v];
  }
  for (int h : hits) CHECK(h > 800);
}

TEST_CASE("forked streams differ and are reproducible") {
  SeededRng a(5), b(5);
  auto fa = a.fork(1);
  auto fb = b.fork(1);
  CHECK(fa.next_u64() == fb.next_u64());
  SeededRng c(5);
  auto fc = c.fork(2);
  SeededRng d(5);
  auto fd = d.fork(1);
  CHECK(fc.next_u64() != fd.next_u64());
}

TEST_CASE("dense kernels") {
  const std::vector<double> v{3, 4};
  CHECK(l2_norm(v) == 5.0);
  SeededRng rng(4);
  const auto a = oracle::random_matrix(5, 5, rng);
  const auto b = oracle::random_matrix(5, 5, rng);
  CHECK(matmul(a, DenseMatrix::identity(5)) == a);
  CHECK(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-12);
  CHECK(oracle::max_abs_diff(matmul_transposed(a, b), oracle::matmul(a, transpose(b))) < 1e-12);
  CHECK(oracle::max_abs_diff(transposed_matmul(a, b), oracle::matmul(transpose(a), b)) < 1e-12);
  CHECK(transpose(transpose(a)) == a);
  CHECK(trace(DenseMatrix::identity(4)) == 4.0);

  DenseMatrix y = a;
  axpy(2.0, b, y);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.values()[i] == a.values()[i] + 2.0 * b.values()[i]);
  CHECK_THROWS_AS(matmul(DenseMatrix(2, 3), DenseMatrix(2, 3)), Error);
}

TEST_CASE("shuffle is a permutation") {
  SeededRng rng(9);
  std::vector<std::size_t> idx(50);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  shuffle_indices(idx, rng);
  auto sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

}
