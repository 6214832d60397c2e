#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "srcfree/numcore.hpp"

namespace srcfree {

// Gaussian kernel averaged over a set of bandwidths:
//   k(a, b) = mean_σ exp(−‖a − b‖² / (2σ²))
struct KernelSpec {
  std::vector<double> bandwidths;

  void validate() const;
};

// σ₀ · {¼, ½, 1, 2, 4}
KernelSpec multi_bandwidth_kernel(double base_bandwidth);

// Median pairwise Euclidean distance over an evenly strided subsample of at
// most max_rows rows (average of the two middle values for an even count),
// floored at 1e-6. Requires at least two rows.
double median_bandwidth(const DenseMatrix& features, std::size_t max_rows = 1000);

double kernel_eval(const KernelSpec& spec, std::span<const double> a, std::span<const double> b);

// Biased class-conditioned MMD with diagonal terms and 1/(n·n) normalization:
//   mean k(s, s') + mean k(t, t') − 2 mean k(s, t)
double mmd_pair(const DenseMatrix& surrogate, const DenseMatrix& target, const KernelSpec& spec);

// One mini-batch: for each selected class, n_b target rows (which receive
// gradient) and n_b surrogate rows (constants).
struct CddBatch {
  std::vector<std::size_t> classes;
  std::vector<DenseMatrix> target;
  std::vector<DenseMatrix> surrogate;
};

struct CddResult {
  double loss = 0.0;
  double intra = 0.0;  // mean over k of MMD(k, k)
  double inter = 0.0;  // mean over ordered k1 ≠ k2 of MMD(k1, k2)
  std::vector<DenseMatrix> grad_target;  // same shapes as batch.target
};

// intra − inter, with the exact gradient with respect to every target row.
// Throws TooFewClasses when fewer than two classes are present.
CddResult cdd_loss(const CddBatch& batch, const KernelSpec& spec);

}  // namespace srcfree
