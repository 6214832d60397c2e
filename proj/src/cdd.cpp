#include "srcfree/cdd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace srcfree {

void KernelSpec::validate() const {
  if (bandwidths.empty()) throw Error(ErrorCode::InvalidConfig, "kernel needs at least one bandwidth");
  for (double s : bandwidths) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidConfig, "bandwidth must be positive");
  }
}

KernelSpec multi_bandwidth_kernel(double base_bandwidth) {
  KernelSpec spec;
  for (double f : {0.25, 0.5, 1.0, 2.0, 4.0}) spec.bandwidths.push_back(base_bandwidth * f);
  spec.validate();
  return spec;
}

double median_bandwidth(const DenseMatrix& features, std::size_t max_rows) {
  const std::size_t n = features.rows();
  if (n < 2) throw Error(ErrorCode::ShapeMismatch, "median bandwidth needs at least two rows");
  const std::size_t used = std::min(n, std::max<std::size_t>(2, max_rows));
  std::vector<std::size_t> rows(used);
  for (std::size_t i = 0; i < used; ++i) rows[i] = i * n / used;

  std::vector<double> dists;
  dists.reserve(used * (used - 1) / 2);
  for (std::size_t i = 0; i < used; ++i) {
    for (std::size_t j = i + 1; j < used; ++j) {
      dists.push_back(std::sqrt(squared_distance(features.row(rows[i]), features.row(rows[j]))));
    }
  }
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  double median = dists[mid];
  if (dists.size() % 2 == 0) {
    const double lower = *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (lower + median);
  }
  return std::max(median, 1e-6);
}

namespace {

struct KernelTerms {
  std::vector<double> inv_two_sigma_sq;
  std::vector<double> inv_sigma_sq;
  double inv_count;

  explicit KernelTerms(const KernelSpec& spec) : inv_count(1.0 / static_cast<double>(spec.bandwidths.size())) {
    for (double s : spec.bandwidths) {
      inv_two_sigma_sq.push_back(1.0 / (2.0 * s * s));
      inv_sigma_sq.push_back(1.0 / (s * s));
    }
  }

  double value(double sq_dist) const {
    double v = 0.0;
    for (double c : inv_two_sigma_sq) v += std::exp(-sq_dist * c);
    return v * inv_count;
  }

  // k value and g such that ∂k(a, b)/∂a = −g · (a − b).
  void value_and_slope(double sq_dist, double& value_out, double& slope_out) const {
    double v = 0.0;
    double g = 0.0;
    for (std::size_t s = 0; s < inv_sigma_sq.size(); ++s) {
      const double e = std::exp(-sq_dist * inv_two_sigma_sq[s]);
      v += e;
      g += e * inv_sigma_sq[s];
    }
    value_out = v * inv_count;
    slope_out = g * inv_count;
  }
};

double block_mean(const DenseMatrix& a, const DenseMatrix& b, const KernelTerms& terms) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) s += terms.value(squared_distance(a.row(i), b.row(j)));
  }
  return s / static_cast<double>(a.rows() * b.rows());
}

// Mean of k(x_i, y_j) over the block and, when grad is given, accumulate
// scale · ∂(mean)/∂y into grad (rows of y).
double block_mean_grad_right(const DenseMatrix& x, const DenseMatrix& y, const KernelTerms& terms,
                             double scale, DenseMatrix& grad) {
  const double norm = 1.0 / static_cast<double>(x.rows() * y.rows());
  const std::size_t m = y.cols();
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    for (std::size_t j = 0; j < y.rows(); ++j) {
      auto yj = y.row(j);
      double k = 0.0;
      double g = 0.0;
      terms.value_and_slope(squared_distance(xi, yj), k, g);
      s += k;
      // ∂k(x, y)/∂y = −g (y − x)
      const double c = -scale * norm * g;
      auto grow = grad.row(j);
      for (std::size_t d = 0; d < m; ++d) grow[d] += c * (yj[d] - xi[d]);
    }
  }
  return s * norm;
}

// Mean of k(y_i, y_j) and scale · its gradient with respect to y.
double self_block_grad(const DenseMatrix& y, const KernelTerms& terms, double scale, DenseMatrix& grad) {
  const double norm = 1.0 / static_cast<double>(y.rows() * y.rows());
  const std::size_t m = y.cols();
  double s = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yi = y.row(i);
    for (std::size_t j = 0; j < y.rows(); ++j) {
      auto yj = y.row(j);
      double k = 0.0;
      double g = 0.0;
      terms.value_and_slope(squared_distance(yi, yj), k, g);
      s += k;
      // Each ordered pair contributes to both endpoints.
      const double c = -scale * norm * g;
      auto gi = grad.row(i);
      auto gj = grad.row(j);
      for (std::size_t d = 0; d < m; ++d) {
        const double diff = yi[d] - yj[d];
        gi[d] += c * diff;
        gj[d] -= c * diff;
      }
    }
  }
  return s * norm;
}

}  // namespace

double kernel_eval(const KernelSpec& spec, std::span<const double> a, std::span<const double> b) {
  spec.validate();
  return KernelTerms(spec).value(squared_distance(a, b));
}

double mmd_pair(const DenseMatrix& surrogate, const DenseMatrix& target, const KernelSpec& spec) {
  spec.validate();
  if (surrogate.rows() == 0 || target.rows() == 0 || surrogate.cols() != target.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "mmd_pair needs non-empty sets of equal dimension");
  }
  const KernelTerms terms(spec);
  return block_mean(surrogate, surrogate, terms) + block_mean(target, target, terms) -
         2.0 * block_mean(surrogate, target, terms);
}

CddResult cdd_loss(const CddBatch& batch, const KernelSpec& spec) {
  spec.validate();
  const std::size_t c = batch.target.size();
  if (batch.surrogate.size() != c || batch.classes.size() != c) {
    throw Error(ErrorCode::ShapeMismatch, "batch class lists differ in length");
  }
  if (c < 2) throw Error(ErrorCode::TooFewClasses, "CDD needs at least two classes");
  const std::size_t nb = batch.target.front().rows();
  const std::size_t m = batch.target.front().cols();
  for (std::size_t a = 0; a < c; ++a) {
    if (batch.target[a].rows() != nb || batch.surrogate[a].rows() != nb || batch.target[a].cols() != m ||
        batch.surrogate[a].cols() != m || nb == 0) {
      throw Error(ErrorCode::ShapeMismatch, "every class needs n_b rows on both sides");
    }
  }
  const KernelTerms terms(spec);
  const double w_intra = 1.0 / static_cast<double>(c);
  const double w_inter = 1.0 / static_cast<double>(c * (c - 1));

  CddResult result;
  result.grad_target.assign(c, DenseMatrix(nb, m));

  std::vector<double> ss(c);
  std::vector<double> tt(c);
  for (std::size_t a = 0; a < c; ++a) {
    ss[a] = block_mean(batch.surrogate[a], batch.surrogate[a], terms);
    // TT(a) enters once with weight w_intra and (c − 1) times with −w_inter.
    const double tt_weight = w_intra - static_cast<double>(c - 1) * w_inter;
    tt[a] = self_block_grad(batch.target[a], terms, tt_weight, result.grad_target[a]);
  }
  double intra = 0.0;
  double inter = 0.0;
  for (std::size_t k1 = 0; k1 < c; ++k1) {
    for (std::size_t k2 = 0; k2 < c; ++k2) {
      const double weight = (k1 == k2) ? w_intra : -w_inter;
      const double st = block_mean_grad_right(batch.surrogate[k1], batch.target[k2], terms, -2.0 * weight,
                                              result.grad_target[k2]);
      const double mmd = ss[k1] + tt[k2] - 2.0 * st;
      if (k1 == k2) {
        intra += mmd;
      } else {
        inter += mmd;
      }
    }
  }
  result.intra = intra * w_intra;
  result.inter = inter * w_inter;
  result.loss = result.intra - result.inter;
  return result;
}

}  // namespace srcfree
