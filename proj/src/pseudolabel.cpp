#include "srcfree/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace srcfree {

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine distance of a zero vector");
  const double cosine = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  return 0.5 * (1.0 - cosine);
}

DenseMatrix anchor_rows(const ModelParams& params) { return transpose(params.classifier); }

namespace {

// Distance from a unit feature to each center, using precomputed center norms.
int nearest_unit(std::span<const double> unit_feature, const DenseMatrix& centers,
                 std::span<const double> center_norms, double* best_dist) {
  int best = -1;
  double best_d = 0.0;
  for (std::size_t k = 0; k < centers.rows(); ++k) {
    if (center_norms[k] == 0.0) continue;
    const double cosine = std::clamp(dot(unit_feature, centers.row(k)) / center_norms[k], -1.0, 1.0);
    const double d = 0.5 * (1.0 - cosine);
    if (best < 0 || d < best_d) {
      best = static_cast<int>(k);
      best_d = d;
    }
  }
  if (best_dist) *best_dist = best_d;
  return best;
}

std::vector<double> row_norms(const DenseMatrix& m) {
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = l2_norm(m.row(r));
  return out;
}

DenseMatrix normalized_rows(const DenseMatrix& features) {
  DenseMatrix unit = features;
  for (std::size_t r = 0; r < unit.rows(); ++r) {
    auto row = unit.row(r);
    const double n = l2_norm(row);
    if (n == 0.0) throw Error(ErrorCode::ZeroVector, "feature row " + std::to_string(r) + " is zero");
    for (double& v : row) v /= n;
  }
  return unit;
}

double assign_all(const DenseMatrix& unit, const DenseMatrix& centers, std::vector<int>& out) {
  const auto norms = row_norms(centers);
  double total = 0.0;
  out.resize(unit.rows());
  for (std::size_t i = 0; i < unit.rows(); ++i) {
    double d = 0.0;
    out[i] = nearest_unit(unit.row(i), centers, norms, &d);
    total += d;
  }
  return total / static_cast<double>(unit.rows());
}

}  // namespace

int nearest_center(std::span<const double> feature, const DenseMatrix& centers) {
  const double n = l2_norm(feature);
  if (n == 0.0) throw Error(ErrorCode::ZeroVector, "feature is zero");
  std::vector<double> unit(feature.begin(), feature.end());
  for (double& v : unit) v /= n;
  const auto norms = row_norms(centers);
  const int k = nearest_unit(unit, centers, norms, nullptr);
  if (k < 0) throw Error(ErrorCode::AllAnchorsZero, "every center is zero");
  return k;
}

ClusterState spherical_kmeans(const DenseMatrix& features, const DenseMatrix& anchors,
                              const KMeansOptions& options) {
  if (anchors.rows() < 2) throw Error(ErrorCode::TooFewClasses, "spherical k-means needs K >= 2");
  if (anchors.cols() != features.cols()) throw Error(ErrorCode::ShapeMismatch, "anchor dimension");
  if (features.rows() == 0) throw Error(ErrorCode::ShapeMismatch, "no features to cluster");
  const auto anchor_norms = row_norms(anchors);
  if (std::all_of(anchor_norms.begin(), anchor_norms.end(), [](double n) { return n == 0.0; })) {
    throw Error(ErrorCode::AllAnchorsZero, "every anchor is zero");
  }
  const DenseMatrix unit = normalized_rows(features);
  const std::size_t num_classes = anchors.rows();
  const std::size_t dim = anchors.cols();

  ClusterState state;
  state.centers = anchors;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    state.objective.push_back(assign_all(unit, state.centers, state.assignments));
    ++state.iterations;

    DenseMatrix next(num_classes, dim);
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i = 0; i < unit.rows(); ++i) {
      const auto k = static_cast<std::size_t>(state.assignments[i]);
      axpy(1.0, unit.row(i), next.row(k));
      ++counts[k];
    }
    double shift = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      auto row = next.row(k);
      if (counts[k] == 0) {
        std::copy_n(state.centers.row(k).begin(), dim, row.begin());
        continue;
      }
      for (double& v : row) v /= static_cast<double>(counts[k]);
      // A mean of unit vectors can only vanish for perfectly cancelling
      // members; treat that as maximal movement so iteration continues.
      if (l2_norm(row) == 0.0 || l2_norm(state.centers.row(k)) == 0.0) {
        shift = std::max(shift, 1.0);
        if (l2_norm(row) == 0.0) std::copy_n(state.centers.row(k).begin(), dim, row.begin());
        continue;
      }
      shift = std::max(shift, cosine_distance(state.centers.row(k), row));
    }
    state.centers = std::move(next);
    if (shift < options.tolerance) {
      state.converged = true;
      break;
    }
  }
  // Final assignment against the returned centers.
  assign_all(unit, state.centers, state.assignments);
  return state;
}

ConfidentSet filter_confident(const DenseMatrix& features, const ClusterState& state, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorCode::InvalidConfig, "tau must lie in (0, 1)");
  if (state.assignments.size() != features.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "cluster state does not match features");
  }
  ConfidentSet out;
  out.threshold = tau;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const int k = state.assignments[i];
    const double d = cosine_distance(features.row(i), state.centers.row(static_cast<std::size_t>(k)));
    if (d < tau) {
      out.indices.push_back(i);
      out.labels.push_back(k);
      out.confidences.push_back(d);
    }
  }
  return out;
}

ConfidentSet max_prob_labels(const DenseMatrix& features, const DenseMatrix& classifier,
                             double tau_prime) {
  if (!(tau_prime > 0.0 && tau_prime < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "tau' must lie in (0, 1)");
  }
  const DenseMatrix logits = matmul(features, classifier);
  ConfidentSet out;
  out.threshold = 1.0 - tau_prime;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto p = softmax(logits.row(i));
    const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    if (p[best] > tau_prime) {
      out.indices.push_back(i);
      out.labels.push_back(static_cast<int>(best));
      out.confidences.push_back(1.0 - p[best]);
    }
  }
  return out;
}

ConfidentSet max_prob_labels(const ModelParams& params, const DenseMatrix& inputs, double tau_prime) {
  return max_prob_labels(extract_features(params, inputs), params.classifier, tau_prime);
}

}  // namespace srcfree
