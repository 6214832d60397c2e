#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "srcfree/model.hpp"
#include "srcfree/numcore.hpp"

namespace srcfree {

// ½(1 − aᵀb / (|a||b|)), in [0, 1]. Throws ZeroVector if either norm is 0.
double cosine_distance(std::span<const double> a, std::span<const double> b);

struct KMeansOptions {
  std::size_t max_iterations = 100;
  // Stop once every center moves less than this in cosine distance.
  double tolerance = 1e-6;
};

struct ClusterState {
  DenseMatrix centers;  // K × m
  std::vector<int> assignments;
  std::size_t iterations = 0;
  bool converged = false;
  // Mean assigned cosine distance at each assignment pass.
  std::vector<double> objective;
};

// Anchor rows (K × m) from the classifier columns.
DenseMatrix anchor_rows(const ModelParams& params);

// Nearest center by cosine distance, ties to the smallest index. Zero-norm
// centers are never chosen.
int nearest_center(std::span<const double> feature, const DenseMatrix& centers);

// Spherical k-means seeded with the anchors. Each center is the mean of the
// unit-normalized features assigned to it; a center with no members keeps its
// previous value. The returned assignments are nearest-center with respect to
// the returned centers.
ClusterState spherical_kmeans(const DenseMatrix& features, const DenseMatrix& anchors,
                              const KMeansOptions& options = {});

// D'_t: the target samples whose assigned-center distance is below a
// threshold. For the max-probability baseline, confidence is 1 − max prob and
// threshold is 1 − τ'.
struct ConfidentSet {
  std::vector<std::size_t> indices;
  std::vector<int> labels;
  std::vector<double> confidences;
  double threshold = 0.0;

  std::size_t size() const noexcept { return indices.size(); }
  bool empty() const noexcept { return indices.empty(); }
};

ConfidentSet filter_confident(const DenseMatrix& features, const ClusterState& state, double tau);

// Baseline pseudo-labels: argmax softmax of the classifier logits, retained
// when the max probability exceeds tau_prime.
ConfidentSet max_prob_labels(const DenseMatrix& features, const DenseMatrix& classifier,
                             double tau_prime);
ConfidentSet max_prob_labels(const ModelParams& params, const DenseMatrix& inputs, double tau_prime);

}  // namespace srcfree
