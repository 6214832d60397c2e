#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "srcfree/numcore.hpp"
#include "srcfree/pseudolabel.hpp"

namespace srcfree {

// Per-class statistics of the confident target features.
struct ClassStats {
  std::size_t label = 0;
  std::size_t count = 0;
  std::vector<double> mean;  // f̄_k
  DenseMatrix scatter;       // population covariance, divisor N_k
};

enum class MeanEstimator {
  AnchorCalibrated,  // ‖f̄_k‖ · w_k / ‖w_k‖
  TargetMean,        // f̄_k
  Anchor,            // w_k
};

std::string to_string(MeanEstimator estimator);

struct SdeOptions {
  double gamma = 1.0;
  MeanEstimator mean_estimator = MeanEstimator::AnchorCalibrated;
  // Keep only the diagonal of the class covariance.
  bool diagonal_covariance = false;
};

struct ClassSurrogate {
  bool present = false;
  ClassStats stats;
  std::vector<double> mean;  // μ̂_k
  DenseMatrix covariance;    // Σ̂_k = γ·Σ_k
  DenseMatrix cholesky;      // L_k with L_k L_kᵀ = Σ̂_k + ε_k I
  double epsilon = 0.0;
  bool zero_target_mean = false;
};

struct SurrogateSet {
  std::vector<ClassSurrogate> classes;
  double gamma = 1.0;
  MeanEstimator mean_estimator = MeanEstimator::AnchorCalibrated;

  std::size_t num_classes() const noexcept { return classes.size(); }
  std::size_t dim() const;
  std::vector<std::size_t> populated() const;
};

// ‖f̄‖ · w/‖w‖. Throws ZeroAnchor when ‖w‖ = 0; a zero target mean yields the
// zero vector.
std::vector<double> estimate_mean(std::span<const double> target_mean, std::span<const double> anchor);

// γ · (1/N) Σ (f_i − f̄)(f_i − f̄)ᵀ over the rows of class_features.
DenseMatrix estimate_covariance(const DenseMatrix& class_features, std::span<const double> target_mean,
                                double gamma);

ClassStats class_stats(const DenseMatrix& class_features, std::size_t label);

// max(1e-6, 1e-4 · trace(cov) / m)
double regularization_for(const DenseMatrix& covariance);

// anchors: K × m rows. Throws TooFewClasses when fewer than two classes have
// confident samples.
SurrogateSet build_surrogates(const ConfidentSet& confident, const DenseMatrix& target_features,
                              const DenseMatrix& anchors, const SdeOptions& options);

// μ̂_k + L_k z for each row z of noise.
DenseMatrix surrogate_from_noise(const SurrogateSet& set, std::size_t k, const DenseMatrix& noise);

// n draws from class k's surrogate. Throws AbsentClass when k has no samples.
DenseMatrix sample_surrogate(const SurrogateSet& set, std::size_t k, std::size_t n, SeededRng& rng);

nlohmann::json surrogate_summary(const SurrogateSet& set);

}  // namespace srcfree
