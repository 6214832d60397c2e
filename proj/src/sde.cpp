#include "srcfree/sde.hpp"

#include <algorithm>
#include <cmath>

namespace srcfree {

std::string to_string(MeanEstimator estimator) {
  switch (estimator) {
    case MeanEstimator::AnchorCalibrated: return "anchor-calibrated";
    case MeanEstimator::TargetMean: return "target-mean";
    case MeanEstimator::Anchor: return "anchor";
  }
  return "unknown";
}

std::size_t SurrogateSet::dim() const {
  for (const auto& c : classes) {
    if (c.present) return c.mean.size();
  }
  return 0;
}

std::vector<std::size_t> SurrogateSet::populated() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k].present) out.push_back(k);
  }
  return out;
}

std::vector<double> estimate_mean(std::span<const double> target_mean, std::span<const double> anchor) {
  if (target_mean.size() != anchor.size()) throw Error(ErrorCode::ShapeMismatch, "mean/anchor dims");
  const double anchor_norm = l2_norm(anchor);
  if (anchor_norm == 0.0) throw Error(ErrorCode::ZeroAnchor, "anchor has zero norm");
  const double scale = l2_norm(target_mean) / anchor_norm;
  std::vector<double> out(anchor.begin(), anchor.end());
  for (double& v : out) v *= scale;
  return out;
}

DenseMatrix estimate_covariance(const DenseMatrix& class_features, std::span<const double> target_mean,
                                double gamma) {
  if (class_features.rows() == 0) throw Error(ErrorCode::EmptyClass, "no features for covariance");
  if (target_mean.size() != class_features.cols()) throw Error(ErrorCode::ShapeMismatch, "mean dims");
  if (!(gamma > 0.0)) throw Error(ErrorCode::InvalidConfig, "gamma must be positive");
  const std::size_t m = class_features.cols();
  DenseMatrix cov(m, m);
  std::vector<double> centered(m);
  for (std::size_t r = 0; r < class_features.rows(); ++r) {
    auto row = class_features.row(r);
    for (std::size_t j = 0; j < m; ++j) centered[j] = row[j] - target_mean[j];
    for (std::size_t i = 0; i < m; ++i) {
      const double ci = centered[i];
      for (std::size_t j = 0; j <= i; ++j) cov(i, j) += ci * centered[j];
    }
  }
  const double scale = gamma / static_cast<double>(class_features.rows());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      cov(i, j) *= scale;
      cov(j, i) = cov(i, j);
    }
  }
  return cov;
}

ClassStats class_stats(const DenseMatrix& class_features, std::size_t label) {
  if (class_features.rows() == 0) throw Error(ErrorCode::EmptyClass, "class " + std::to_string(label));
  ClassStats stats;
  stats.label = label;
  stats.count = class_features.rows();
  stats.mean.assign(class_features.cols(), 0.0);
  for (std::size_t r = 0; r < class_features.rows(); ++r) axpy(1.0, class_features.row(r), stats.mean);
  for (double& v : stats.mean) v /= static_cast<double>(stats.count);
  stats.scatter = estimate_covariance(class_features, stats.mean, 1.0);
  return stats;
}

double regularization_for(const DenseMatrix& covariance) {
  return std::max(1e-6, 1e-4 * trace(covariance) / static_cast<double>(covariance.rows()));
}

SurrogateSet build_surrogates(const ConfidentSet& confident, const DenseMatrix& target_features,
                              const DenseMatrix& anchors, const SdeOptions& options) {
  if (!(options.gamma > 0.0)) throw Error(ErrorCode::InvalidConfig, "gamma must be positive");
  if (anchors.cols() != target_features.cols()) throw Error(ErrorCode::ShapeMismatch, "anchor dims");
  const std::size_t num_classes = anchors.rows();
  const std::size_t m = anchors.cols();

  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < confident.size(); ++i) {
    const auto k = static_cast<std::size_t>(confident.labels[i]);
    if (k >= num_classes) throw Error(ErrorCode::LabelOutOfRange, "pseudo-label " + std::to_string(k));
    if (confident.indices[i] >= target_features.rows()) {
      throw Error(ErrorCode::IndexOutOfRange, "confident index " + std::to_string(confident.indices[i]));
    }
    members[k].push_back(confident.indices[i]);
  }
  const auto populated = std::count_if(members.begin(), members.end(),
                                       [](const auto& v) { return !v.empty(); });
  if (populated < 2) {
    throw Error(ErrorCode::TooFewClasses,
                std::to_string(populated) + " populated class(es); at least 2 are required");
  }

  SurrogateSet set;
  set.gamma = options.gamma;
  set.mean_estimator = options.mean_estimator;
  set.classes.resize(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (members[k].empty()) continue;
    DenseMatrix rows(members[k].size(), m);
    for (std::size_t r = 0; r < members[k].size(); ++r) {
      std::copy_n(target_features.row(members[k][r]).begin(), m, rows.row(r).begin());
    }
    auto& sur = set.classes[k];
    sur.present = true;
    sur.stats = class_stats(rows, k);
    const auto anchor = anchors.row(k);
    switch (options.mean_estimator) {
      case MeanEstimator::AnchorCalibrated:
        sur.mean = estimate_mean(sur.stats.mean, anchor);
        break;
      case MeanEstimator::TargetMean:
        sur.mean = sur.stats.mean;
        break;
      case MeanEstimator::Anchor:
        sur.mean.assign(anchor.begin(), anchor.end());
        break;
    }
    sur.zero_target_mean = l2_norm(sur.stats.mean) == 0.0;
    sur.covariance = sur.stats.scatter;
    for (double& v : sur.covariance.values()) v *= options.gamma;
    if (options.diagonal_covariance) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          if (i != j) sur.covariance(i, j) = 0.0;
        }
      }
    }
    sur.epsilon = regularization_for(sur.covariance);
    DenseMatrix regularized = sur.covariance;
    for (std::size_t i = 0; i < m; ++i) regularized(i, i) += sur.epsilon;
    sur.cholesky = cholesky(regularized);
  }
  return set;
}

DenseMatrix surrogate_from_noise(const SurrogateSet& set, std::size_t k, const DenseMatrix& noise) {
  if (k >= set.classes.size() || !set.classes[k].present) {
    throw Error(ErrorCode::AbsentClass, "class " + std::to_string(k) + " has no surrogate");
  }
  const auto& sur = set.classes[k];
  const std::size_t m = sur.mean.size();
  if (noise.cols() != m) throw Error(ErrorCode::ShapeMismatch, "noise dims");
  DenseMatrix out(noise.rows(), m);
  for (std::size_t r = 0; r < noise.rows(); ++r) {
    auto z = noise.row(r);
    auto row = out.row(r);
    for (std::size_t i = 0; i < m; ++i) {
      double s = sur.mean[i];
      for (std::size_t j = 0; j <= i; ++j) s += sur.cholesky(i, j) * z[j];
      row[i] = s;
    }
  }
  return out;
}

DenseMatrix sample_surrogate(const SurrogateSet& set, std::size_t k, std::size_t n, SeededRng& rng) {
  if (k >= set.classes.size() || !set.classes[k].present) {
    throw Error(ErrorCode::AbsentClass, "class " + std::to_string(k) + " has no surrogate");
  }
  if (n == 0) throw Error(ErrorCode::InvalidConfig, "sample count must be positive");
  const std::size_t m = set.classes[k].mean.size();
  DenseMatrix noise(n, m, standard_normal(rng, n * m));
  return surrogate_from_noise(set, k, noise);
}

nlohmann::json surrogate_summary(const SurrogateSet& set) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t k = 0; k < set.classes.size(); ++k) {
    const auto& c = set.classes[k];
    nlohmann::json entry{{"class", k}, {"present", c.present}};
    if (c.present) {
      entry["count"] = c.stats.count;
      entry["mean"] = c.mean;
      entry["mean_norm"] = l2_norm(c.mean);
      entry["target_mean_norm"] = l2_norm(c.stats.mean);
      entry["covariance_trace"] = trace(c.covariance);
      entry["epsilon"] = c.epsilon;
      entry["zero_target_mean"] = c.zero_target_mean;
    }
    classes.push_back(std::move(entry));
  }
  return {{"gamma", set.gamma}, {"mean_estimator", to_string(set.mean_estimator)}, {"classes", classes}};
}

}  // namespace srcfree
