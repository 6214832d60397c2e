#include "srcfree/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "srcfree/bench.hpp"

namespace srcfree {

std::string to_string(MeanVariant variant) {
  switch (variant) {
    case MeanVariant::Full: return "full";
    case MeanVariant::TargetMean: return "target-mean";
    case MeanVariant::Anchor: return "anchor";
    case MeanVariant::UpdateOnce: return "update-once";
  }
  return "unknown";
}

MeanVariant parse_mean_variant(const std::string& name) {
  for (auto v : {MeanVariant::Full, MeanVariant::TargetMean, MeanVariant::Anchor, MeanVariant::UpdateOnce}) {
    if (to_string(v) == name) return v;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown variant '" + name + "'");
}

std::string to_string(PseudoLabelMode mode) {
  return mode == PseudoLabelMode::Clustering ? "clustering" : "max-prob";
}

void AdaptConfig::validate(std::size_t num_classes) const {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorCode::InvalidConfig, "tau must lie in (0, 1)");
  if (!(gamma > 0.0)) throw Error(ErrorCode::InvalidConfig, "gamma must be positive");
  if (classes_per_batch < 2 || classes_per_batch > num_classes) {
    throw Error(ErrorCode::InvalidConfig, "classes per batch must lie in [2, K=" + std::to_string(num_classes) + "]");
  }
  if (per_class_batch < 1) throw Error(ErrorCode::InvalidConfig, "per-class batch must be >= 1");
  if (!(sgd.lr0 > 0.0) || sgd.alpha < 0.0 || sgd.beta < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "learning-rate schedule needs lr0 > 0, alpha >= 0, beta >= 0");
  }
  if (pseudo_labels == PseudoLabelMode::MaxProbability && !(tau_prime > 0.0 && tau_prime < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "tau' must lie in (0, 1)");
  }
}

AdaptConfig preset_config(const std::string& name) {
  AdaptConfig cfg;
  cfg.preset = name;
  if (name == "office") {
    cfg.tau = 0.6;
    cfg.gamma = 1.0;
    cfg.classes_per_batch = 12;
    cfg.per_class_batch = 3;
  } else if (name == "visda") {
    cfg.tau = 0.078;
    cfg.gamma = 2.0;
    cfg.classes_per_batch = 6;
    cfg.per_class_batch = 10;
  } else if (name != "custom") {
    throw Error(ErrorCode::InvalidConfig, "unknown preset '" + name + "'");
  }
  return cfg;
}

nlohmann::json config_to_json(const AdaptConfig& cfg) {
  return {{"preset", cfg.preset},
          {"tau", cfg.tau},
          {"gamma", cfg.gamma},
          {"classes_per_batch", cfg.classes_per_batch},
          {"per_class_batch", cfg.per_class_batch},
          {"epochs", cfg.epochs},
          {"lr0", cfg.sgd.lr0},
          {"alpha", cfg.sgd.alpha},
          {"beta", cfg.sgd.beta},
          {"momentum", cfg.sgd.momentum},
          {"weight_decay", cfg.sgd.weight_decay},
          {"seed", cfg.seed},
          {"bandwidth_rows", cfg.bandwidth_rows},
          {"kmeans_max_iterations", cfg.kmeans_max_iterations},
          {"diagonal_covariance", cfg.diagonal_covariance},
          {"pseudo_labels", to_string(cfg.pseudo_labels)},
          {"tau_prime", cfg.tau_prime},
          {"variant", to_string(cfg.variant)}};
}

namespace {

nlohmann::json optional_array(const std::vector<std::optional<double>>& values) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& v : values) out.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return out;
}

template <typename T>
nlohmann::json optional_value(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

MeanEstimator estimator_for(MeanVariant variant) {
  switch (variant) {
    case MeanVariant::TargetMean: return MeanEstimator::TargetMean;
    case MeanVariant::Anchor: return MeanEstimator::Anchor;
    case MeanVariant::Full:
    case MeanVariant::UpdateOnce: return MeanEstimator::AnchorCalibrated;
  }
  return MeanEstimator::AnchorCalibrated;
}

DenseMatrix gather_rows(const DenseMatrix& src, const std::vector<std::size_t>& rows) {
  DenseMatrix out(rows.size(), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(src.row(rows[r]).begin(), src.cols(), out.row(r).begin());
  return out;
}

// n_b members of a class: without replacement when the class is large enough,
// otherwise with replacement.
std::vector<std::size_t> draw_members(const std::vector<std::size_t>& members, std::size_t count, SeededRng& rng) {
  std::vector<std::size_t> out;
  out.reserve(count);
  if (members.size() >= count) {
    std::vector<std::size_t> pool = members;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + rng.uniform_index(pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) out.push_back(members[rng.uniform_index(members.size())]);
  }
  return out;
}

// Population covariance of the source features (under the current extractor)
// for each class, by true label.
std::vector<std::optional<DenseMatrix>> source_covariances(const ModelParams& model, const FeatureDataset& source) {
  const DenseMatrix features = extract_features(model, source.features());
  const auto& labels = source.labels();
  std::vector<std::optional<DenseMatrix>> out(source.num_classes());
  for (std::size_t k = 0; k < source.num_classes(); ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == static_cast<int>(k)) rows.push_back(i);
    }
    if (!rows.empty()) out[k] = class_stats(gather_rows(features, rows), k).scatter;
  }
  return out;
}

}  // namespace

nlohmann::json record_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"n_confident", r.n_confident},
          {"populated_classes", r.populated_classes},
          {"iterations", r.iterations},
          {"kmeans_iterations", r.kmeans_iterations},
          {"sde_rebuilt", r.sde_rebuilt},
          {"bandwidth", r.bandwidth},
          {"mean_cdd_loss", r.mean_cdd_loss},
          {"anchor_distances", optional_array(r.anchor_distances)},
          {"mean_anchor_distance", r.mean_anchor_distance},
          {"pseudo_label_precision", optional_value(r.pseudo_label_precision)},
          {"target_accuracy", optional_value(r.target_accuracy)},
          {"covariance_bias", optional_array(r.covariance_bias)}};
}

AdaptationSession::AdaptationSession(ModelParams& model, const AdaptConfig& cfg)
    : model_(model), cfg_(cfg), opt_(model, cfg.sgd), rng_(cfg.seed) {
  validate(model_);
  cfg_.validate(model_.num_classes());
}

EpochRecord AdaptationSession::run_epoch(const UnlabeledView& target, const Diagnostics& diagnostics) {
  if (!model_.classifier_frozen) {
    throw Error(ErrorCode::InvalidConfig, "adaptation requires a frozen classifier");
  }
  if (target.size() == 0) throw Error(ErrorCode::InvalidDataset, "empty target set");
  if (target.num_classes() != model_.num_classes()) {
    throw Error(ErrorCode::ShapeMismatch, "target K differs from the classifier's K");
  }
  const std::size_t num_classes = model_.num_classes();
  const DenseMatrix anchors = anchor_rows(model_);

  EpochRecord record;
  record.epoch = epoch_;

  // Pseudo-labels from the current extractor; no parameter changes here.
  const DenseMatrix features = extract_features(model_, target.features());
  ConfidentSet confident;
  if (cfg_.pseudo_labels == PseudoLabelMode::Clustering) {
    KMeansOptions km;
    km.max_iterations = cfg_.kmeans_max_iterations;
    const ClusterState clusters = spherical_kmeans(features, anchors, km);
    record.kmeans_iterations = clusters.iterations;
    confident = filter_confident(features, clusters, cfg_.tau);
  } else {
    confident = max_prob_labels(features, model_.classifier, cfg_.tau_prime);
  }
  record.n_confident = confident.size();
  if (confident.empty()) {
    throw Error(ErrorCode::NoConfidentSamples, "no target sample passed the confidence threshold");
  }

  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < confident.size(); ++i) {
    members[static_cast<std::size_t>(confident.labels[i])].push_back(confident.indices[i]);
  }

  // Anchor–center distance of each populated class.
  record.anchor_distances.assign(num_classes, std::nullopt);
  std::vector<std::optional<ClassStats>> stats(num_classes);
  double distance_sum = 0.0;
  std::size_t distance_count = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (members[k].empty()) continue;
    stats[k] = class_stats(gather_rows(features, members[k]), k);
    if (l2_norm(stats[k]->mean) > 0.0 && l2_norm(anchors.row(k)) > 0.0) {
      const double d = cosine_distance(stats[k]->mean, anchors.row(k));
      record.anchor_distances[k] = d;
      distance_sum += d;
      ++distance_count;
    }
  }
  record.mean_anchor_distance = distance_count ? distance_sum / static_cast<double>(distance_count) : 0.0;

  if (diagnostics.source) {
    const auto source_cov = source_covariances(model_, *diagnostics.source);
    record.covariance_bias.assign(num_classes, std::nullopt);
    for (std::size_t k = 0; k < num_classes; ++k) {
      if (!stats[k] || k >= source_cov.size() || !source_cov[k]) continue;
      DenseMatrix diff = stats[k]->scatter;
      axpy(-1.0, *source_cov[k], diff);
      record.covariance_bias[k] = frobenius_norm(diff);
    }
  }
  if (diagnostics.labeled_target) {
    record.pseudo_label_precision = pseudo_label_metrics(confident, diagnostics.labeled_target->labels()).precision;
  }

  // Surrogate source distributions, constant for the rest of the epoch.
  const bool rebuild = cfg_.variant != MeanVariant::UpdateOnce || !kept_surrogates_;
  SurrogateSet built;
  if (rebuild) {
    SdeOptions sde;
    sde.gamma = cfg_.gamma;
    sde.mean_estimator = estimator_for(cfg_.variant);
    sde.diagonal_covariance = cfg_.diagonal_covariance;
    built = build_surrogates(confident, features, anchors, sde);
    ++sde_builds_;
    if (cfg_.variant == MeanVariant::UpdateOnce) kept_surrogates_ = built;
  }
  const SurrogateSet& surrogates = rebuild ? built : *kept_surrogates_;
  record.sde_rebuilt = rebuild;

  std::vector<std::size_t> populated;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (!members[k].empty() && k < surrogates.classes.size() && surrogates.classes[k].present) {
      populated.push_back(k);
    }
  }
  record.populated_classes = populated.size();
  if (populated.size() < 2) {
    throw Error(ErrorCode::TooFewClasses, std::to_string(populated.size()) + " populated class(es)");
  }

  const KernelSpec kernel =
      multi_bandwidth_kernel(median_bandwidth(gather_rows(features, confident.indices), cfg_.bandwidth_rows));
  record.bandwidth = kernel.bandwidths[2];

  const std::size_t classes_per_batch = std::min(cfg_.classes_per_batch, populated.size());
  const std::size_t nb = cfg_.per_class_batch;
  const std::size_t per_step = classes_per_batch * nb;
  const std::size_t iterations = (confident.size() + per_step - 1) / per_step;
  const std::size_t input_dim = target.dim();

  double loss_sum = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<std::size_t> order = populated;
    for (std::size_t i = 0; i < classes_per_batch; ++i) {
      const std::size_t j = i + rng_.uniform_index(order.size() - i);
      std::swap(order[i], order[j]);
    }
    CddBatch batch;
    DenseMatrix inputs(per_step, input_dim);
    for (std::size_t c = 0; c < classes_per_batch; ++c) {
      const std::size_t k = order[c];
      batch.classes.push_back(k);
      const auto rows = draw_members(members[k], nb, rng_);
      for (std::size_t r = 0; r < nb; ++r) {
        std::copy_n(target.features().row(rows[r]).begin(), input_dim, inputs.row(c * nb + r).begin());
      }
      batch.surrogate.push_back(sample_surrogate(surrogates, k, nb, rng_));
    }
    ForwardResult fw = forward(model_, inputs);
    const std::size_t m = fw.features.cols();
    for (std::size_t c = 0; c < classes_per_batch; ++c) {
      DenseMatrix block(nb, m);
      for (std::size_t r = 0; r < nb; ++r) std::copy_n(fw.features.row(c * nb + r).begin(), m, block.row(r).begin());
      batch.target.push_back(std::move(block));
    }
    const CddResult cdd = cdd_loss(batch, kernel);
    loss_sum += cdd.loss;
    if (observer_) observer_(StepInfo{epoch_, it, batch, populated, surrogates, cdd.loss});

    DenseMatrix grad_features(per_step, m);
    for (std::size_t c = 0; c < classes_per_batch; ++c) {
      for (std::size_t r = 0; r < nb; ++r) {
        std::copy_n(cdd.grad_target[c].row(r).begin(), m, grad_features.row(c * nb + r).begin());
      }
    }
    ModelGrads grads;
    grads.extractor = backward_features(model_, fw.cache, grad_features);
    sgd_step(model_, grads, opt_);
  }
  record.iterations = iterations;
  record.mean_cdd_loss = loss_sum / static_cast<double>(iterations);

  if (diagnostics.labeled_target) record.target_accuracy = evaluate(model_, *diagnostics.labeled_target).accuracy;
  ++epoch_;
  return record;
}

EpochRecord adapt_epoch(ModelParams& model, const UnlabeledView& target, const AdaptConfig& cfg,
                        SeededRng& rng, const Diagnostics& diagnostics) {
  AdaptConfig one = cfg;
  one.seed = rng.next_u64();
  AdaptationSession session(model, one);
  return session.run_epoch(target, diagnostics);
}

std::vector<EpochRecord> run_adaptation(ModelParams& model, const UnlabeledView& target, const AdaptConfig& cfg,
                                        const Diagnostics& diagnostics) {
  model.classifier_frozen = true;
  AdaptationSession session(model, cfg);
  std::vector<EpochRecord> history;
  history.reserve(cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) history.push_back(session.run_epoch(target, diagnostics));
  return history;
}

std::vector<EpochRecord> ablation_mean_variant(ModelParams& model, const UnlabeledView& target, AdaptConfig cfg,
                                               MeanVariant variant, const Diagnostics& diagnostics) {
  cfg.variant = variant;
  return run_adaptation(model, target, cfg, diagnostics);
}

void write_history_jsonl(std::ostream& out, const AdaptConfig& cfg, const std::vector<EpochRecord>& history) {
  out << nlohmann::json{{"config", config_to_json(cfg)}}.dump() << '\n';
  for (const auto& r : history) out << record_to_json(r).dump() << '\n';
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,loss,accuracy,n_confident,mean_anchor_distance\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << nlohmann::json(r.mean_cdd_loss).dump() << ','
        << (r.target_accuracy ? nlohmann::json(*r.target_accuracy).dump() : std::string()) << ','
        << r.n_confident << ',' << nlohmann::json(r.mean_anchor_distance).dump() << '\n';
  }
}

}  // namespace srcfree
