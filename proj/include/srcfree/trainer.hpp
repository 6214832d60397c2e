#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "srcfree/cdd.hpp"
#include "srcfree/feature_store.hpp"
#include "srcfree/model.hpp"
#include "srcfree/pseudolabel.hpp"
#include "srcfree/sde.hpp"

namespace srcfree {

enum class PseudoLabelMode { Clustering, MaxProbability };

// Mean-estimator ablations. UpdateOnce keeps the full estimator but builds
// the surrogates only in the first epoch.
enum class MeanVariant { Full, TargetMean, Anchor, UpdateOnce };

std::string to_string(MeanVariant variant);
MeanVariant parse_mean_variant(const std::string& name);
std::string to_string(PseudoLabelMode mode);

struct AdaptConfig {
  std::string preset = "office";
  double tau = 0.6;
  double gamma = 1.0;
  std::size_t classes_per_batch = 12;
  std::size_t per_class_batch = 3;
  std::size_t epochs = 30;
  SgdConfig sgd{};
  std::uint64_t seed = 0;
  // Bandwidth subsample cap for the per-epoch median heuristic.
  std::size_t bandwidth_rows = 1000;
  std::size_t kmeans_max_iterations = 100;
  bool diagonal_covariance = false;
  PseudoLabelMode pseudo_labels = PseudoLabelMode::Clustering;
  double tau_prime = 0.9;
  MeanVariant variant = MeanVariant::Full;

  // Throws InvalidConfig when a field is out of range for K classes.
  void validate(std::size_t num_classes) const;
};

// "office": τ=0.6, γ=1, |C'|=12, n_b=3. "visda": τ=0.078, γ=2, |C'|=6, n_b=10.
// "custom" returns the defaults unchanged.
AdaptConfig preset_config(const std::string& name);

nlohmann::json config_to_json(const AdaptConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t n_confident = 0;
  std::size_t populated_classes = 0;
  std::size_t iterations = 0;
  std::size_t kmeans_iterations = 0;
  bool sde_rebuilt = false;
  double bandwidth = 0.0;
  double mean_cdd_loss = 0.0;
  // Cosine distance between each class's confident target mean and its anchor,
  // measured at the start of the epoch; empty for unpopulated classes.
  std::vector<std::optional<double>> anchor_distances;
  double mean_anchor_distance = 0.0;
  // Evaluation-only fields, present when ground truth was supplied.
  std::optional<double> pseudo_label_precision;
  std::optional<double> target_accuracy;
  std::vector<std::optional<double>> covariance_bias;

  bool operator==(const EpochRecord&) const = default;
};

nlohmann::json record_to_json(const EpochRecord& record);

// Ground truth used only for reporting. The adaptation itself never reads it.
struct Diagnostics {
  const FeatureDataset* labeled_target = nullptr;
  const FeatureDataset* source = nullptr;
};

// What one optimization step saw; handed to an optional observer.
struct StepInfo {
  std::size_t epoch;
  std::size_t iteration;
  const CddBatch& batch;
  const std::vector<std::size_t>& populated;
  const SurrogateSet& surrogates;
  double loss;
};

using StepObserver = std::function<void(const StepInfo&)>;

// State carried across epochs: optimizer, rng, and the surrogates kept by the
// update-once ablation.
class AdaptationSession {
 public:
  AdaptationSession(ModelParams& model, const AdaptConfig& cfg);

  // One epoch: features → pseudo-labels → surrogates → t CDD steps.
  // Throws NoConfidentSamples (model untouched) or TooFewClasses.
  EpochRecord run_epoch(const UnlabeledView& target, const Diagnostics& diagnostics = {});

  void set_step_observer(StepObserver observer) { observer_ = std::move(observer); }

  const OptState& optimizer() const noexcept { return opt_; }
  std::size_t sde_builds() const noexcept { return sde_builds_; }
  std::size_t epochs_run() const noexcept { return epoch_; }

 private:
  ModelParams& model_;
  AdaptConfig cfg_;
  OptState opt_;
  SeededRng rng_;
  std::optional<SurrogateSet> kept_surrogates_;
  StepObserver observer_;
  std::size_t epoch_ = 0;
  std::size_t sde_builds_ = 0;
};

EpochRecord adapt_epoch(ModelParams& model, const UnlabeledView& target, const AdaptConfig& cfg,
                        SeededRng& rng, const Diagnostics& diagnostics = {});

// Freezes the classifier and runs cfg.epochs epochs.
std::vector<EpochRecord> run_adaptation(ModelParams& model, const UnlabeledView& target,
                                        const AdaptConfig& cfg, const Diagnostics& diagnostics = {});

std::vector<EpochRecord> ablation_mean_variant(ModelParams& model, const UnlabeledView& target,
                                               AdaptConfig cfg, MeanVariant variant,
                                               const Diagnostics& diagnostics = {});

// JSON lines: a header object {"config": ...} followed by one record per line.
void write_history_jsonl(std::ostream& out, const AdaptConfig& cfg, const std::vector<EpochRecord>& history);
// epoch,loss,accuracy,n_confident,mean_anchor_distance
void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace srcfree
