#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "srcfree/feature_store.hpp"
#include "srcfree/numcore.hpp"

namespace srcfree {

// One fully connected layer: out = in · weightᵀ + bias, weight is (out × in).
struct DenseLayer {
  DenseMatrix weight;
  std::vector<double> bias;

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

// Feature extractor (MLP with tanh between layers, linear output) followed by a
// bias-free linear classifier. Column k of the classifier is the anchor of
// class k.
struct ModelParams {
  std::vector<DenseLayer> layers;
  DenseMatrix classifier;  // m × K
  bool classifier_frozen = false;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t feature_dim() const { return classifier.rows(); }
  std::size_t num_classes() const { return classifier.cols(); }
  std::vector<double> anchor(std::size_t k) const;

  bool operator==(const ModelParams&) const = default;
};

// Validates layer chaining and that the classifier matches the feature dim.
void validate(const ModelParams& params);

// Glorot-uniform weights, zero biases. layer_dims = {input, hidden..., m}.
ModelParams init_model(std::span<const std::size_t> layer_dims, std::size_t num_classes,
                       SeededRng& rng);

struct ForwardCache {
  // inputs[l] is the input fed to layer l (inputs[0] is the batch itself).
  std::vector<DenseMatrix> inputs;
};

struct ForwardResult {
  DenseMatrix features;
  DenseMatrix logits;
  ForwardCache cache;
};

ForwardResult forward(const ModelParams& params, const DenseMatrix& x);
// Extractor output only; keeps no activations.
DenseMatrix extract_features(const ModelParams& params, const DenseMatrix& x);

// argmax_k fᵀw_k, ties to the smallest index.
std::size_t classify(std::span<const double> feature, const DenseMatrix& classifier);
std::vector<int> predict(const ModelParams& params, const DenseMatrix& x);

struct ExtractorGrads {
  std::vector<DenseLayer> layers;
};

// Gradients of a scalar loss with respect to every extractor parameter, given
// the loss gradient at the extractor output.
ExtractorGrads backward_features(const ModelParams& params, const ForwardCache& cache,
                                 const DenseMatrix& grad_features);

struct ModelGrads {
  ExtractorGrads extractor;
  std::optional<DenseMatrix> classifier;
};

// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
double softmax_cross_entropy(const DenseMatrix& logits, std::span<const int> labels,
                             DenseMatrix* grad_logits);
std::vector<double> softmax(std::span<const double> logits);

struct SgdConfig {
  double lr0 = 0.001;
  double alpha = 0.001;
  double beta = 0.75;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double classifier_lr_mult = 10.0;
};

// η = η₀ (1 + α·i)^(−β)
double lr_at(std::uint64_t step, double lr0, double alpha, double beta);

struct OptState {
  SgdConfig config;
  std::uint64_t step = 0;
  std::vector<DenseLayer> velocity;
  DenseMatrix classifier_velocity;

  OptState(const ModelParams& params, SgdConfig cfg);
};

// v <- momentum·v + grad + wd·param ; param <- param − lr·v ; step += 1.
// The classifier moves at classifier_lr_mult × lr and never when frozen.
void sgd_step(ModelParams& params, const ModelGrads& grads, OptState& opt);

struct PretrainConfig {
  std::vector<std::size_t> hidden = {128};
  std::size_t feature_dim = 64;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  SgdConfig sgd{.lr0 = 0.01};
  std::uint64_t seed = 0;
};

// Supervised source training of extractor and classifier jointly.
// Throws DegenerateDataset when any class has no samples.
ModelParams pretrain_source(const FeatureDataset& source, const PretrainConfig& cfg);

// SFDM checkpoint, little-endian:
//   "SFDM" | u32 version=1 | u64 L | L × (u64 out, u64 in) | u64 m | u64 K
//   | u32 flags (bit0 classifier_frozen) | f64 weights then bias per layer
//   | f64 classifier (m × K row-major)
inline constexpr char kCheckpointMagic[4] = {'S', 'F', 'D', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams read_checkpoint(const std::filesystem::path& path);

}  // namespace srcfree
