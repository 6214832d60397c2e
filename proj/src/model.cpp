#include "srcfree/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "byte_io.hpp"

namespace srcfree {

std::vector<double> ModelParams::anchor(std::size_t k) const {
  std::vector<double> w(classifier.rows());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = classifier(i, k);
  return w;
}

void validate(const ModelParams& params) {
  if (params.layers.empty()) throw Error(ErrorCode::ShapeMismatch, "model has no layers");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    if (layer.bias.size() != layer.out_dim()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " bias size");
    }
    if (l > 0 && layer.in_dim() != params.layers[l - 1].out_dim()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " input size");
    }
  }
  if (params.classifier.rows() != params.layers.back().out_dim() || params.classifier.cols() < 2) {
    throw Error(ErrorCode::ShapeMismatch, "classifier must be m x K with K >= 2");
  }
}

ModelParams init_model(std::span<const std::size_t> layer_dims, std::size_t num_classes,
                       SeededRng& rng) {
  if (layer_dims.size() < 2) throw Error(ErrorCode::InvalidConfig, "need input and feature dims");
  auto glorot = [&rng](std::size_t rows, std::size_t cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    DenseMatrix w(rows, cols);
    for (double& v : w.values()) v = (2.0 * rng.uniform() - 1.0) * limit;
    return w;
  };
  ModelParams params;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    params.layers.push_back({glorot(layer_dims[l + 1], layer_dims[l]),
                             std::vector<double>(layer_dims[l + 1], 0.0)});
  }
  params.classifier = glorot(layer_dims.back(), num_classes);
  validate(params);
  return params;
}

namespace {

DenseMatrix affine(const DenseLayer& layer, const DenseMatrix& in) {
  DenseMatrix z = matmul_transposed(in, layer.weight);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += layer.bias[j];
  }
  return z;
}

void tanh_inplace(DenseMatrix& m) {
  for (double& v : m.values()) v = std::tanh(v);
}

void check_input(const ModelParams& params, const DenseMatrix& x) {
  if (x.cols() != params.input_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.cols()) +
                                              " columns, model expects " +
                                              std::to_string(params.input_dim()));
  }
}

}  // namespace

ForwardResult forward(const ModelParams& params, const DenseMatrix& x) {
  check_input(params, x);
  ForwardResult result;
  result.cache.inputs.reserve(params.layers.size());
  DenseMatrix h = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    DenseMatrix z = affine(params.layers[l], h);
    result.cache.inputs.push_back(std::move(h));
    if (l + 1 < params.layers.size()) tanh_inplace(z);
    h = std::move(z);
  }
  result.features = std::move(h);
  result.logits = matmul(result.features, params.classifier);
  return result;
}

DenseMatrix extract_features(const ModelParams& params, const DenseMatrix& x) {
  check_input(params, x);
  DenseMatrix h = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    h = affine(params.layers[l], h);
    if (l + 1 < params.layers.size()) tanh_inplace(h);
  }
  return h;
}

std::size_t classify(std::span<const double> feature, const DenseMatrix& classifier) {
  if (feature.size() != classifier.rows()) throw Error(ErrorCode::ShapeMismatch, "classify dims");
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t k = 0; k < classifier.cols(); ++k) {
    double score = 0.0;
    for (std::size_t i = 0; i < feature.size(); ++i) score += feature[i] * classifier(i, k);
    if (k == 0 || score > best_score) {
      best = k;
      best_score = score;
    }
  }
  return best;
}

std::vector<int> predict(const ModelParams& params, const DenseMatrix& x) {
  const DenseMatrix f = extract_features(params, x);
  std::vector<int> out(f.rows());
  for (std::size_t r = 0; r < f.rows(); ++r) out[r] = static_cast<int>(classify(f.row(r), params.classifier));
  return out;
}

ExtractorGrads backward_features(const ModelParams& params, const ForwardCache& cache,
                                 const DenseMatrix& grad_features) {
  const std::size_t num_layers = params.layers.size();
  if (cache.inputs.size() != num_layers) throw Error(ErrorCode::ShapeMismatch, "stale forward cache");
  if (grad_features.cols() != params.layers.back().out_dim() ||
      grad_features.rows() != cache.inputs.front().rows()) {
    throw Error(ErrorCode::ShapeMismatch, "feature gradient shape");
  }
  ExtractorGrads grads;
  grads.layers.resize(num_layers);
  DenseMatrix delta = grad_features;
  for (std::size_t l = num_layers; l-- > 0;) {
    const DenseMatrix& input = cache.inputs[l];
    auto& g = grads.layers[l];
    g.weight = transposed_matmul(delta, input);
    g.bias.assign(delta.cols(), 0.0);
    for (std::size_t r = 0; r < delta.rows(); ++r) axpy(1.0, delta.row(r), g.bias);
    if (l == 0) break;
    // input = tanh(z_{l-1}), so dz = d(input) * (1 - input²)
    DenseMatrix upstream = matmul(delta, params.layers[l].weight);
    auto up = upstream.values();
    auto act = input.values();
    for (std::size_t i = 0; i < up.size(); ++i) up[i] *= 1.0 - act[i] * act[i];
    delta = std::move(upstream);
  }
  return grads;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

double softmax_cross_entropy(const DenseMatrix& logits, std::span<const int> labels,
                             DenseMatrix* grad_logits) {
  if (labels.size() != logits.rows()) throw Error(ErrorCode::ShapeMismatch, "label count");
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  if (grad_logits) *grad_logits = DenseMatrix(logits.rows(), logits.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    const auto y = static_cast<std::size_t>(labels[r]);
    loss += log_z - row[y];
    if (grad_logits) {
      auto g = grad_logits->row(r);
      for (std::size_t k = 0; k < row.size(); ++k) g[k] = std::exp(row[k] - log_z) * inv_n;
      g[y] -= inv_n;
    }
  }
  return loss * inv_n;
}

double lr_at(std::uint64_t step, double lr0, double alpha, double beta) {
  return lr0 * std::pow(1.0 + alpha * static_cast<double>(step), -beta);
}

OptState::OptState(const ModelParams& params, SgdConfig cfg) : config(cfg) {
  for (const auto& layer : params.layers) {
    velocity.push_back({DenseMatrix(layer.weight.rows(), layer.weight.cols()),
                        std::vector<double>(layer.bias.size(), 0.0)});
  }
  classifier_velocity = DenseMatrix(params.classifier.rows(), params.classifier.cols());
}

namespace {
void momentum_update(std::span<double> param, std::span<const double> grad, std::span<double> vel,
                     double lr, const SgdConfig& cfg) {
  if (param.size() != grad.size() || param.size() != vel.size()) {
    throw Error(ErrorCode::ShapeMismatch, "sgd_step parameter/gradient shapes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    vel[i] = cfg.momentum * vel[i] + grad[i] + cfg.weight_decay * param[i];
    param[i] -= lr * vel[i];
  }
}
}  // namespace

void sgd_step(ModelParams& params, const ModelGrads& grads, OptState& opt) {
  const auto& cfg = opt.config;
  if (grads.extractor.layers.size() != params.layers.size() ||
      opt.velocity.size() != params.layers.size()) {
    throw Error(ErrorCode::ShapeMismatch, "sgd_step layer count");
  }
  const double lr = lr_at(opt.step, cfg.lr0, cfg.alpha, cfg.beta);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    momentum_update(params.layers[l].weight.values(), grads.extractor.layers[l].weight.values(),
                    opt.velocity[l].weight.values(), lr, cfg);
    momentum_update(params.layers[l].bias, grads.extractor.layers[l].bias, opt.velocity[l].bias, lr, cfg);
  }
  if (!params.classifier_frozen && grads.classifier) {
    momentum_update(params.classifier.values(), grads.classifier->values(),
                    opt.classifier_velocity.values(), lr * cfg.classifier_lr_mult, cfg);
  }
  ++opt.step;
}

ModelParams pretrain_source(const FeatureDataset& source, const PretrainConfig& cfg) {
  const auto& labels = source.labels();
  std::vector<std::size_t> counts(source.num_classes(), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) {
      throw Error(ErrorCode::DegenerateDataset, "class " + std::to_string(k) + " has no samples");
    }
  }
  if (cfg.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be positive");

  SeededRng rng(cfg.seed);
  std::vector<std::size_t> dims{source.dim()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.feature_dim);
  ModelParams params = init_model(dims, source.num_classes(), rng);
  OptState opt(params, cfg.sgd);

  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      DenseMatrix x(end - start, source.dim());
      std::vector<int> y(end - start);
      for (std::size_t r = start; r < end; ++r) {
        std::copy_n(source.features().row(order[r]).begin(), source.dim(), x.row(r - start).begin());
        y[r - start] = labels[order[r]];
      }
      ForwardResult fw = forward(params, x);
      DenseMatrix grad_logits;
      softmax_cross_entropy(fw.logits, y, &grad_logits);
      ModelGrads grads;
      grads.classifier = transposed_matmul(fw.features, grad_logits);
      const DenseMatrix grad_features = matmul_transposed(grad_logits, params.classifier);
      grads.extractor = backward_features(params, fw.cache, grad_features);
      sgd_step(params, grads, opt);
    }
  }
  params.classifier_frozen = false;
  return params;
}

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
  validate(params);
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(params.layers.size());
  for (const auto& layer : params.layers) {
    w.le<std::uint64_t>(layer.out_dim());
    w.le<std::uint64_t>(layer.in_dim());
  }
  w.le<std::uint64_t>(params.feature_dim());
  w.le<std::uint64_t>(params.num_classes());
  w.le<std::uint32_t>(params.classifier_frozen ? 1u : 0u);
  for (const auto& layer : params.layers) {
    for (double v : layer.weight.values()) w.f64(v);
    for (double v : layer.bias) w.f64(v);
  }
  for (double v : params.classifier.values()) w.f64(v);
  return w.take();
}

ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "expected SFDM checkpoint header");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "checkpoint format version " + std::to_string(version));
  }
  const auto num_layers = r.le<std::uint64_t>();
  if (num_layers == 0 || num_layers > r.remaining() / 16) {
    throw Error(ErrorCode::TruncatedFile, "implausible layer count");
  }
  std::vector<std::pair<std::uint64_t, std::uint64_t>> shapes(num_layers);
  std::uint64_t total = 0;
  for (auto& [out, in] : shapes) {
    out = r.le<std::uint64_t>();
    in = r.le<std::uint64_t>();
    total += out * in + out;
  }
  const auto m = r.le<std::uint64_t>();
  const auto k = r.le<std::uint64_t>();
  const auto flags = r.le<std::uint32_t>();
  total += m * k;
  if (total > r.remaining() / 8) throw Error(ErrorCode::TruncatedFile, "parameter payload too short");

  ModelParams params;
  for (const auto& [out, in] : shapes) {
    DenseLayer layer{DenseMatrix(out, in), std::vector<double>(out)};
    for (double& v : layer.weight.values()) v = r.f64();
    for (double& v : layer.bias) v = r.f64();
    params.layers.push_back(std::move(layer));
  }
  params.classifier = DenseMatrix(m, k);
  for (double& v : params.classifier.values()) v = r.f64();
  params.classifier_frozen = (flags & 1u) != 0;
  if (r.remaining() != 0) {
    throw Error(ErrorCode::InvalidDataset, std::to_string(r.remaining()) + " trailing bytes after checkpoint");
  }
  validate(params);
  return params;
}

void write_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(params));
}

ModelParams read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace srcfree
