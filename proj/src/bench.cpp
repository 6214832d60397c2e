#include "srcfree/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "srcfree/cdd.hpp"

namespace srcfree {

void ShiftSpec::validate() const {
  if (num_classes < 2) throw Error(ErrorCode::InvalidConfig, "classes must be >= 2");
  if (input_dim < 2) throw Error(ErrorCode::InvalidConfig, "input_dim must be >= 2 (rotation plane)");
  if (center_dims < 2 || center_dims > input_dim) {
    throw Error(ErrorCode::InvalidConfig, "center_dims must lie in [2, input_dim]");
  }
  if (!(rotation >= 0.0 && rotation < std::numbers::pi)) {
    throw Error(ErrorCode::InvalidConfig, "rotation must lie in [0, pi)");
  }
  if (!(noise > 0.0)) throw Error(ErrorCode::InvalidConfig, "noise must be positive");
  if (!(center_spread > 0.0)) throw Error(ErrorCode::InvalidConfig, "center_spread must be positive");
  if (translation_magnitude < 0.0) throw Error(ErrorCode::InvalidConfig, "translation_magnitude must be >= 0");
  if (!translation.empty() && translation.size() != input_dim) {
    throw Error(ErrorCode::InvalidConfig, "translation needs input_dim components");
  }
  if (samples_per_class < 1) throw Error(ErrorCode::InvalidConfig, "samples_per_class must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ShiftSpec parse_shift_spec(const std::string& text, const std::string& origin) {
  ShiftSpec spec;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto where = origin + ":" + std::to_string(line_no);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      std::size_t used = 0;
      auto as_size = [&] {
        if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
        auto v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return static_cast<std::size_t>(v);
      };
      auto as_double = [&] {
        auto v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
      };
      if (key == "classes") {
        spec.num_classes = as_size();
      } else if (key == "input_dim") {
        spec.input_dim = as_size();
      } else if (key == "center_dims") {
        spec.center_dims = as_size();
      } else if (key == "center_spread") {
        spec.center_spread = as_double();
      } else if (key == "rotation") {
        spec.rotation = as_double();
      } else if (key == "rotation_degrees") {
        spec.rotation = as_double() * std::numbers::pi / 180.0;
      } else if (key == "translation_magnitude") {
        spec.translation_magnitude = as_double();
      } else if (key == "translation") {
        spec.translation.clear();
        std::stringstream ss(value);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
          cell = trim(cell);
          std::size_t n = 0;
          spec.translation.push_back(std::stod(cell, &n));
          if (n != cell.size()) throw std::invalid_argument("trailing");
        }
      } else if (key == "noise") {
        spec.noise = as_double();
      } else if (key == "samples_per_class") {
        spec.samples_per_class = as_size();
      } else if (key == "seed") {
        spec.seed = static_cast<std::uint64_t>(as_size());
      } else {
        throw Error(ErrorCode::InvalidConfig, where + ": unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidConfig, where + ": bad value for '" + key + "': '" + value + "'");
    }
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, origin + ": " + e.what());
  }
  return spec;
}

ShiftSpec read_shift_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open spec file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_shift_spec(buf.str(), path.string());
}

namespace {

enum StreamTag : std::uint64_t { kCenters = 1, kSource = 2, kTarget = 3, kHoldout = 4, kTranslation = 5 };

SeededRng stream(const ShiftSpec& spec, StreamTag tag) { return SeededRng(spec.seed).fork(tag); }

// Draw samples_per_class rows per class around the centers, then apply
// x -> R x + t where R rotates the (x0, x1) plane.
FeatureDataset draw_domain(const ShiftSpec& spec, const DenseMatrix& centers, SeededRng rng, double rotation,
                           const std::vector<double>& translation, const std::string& tag) {
  const std::size_t n = spec.num_classes * spec.samples_per_class;
  DenseMatrix x(n, spec.input_dim);
  std::vector<int> labels(n);
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      const std::size_t r = k * spec.samples_per_class + i;
      auto row = x.row(r);
      for (std::size_t j = 0; j < spec.input_dim; ++j) row[j] = centers(k, j) + spec.noise * rng.normal();
      const double x0 = row[0];
      const double x1 = row[1];
      row[0] = c * x0 - s * x1;
      row[1] = s * x0 + c * x1;
      for (std::size_t j = 0; j < spec.input_dim; ++j) {
        row[j] += translation[j];
        // Stored as f32 on disk; keep memory and file identical.
        row[j] = static_cast<double>(static_cast<float>(row[j]));
      }
      labels[r] = static_cast<int>(k);
    }
  }
  return FeatureDataset(std::move(x), std::move(labels), spec.num_classes, tag);
}

}  // namespace

DenseMatrix shift_class_centers(const ShiftSpec& spec) {
  spec.validate();
  SeededRng rng = stream(spec, kCenters);
  DenseMatrix centers(spec.num_classes, spec.input_dim);
  const double scale = spec.center_spread / std::sqrt(static_cast<double>(spec.center_dims));
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    for (std::size_t j = 0; j < spec.center_dims; ++j) centers(k, j) = scale * rng.normal();
  }
  return centers;
}

std::vector<double> shift_translation(const ShiftSpec& spec) {
  spec.validate();
  if (!spec.translation.empty()) return spec.translation;
  SeededRng rng = stream(spec, kTranslation);
  std::vector<double> t(spec.input_dim, 0.0);
  for (std::size_t j = 0; j < spec.center_dims; ++j) t[j] = rng.normal();
  const double n = l2_norm(t);
  for (double& v : t) v *= spec.translation_magnitude / n;
  return t;
}

ShiftPair gen_shift(const ShiftSpec& spec) {
  const DenseMatrix centers = shift_class_centers(spec);
  const std::vector<double> zero(spec.input_dim, 0.0);
  return {draw_domain(spec, centers, stream(spec, kSource), 0.0, zero, "source"),
          draw_domain(spec, centers, stream(spec, kTarget), spec.rotation, shift_translation(spec), "target")};
}

FeatureDataset gen_source_holdout(const ShiftSpec& spec) {
  const DenseMatrix centers = shift_class_centers(spec);
  return draw_domain(spec, centers, stream(spec, kHoldout), 0.0, std::vector<double>(spec.input_dim, 0.0),
                     "source-holdout");
}

EvalResult evaluate(const ModelParams& model, const FeatureDataset& ds) {
  const auto& labels = ds.labels();
  const auto predicted = predict(model, ds.features());
  EvalResult out;
  out.per_class.assign(ds.num_classes(), 0.0);
  out.per_class_count.assign(ds.num_classes(), 0);
  std::vector<std::size_t> hits(ds.num_classes(), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    ++out.per_class_count[y];
    if (predicted[i] == labels[i]) {
      ++correct;
      ++hits[y];
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t k = 0; k < hits.size(); ++k) {
    if (out.per_class_count[k]) out.per_class[k] = static_cast<double>(hits[k]) / static_cast<double>(out.per_class_count[k]);
  }
  return out;
}

nlohmann::json eval_to_json(const EvalResult& result) {
  return {{"accuracy", result.accuracy}, {"per_class", result.per_class}, {"per_class_count", result.per_class_count}};
}

PseudoLabelMetrics pseudo_label_metrics(const ConfidentSet& confident, const std::vector<int>& true_labels) {
  PseudoLabelMetrics out;
  out.coverage = confident.size();
  if (confident.empty()) return out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < confident.size(); ++i) {
    if (confident.indices[i] >= true_labels.size()) {
      throw Error(ErrorCode::IndexOutOfRange, "confident index beyond label vector");
    }
    if (true_labels[confident.indices[i]] == confident.labels[i]) ++correct;
  }
  out.precision = static_cast<double>(correct) / static_cast<double>(confident.size());
  return out;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

namespace {

ModelParams random_mlp(SeededRng& rng, std::size_t input_dim, std::size_t hidden, std::size_t feature_dim,
                       std::size_t num_classes) {
  const std::vector<std::size_t> dims{input_dim, hidden, feature_dim};
  ModelParams p = init_model(dims, num_classes, rng);
  for (auto& layer : p.layers) {
    for (double& b : layer.bias) b = 0.5 * rng.normal();
  }
  return p;
}

DenseMatrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

// Runs f over every parameter of the extractor, exposing a mutable reference.
template <typename Fn>
void for_each_param(ModelParams& p, Fn&& fn) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (std::size_t i = 0; i < p.layers[l].weight.size(); ++i) fn(l, false, i, p.layers[l].weight.values()[i]);
    for (std::size_t i = 0; i < p.layers[l].bias.size(); ++i) fn(l, true, i, p.layers[l].bias[i]);
  }
}

double analytic_entry(const ExtractorGrads& g, std::size_t l, bool bias, std::size_t i) {
  return bias ? g.layers[l].bias[i] : g.layers[l].weight.values()[i];
}

CddBatch split_batch(const DenseMatrix& features, const std::vector<DenseMatrix>& surrogates, std::size_t nb) {
  CddBatch batch;
  for (std::size_t c = 0; c < surrogates.size(); ++c) {
    DenseMatrix block(nb, features.cols());
    for (std::size_t r = 0; r < nb; ++r) {
      std::copy_n(features.row(c * nb + r).begin(), features.cols(), block.row(r).begin());
    }
    batch.classes.push_back(c);
    batch.target.push_back(std::move(block));
    batch.surrogate.push_back(surrogates[c]);
  }
  return batch;
}

}  // namespace

GradcheckReport gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options) {
  GradcheckReport report;
  report.seed = seed;
  SeededRng rng(seed);
  const double h = report.step;

  // 1. Extractor backprop under a quadratic downstream loss
  //    L = Σ r⊙f + ½ Σ f², so dL/df = r + f.
  GradcheckComponent mlp{"mlp_backward", 0, 0.0};
  for (std::size_t cfg = 0; cfg < options.configurations; ++cfg) {
    const std::size_t in = 2 + rng.uniform_index(5);
    const std::size_t hid = 2 + rng.uniform_index(6);
    const std::size_t m = 2 + rng.uniform_index(5);
    const std::size_t batch = 1 + rng.uniform_index(4);
    ModelParams p = random_mlp(rng, in, hid, m, 2);
    const DenseMatrix x = random_matrix(rng, batch, in);
    const DenseMatrix r = random_matrix(rng, batch, m);
    auto loss = [&](const ModelParams& q) {
      const DenseMatrix f = extract_features(q, x);
      double s = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) s += r.values()[i] * f.values()[i] + 0.5 * f.values()[i] * f.values()[i];
      return s;
    };
    ForwardResult fw = forward(p, x);
    DenseMatrix grad_f = r;
    axpy(1.0, fw.features, grad_f);
    const ExtractorGrads g = backward_features(p, fw.cache, grad_f);
    for_each_param(p, [&](std::size_t l, bool bias, std::size_t i, double& value) {
      const double saved = value;
      value = saved + h;
      const double up = loss(p);
      value = saved - h;
      const double down = loss(p);
      value = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = analytic_entry(g, l, bias, i) + options.corruption;
      mlp.max_relative_error = std::max(mlp.max_relative_error, relative_error(analytic, numeric));
    });
    ++mlp.configurations;
  }

  // 2. CDD loss with respect to target features.
  GradcheckComponent cdd{"cdd_target_features", 0, 0.0};
  for (std::size_t cfg = 0; cfg < options.configurations; ++cfg) {
    const std::size_t classes = 2 + rng.uniform_index(3);
    const std::size_t nb = 1 + rng.uniform_index(4);
    const std::size_t m = 2 + rng.uniform_index(5);
    CddBatch batch;
    for (std::size_t c = 0; c < classes; ++c) {
      batch.classes.push_back(c);
      DenseMatrix t = random_matrix(rng, nb, m);
      DenseMatrix s = random_matrix(rng, nb, m);
      for (std::size_t r = 0; r < nb; ++r) {
        t(r, c % m) += 1.5;
        s(r, c % m) += 1.5;
      }
      batch.target.push_back(std::move(t));
      batch.surrogate.push_back(std::move(s));
    }
    const KernelSpec kernel = multi_bandwidth_kernel(0.5 + 2.0 * rng.uniform());
    const CddResult res = cdd_loss(batch, kernel);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t i = 0; i < batch.target[c].size(); ++i) {
        double& value = batch.target[c].values()[i];
        const double saved = value;
        value = saved + h;
        const double up = cdd_loss(batch, kernel).loss;
        value = saved - h;
        const double down = cdd_loss(batch, kernel).loss;
        value = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = res.grad_target[c].values()[i] + options.corruption;
        cdd.max_relative_error = std::max(cdd.max_relative_error, relative_error(analytic, numeric));
      }
    }
    ++cdd.configurations;
  }

  // 3. CDD composed with the extractor: the gradient path used in adaptation.
  GradcheckComponent composed{"cdd_through_mlp", 0, 0.0};
  for (std::size_t cfg = 0; cfg < options.configurations; ++cfg) {
    const std::size_t classes = 2 + rng.uniform_index(2);
    const std::size_t nb = 1 + rng.uniform_index(3);
    const std::size_t in = 2 + rng.uniform_index(4);
    const std::size_t m = 2 + rng.uniform_index(4);
    ModelParams p = random_mlp(rng, in, 3 + rng.uniform_index(4), m, classes);
    const DenseMatrix x = random_matrix(rng, classes * nb, in);
    std::vector<DenseMatrix> surrogates;
    for (std::size_t c = 0; c < classes; ++c) surrogates.push_back(random_matrix(rng, nb, m));
    const KernelSpec kernel = multi_bandwidth_kernel(0.5 + 2.0 * rng.uniform());
    auto loss = [&](const ModelParams& q) { return cdd_loss(split_batch(extract_features(q, x), surrogates, nb), kernel).loss; };

    ForwardResult fw = forward(p, x);
    const CddResult res = cdd_loss(split_batch(fw.features, surrogates, nb), kernel);
    DenseMatrix grad_f(classes * nb, m);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t r = 0; r < nb; ++r) {
        std::copy_n(res.grad_target[c].row(r).begin(), m, grad_f.row(c * nb + r).begin());
      }
    }
    const ExtractorGrads g = backward_features(p, fw.cache, grad_f);
    for_each_param(p, [&](std::size_t l, bool bias, std::size_t i, double& value) {
      const double saved = value;
      value = saved + h;
      const double up = loss(p);
      value = saved - h;
      const double down = loss(p);
      value = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = analytic_entry(g, l, bias, i) + options.corruption;
      composed.max_relative_error = std::max(composed.max_relative_error, relative_error(analytic, numeric));
    });
    ++composed.configurations;
  }

  report.components = {mlp, cdd, composed};
  report.passed = std::all_of(report.components.begin(), report.components.end(),
                              [&](const auto& c) { return c.max_relative_error < report.tolerance; });
  return report;
}

nlohmann::json report_to_json(const GradcheckReport& report) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : report.components) {
    comps.push_back({{"name", c.name}, {"configurations", c.configurations}, {"max_relative_error", c.max_relative_error}});
  }
  return {{"seed", report.seed}, {"tolerance", report.tolerance}, {"step", report.step},
          {"components", comps}, {"passed", report.passed}};
}

}  // namespace srcfree
