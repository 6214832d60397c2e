#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "srcfree/feature_store.hpp"
#include "srcfree/model.hpp"
#include "srcfree/pseudolabel.hpp"

namespace srcfree {

// Synthetic covariate shift: Gaussian class blobs; target inputs are rotated
// in the (x0, x1) plane and then translated. Class centers live in the
// leading center_dims coordinates (which include the rotation plane); the
// remaining coordinates carry noise only.
struct ShiftSpec {
  std::size_t num_classes = 10;
  std::size_t input_dim = 16;
  std::size_t center_dims = 4;
  double center_spread = 4.0;
  double rotation = std::numbers::pi / 6.0;
  double translation_magnitude = 1.0;
  // Explicit translation; when empty a seeded random direction within the
  // center coordinates is scaled to translation_magnitude.
  std::vector<double> translation;
  double noise = 0.35;
  std::size_t samples_per_class = 300;
  std::uint64_t seed = 0;

  void validate() const;
};

// key = value lines, '#' comments. Errors carry "path:line".
ShiftSpec parse_shift_spec(const std::string& text, const std::string& origin = "<spec>");
ShiftSpec read_shift_spec(const std::filesystem::path& path);

struct ShiftPair {
  FeatureDataset source;
  FeatureDataset target;
};

ShiftPair gen_shift(const ShiftSpec& spec);
// A fresh source-domain draw from the same class centers, for held-out
// accuracy.
FeatureDataset gen_source_holdout(const ShiftSpec& spec);
// The class centers and translation used by gen_shift.
DenseMatrix shift_class_centers(const ShiftSpec& spec);
std::vector<double> shift_translation(const ShiftSpec& spec);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class;  // 0 for classes without samples
  std::vector<std::size_t> per_class_count;
};

EvalResult evaluate(const ModelParams& model, const FeatureDataset& ds);
nlohmann::json eval_to_json(const EvalResult& result);

struct PseudoLabelMetrics {
  double precision = 0.0;  // 0 when the confident set is empty
  std::size_t coverage = 0;
};

PseudoLabelMetrics pseudo_label_metrics(const ConfidentSet& confident, const std::vector<int>& true_labels);

// Finite-difference verification of backward_features and cdd_loss.
struct GradcheckComponent {
  std::string name;
  std::size_t configurations = 0;
  double max_relative_error = 0.0;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::vector<GradcheckComponent> components;
  bool passed = false;
};

struct GradcheckOptions {
  std::size_t configurations = 20;
  // Added to every analytic gradient entry; non-zero values exercise the
  // failure path.
  double corruption = 0.0;
};

GradcheckReport gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options = {});
nlohmann::json report_to_json(const GradcheckReport& report);

// |a − n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

}  // namespace srcfree
