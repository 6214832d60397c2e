#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srcfree/numcore.hpp"

namespace srcfree {

// n feature rows of dimension m, optional labels in [0, K), and a domain tag.
// Immutable after construction: the constructor validates every invariant.
class FeatureDataset {
 public:
  FeatureDataset(DenseMatrix features, std::optional<std::vector<int>> labels,
                 std::size_t num_classes, std::string domain_tag);

  const DenseMatrix& features() const noexcept { return features_; }
  bool has_labels() const noexcept { return labels_.has_value(); }
  // Throws MissingLabels when the dataset is unlabeled.
  const std::vector<int>& labels() const;
  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::string& domain_tag() const noexcept { return domain_tag_; }

  std::size_t size() const noexcept { return features_.rows(); }
  std::size_t dim() const noexcept { return features_.cols(); }

  bool operator==(const FeatureDataset& other) const = default;

 private:
  DenseMatrix features_;
  std::optional<std::vector<int>> labels_;
  std::size_t num_classes_;
  std::string domain_tag_;
};

// Target inputs with the labels stripped. The adaptation path only ever sees
// this type, so it cannot read ground truth.
class UnlabeledView {
 public:
  explicit UnlabeledView(const FeatureDataset& ds);

  const DenseMatrix& features() const noexcept { return features_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return features_.rows(); }
  std::size_t dim() const noexcept { return features_.cols(); }

 private:
  DenseMatrix features_;
  std::size_t num_classes_;
};

// SFDE binary layout, little-endian:
//   "SFDE" | u32 version=1 | u64 n | u64 m | u64 K | u32 flags (bit0 labels)
//   | u16 tag length | tag bytes | n*m f32 row-major | n i32 labels (if flagged)
inline constexpr char kDatasetMagic[4] = {'S', 'F', 'D', 'E'};
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_binary(const FeatureDataset& ds);
FeatureDataset decode_binary(std::span<const std::uint8_t> bytes);

void write_binary(const FeatureDataset& ds, const std::filesystem::path& path);
FeatureDataset read_binary(const std::filesystem::path& path);

// CSV with header f0..f{m-1}[,label]. num_classes defaults to max label + 1
// (minimum 2) when not given.
FeatureDataset read_csv(const std::filesystem::path& path,
                        std::optional<std::size_t> num_classes = std::nullopt,
                        std::string domain_tag = "csv");

FeatureDataset select_rows(const FeatureDataset& ds, std::span<const std::size_t> indices);

// Rows whose label is k, in their original order. May be empty, in which case
// the returned features matrix has zero rows.
struct ClassRows {
  DenseMatrix features;
  std::vector<std::size_t> indices;
};
ClassRows class_rows(const FeatureDataset& ds, int k);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace srcfree
