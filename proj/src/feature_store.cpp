#include "srcfree/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "byte_io.hpp"

namespace srcfree {

using detail::ByteReader;
using detail::ByteWriter;

FeatureDataset::FeatureDataset(DenseMatrix features, std::optional<std::vector<int>> labels,
                               std::size_t num_classes, std::string domain_tag)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      domain_tag_(std::move(domain_tag)) {
  if (features_.rows() < 1 || features_.cols() < 1) {
    throw Error(ErrorCode::InvalidDataset, "dataset needs n >= 1 and m >= 1");
  }
  if (num_classes_ < 2) throw Error(ErrorCode::InvalidDataset, "dataset needs K >= 2");
  if (domain_tag_.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorCode::InvalidDataset, "domain tag longer than 65535 bytes");
  }
  for (double v : features_.values()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidDataset, "non-finite feature value");
  }
  if (labels_) {
    if (labels_->size() != features_.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "label count differs from row count");
    }
    for (int y : *labels_) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes_) {
        throw Error(ErrorCode::LabelOutOfRange,
                    "label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes_) + ")");
      }
    }
  }
}

const std::vector<int>& FeatureDataset::labels() const {
  if (!labels_) throw Error(ErrorCode::MissingLabels, "dataset '" + domain_tag_ + "' has no labels");
  return *labels_;
}

UnlabeledView::UnlabeledView(const FeatureDataset& ds)
    : features_(ds.features()), num_classes_(ds.num_classes()) {}

std::vector<std::uint8_t> encode_binary(const FeatureDataset& ds) {
  ByteWriter w;
  w.raw(kDatasetMagic, 4);
  w.le<std::uint32_t>(kDatasetVersion);
  w.le<std::uint64_t>(ds.size());
  w.le<std::uint64_t>(ds.dim());
  w.le<std::uint64_t>(ds.num_classes());
  w.le<std::uint32_t>(ds.has_labels() ? 1u : 0u);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(ds.domain_tag().size()));
  w.raw(ds.domain_tag().data(), ds.domain_tag().size());
  for (double v : ds.features().values()) w.f32(static_cast<float>(v));
  if (ds.has_labels()) {
    for (int y : ds.labels()) w.le<std::int32_t>(y);
  }
  return w.take();
}

FeatureDataset decode_binary(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kDatasetMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "expected SFDE dataset header");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kDatasetVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "dataset format version " + std::to_string(version));
  }
  const auto n = r.le<std::uint64_t>();
  const auto m = r.le<std::uint64_t>();
  const auto k = r.le<std::uint64_t>();
  const auto flags = r.le<std::uint32_t>();
  const auto tag_len = r.le<std::uint16_t>();
  auto tag_bytes = r.raw(tag_len);
  std::string tag(tag_bytes.begin(), tag_bytes.end());

  const bool labeled = (flags & 1u) != 0;
  // Guard the size arithmetic before allocating anything.
  if (m != 0 && n > r.remaining() / 4 / m) {
    throw Error(ErrorCode::TruncatedFile, "payload shorter than n*m features");
  }
  std::vector<double> data(n * m);
  for (auto& v : data) v = static_cast<double>(r.f32());
  std::optional<std::vector<int>> labels;
  if (labeled) {
    std::vector<int> y(n);
    for (auto& v : y) v = r.le<std::int32_t>();
    labels = std::move(y);
  }
  if (r.remaining() != 0) {
    throw Error(ErrorCode::InvalidDataset, std::to_string(r.remaining()) + " trailing bytes after payload");
  }
  return FeatureDataset(DenseMatrix(n, m, std::move(data)), std::move(labels), k, std::move(tag));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

void write_binary(const FeatureDataset& ds, const std::filesystem::path& path) {
  write_file_bytes(path, encode_binary(ds));
}

FeatureDataset read_binary(const std::filesystem::path& path) {
  return decode_binary(read_file_bytes(path));
}

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    auto b = cell.find_first_not_of(" \t\r");
    auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return out;
}
}  // namespace

FeatureDataset read_csv(const std::filesystem::path& path, std::optional<std::size_t> num_classes,
                        std::string domain_tag) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::InvalidDataset, path.string() + ": empty CSV");
  const auto header = split_csv_line(line);
  bool labeled = !header.empty() && header.back() == "label";
  const std::size_t m = header.size() - (labeled ? 1 : 0);
  for (std::size_t j = 0; j < m; ++j) {
    if (header[j] != "f" + std::to_string(j)) {
      throw Error(ErrorCode::InvalidDataset,
                  path.string() + ":1: expected column f" + std::to_string(j) + ", got '" + header[j] + "'");
    }
  }
  std::vector<double> data;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::InvalidDataset, path.string() + ":" + std::to_string(line_no) +
                                                 ": expected " + std::to_string(header.size()) + " cells");
    }
    try {
      for (std::size_t j = 0; j < m; ++j) data.push_back(std::stod(cells[j]));
      if (labeled) labels.push_back(std::stoi(cells[m]));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidDataset, path.string() + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  const std::size_t n = m == 0 ? 0 : data.size() / m;
  std::size_t k = 2;
  if (num_classes) {
    k = *num_classes;
  } else if (labeled && !labels.empty()) {
    k = std::max<std::size_t>(2, static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1));
  }
  std::optional<std::vector<int>> maybe_labels;
  if (labeled) maybe_labels = std::move(labels);
  return FeatureDataset(DenseMatrix(n, m, std::move(data)), std::move(maybe_labels), k, std::move(domain_tag));
}

FeatureDataset select_rows(const FeatureDataset& ds, std::span<const std::size_t> indices) {
  DenseMatrix out(indices.size(), ds.dim());
  std::optional<std::vector<int>> labels;
  if (ds.has_labels()) labels.emplace();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t src = indices[r];
    if (src >= ds.size()) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "row " + std::to_string(src) + " of " + std::to_string(ds.size()));
    }
    std::copy_n(ds.features().row(src).begin(), ds.dim(), out.row(r).begin());
    if (labels) labels->push_back(ds.labels()[src]);
  }
  return FeatureDataset(std::move(out), std::move(labels), ds.num_classes(), ds.domain_tag());
}

ClassRows class_rows(const FeatureDataset& ds, int k) {
  const auto& labels = ds.labels();
  ClassRows out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == k) out.indices.push_back(i);
  }
  out.features = DenseMatrix(out.indices.size(), ds.dim());
  for (std::size_t r = 0; r < out.indices.size(); ++r) {
    std::copy_n(ds.features().row(out.indices[r]).begin(), ds.dim(), out.features.row(r).begin());
  }
  return out;
}

}  // namespace srcfree
