#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "srcfree/error.hpp"
#include "srcfree/feature_store.hpp"

using namespace srcfree;
namespace fs = std::filesystem;

namespace {

FeatureDataset random_dataset(std::size_t n, std::size_t m, std::size_t k, SeededRng& rng, bool labeled = true) {
  DenseMatrix x(n, m);
  // Values representable in f32 so the round trip is exact.
  for (double& v : x.values()) v = static_cast<float>(rng.normal());
  std::optional<std::vector<int>> y;
  if (labeled) {
    y.emplace(n);
    for (auto& l : *y) l = static_cast<int>(rng.uniform_index(k));
  }
  return FeatureDataset(std::move(x), std::move(y), k, "rand");
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("srcfree_test_" + name); }

}  // namespace

TEST_SUITE("feature_store") {

TEST_CASE("3x2 labeled round trip") {
  FeatureDataset ds(DenseMatrix::from_rows({{1, 2}, {3, 4}, {5, 6}}), std::vector<int>{0, 1, 0}, 2, "tiny");
  CHECK(decode_binary(encode_binary(ds)) == ds);
}

TEST_CASE("round trip is the identity on random datasets") {
  SeededRng rng(1);
  for (int trial = 0; trial < 25; ++trial) {
    const auto n = 1 + rng.uniform_index(40);
    const auto m = 1 + rng.uniform_index(9);
    const auto k = 2 + rng.uniform_index(6);
    const auto ds = random_dataset(n, m, k, rng, trial % 3 != 0);
    CHECK(decode_binary(encode_binary(ds)) == ds);
  }
}

TEST_CASE("file round trip and layout") {
  SeededRng rng(2);
  const auto ds = random_dataset(7, 3, 4, rng);
  const auto p = temp_path("layout.sfde");
  write_binary(ds, p);
  CHECK(read_binary(p) == ds);
  const auto bytes = read_file_bytes(p);
  // magic, version, n, m, K, flags, tag length, tag, features, labels
  CHECK(bytes.size() == 4 + 4 + 24 + 4 + 2 + 4 + 7 * 3 * 4 + 7 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SFDE");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 7);
  CHECK(bytes[32] == 1);  // labels flag
  fs::remove(p);
}

TEST_CASE("large dataset encodes byte-identically twice") {
  SeededRng rng(3);
  const auto ds = random_dataset(10000, 64, 10, rng);
  const auto a = encode_binary(ds);
  const auto b = encode_binary(decode_binary(a));
  CHECK(a == b);
  const auto p1 = temp_path("big1.sfde");
  const auto p2 = temp_path("big2.sfde");
  write_binary(ds, p1);
  write_binary(ds, p2);
  CHECK(read_file_bytes(p1) == read_file_bytes(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("decoder rejects malformed input") {
  FeatureDataset ds(DenseMatrix::from_rows({{1, 2}, {3, 4}}), std::vector<int>{0, 1}, 2, "x");
  auto bytes = encode_binary(ds);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { decode_binary(bad_magic); }) == ErrorCode::BadMagic);

  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK(code_of([&] { decode_binary(bad_version); }) == ErrorCode::UnsupportedVersion);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() - 1}) {
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK(code_of([&] { decode_binary(truncated); }) == ErrorCode::TruncatedFile);
  }

  auto bad_label = bytes;
  bad_label[bytes.size() - 4] = 9;
  CHECK(code_of([&] { decode_binary(bad_label); }) == ErrorCode::LabelOutOfRange);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_binary(trailing), Error);
}

TEST_CASE("constructor validation") {
  CHECK(code_of([] { FeatureDataset(DenseMatrix(2, 2), std::vector<int>{0, 2}, 2, ""); }) ==
        ErrorCode::LabelOutOfRange);
  CHECK(code_of([] { FeatureDataset(DenseMatrix(2, 2), std::vector<int>{0}, 2, ""); }) == ErrorCode::ShapeMismatch);
  CHECK_THROWS_AS(FeatureDataset(DenseMatrix(0, 2), std::nullopt, 2, ""), Error);
  CHECK_THROWS_AS(FeatureDataset(DenseMatrix(2, 2), std::nullopt, 1, ""), Error);
  DenseMatrix nan(1, 1);
  nan(0, 0) = std::nan("");
  CHECK_THROWS_AS(FeatureDataset(nan, std::nullopt, 2, ""), Error);
  FeatureDataset unlabeled(DenseMatrix(1, 1), std::nullopt, 2, "");
  CHECK(code_of([&] { (void)unlabeled.labels(); }) == ErrorCode::MissingLabels);
}

TEST_CASE("select_rows and class_rows") {
  SeededRng rng(4);
  const auto ds = random_dataset(60, 5, 4, rng);
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  CHECK(select_rows(ds, all) == ds);
  const std::vector<std::size_t> bad{0, 60};
  CHECK(code_of([&] { select_rows(ds, bad); }) == ErrorCode::IndexOutOfRange);

  for (int k = 0; k < 4; ++k) {
    const auto cr = class_rows(ds, k);
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels()[i] == k) expect.push_back(i);
    REQUIRE(cr.indices == expect);
    REQUIRE(cr.features.rows() == expect.size());
    for (std::size_t r = 0; r < expect.size(); ++r)
      for (std::size_t c = 0; c < ds.dim(); ++c) CHECK(cr.features(r, c) == ds.features()(expect[r], c));
  }

  FeatureDataset zeros(DenseMatrix(3, 2, 1.0), std::vector<int>{0, 0, 0}, 2, "");
  const auto empty = class_rows(zeros, 1);
  CHECK(empty.indices.empty());
  CHECK(empty.features.rows() == 0);
}

TEST_CASE("unlabeled view drops labels") {
  SeededRng rng(5);
  const auto ds = random_dataset(10, 3, 3, rng);
  const UnlabeledView v(ds);
  CHECK(v.features() == ds.features());
  CHECK(v.num_classes() == 3);
}

TEST_CASE("csv import") {
  const auto p = temp_path("in.csv");
  {
    std::ofstream out(p);
    out << "f0,f1,label\n0.5,1,0\n-2,3.25,2\n";
  }
  const auto ds = read_csv(p, 3);
  CHECK(ds.size() == 2);
  CHECK(ds.dim() == 2);
  CHECK(ds.features()(1, 1) == 3.25);
  CHECK(ds.labels() == std::vector<int>{0, 2});
  {
    std::ofstream out(p);
    out << "f0,f1\n1,2\n3\n";
  }
  try {
    read_csv(p, 2);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
  fs::remove(p);
}

}
