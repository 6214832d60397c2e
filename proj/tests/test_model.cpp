#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "srcfree/error.hpp"
#include "srcfree/model.hpp"

using namespace srcfree;

namespace {

ModelParams random_model(std::vector<std::size_t> dims, std::size_t k, std::uint64_t seed) {
  SeededRng rng(seed);
  auto p = init_model(dims, k, rng);
  for (auto& layer : p.layers)
    for (double& b : layer.bias) b = 0.1 * rng.normal();
  for (double& w : p.classifier.values()) w = rng.normal();
  return p;
}

ModelParams scalar_model(double w, double b) {
  ModelParams p;
  p.layers.push_back({DenseMatrix(1, 1, w), {b}});
  p.classifier = DenseMatrix(1, 2, 1.0);
  return p;
}

ModelGrads scalar_grads(double gw, double gb) {
  ModelGrads g;
  g.extractor.layers.push_back({DenseMatrix(1, 1, gw), {gb}});
  return g;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("zero network outputs its biases") {
  ModelParams p;
  p.layers.push_back({DenseMatrix(3, 2), {0.0, 0.0, 0.0}});
  p.layers.push_back({DenseMatrix(2, 3), {0.5, -1.5}});
  p.classifier = DenseMatrix(2, 4);
  const auto out = forward(p, DenseMatrix(5, 2, 7.0));
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(out.features(i, 0) == 0.5);
    CHECK(out.features(i, 1) == -1.5);
    for (std::size_t k = 0; k < 4; ++k) CHECK(out.logits(i, k) == 0.0);
  }
}

TEST_CASE("identity network passes inputs through to logits") {
  ModelParams p;
  p.layers.push_back({DenseMatrix::identity(3), {0, 0, 0}});
  p.classifier = DenseMatrix::identity(3);
  SeededRng rng(1);
  const auto x = oracle::random_matrix(4, 3, rng);
  CHECK(forward(p, x).logits == x);
}

TEST_CASE("forward matches a loop re-evaluation") {
  const auto p = random_model({7, 11, 5}, 4, 2);
  SeededRng rng(3);
  const auto x = oracle::random_matrix(9, 7, rng);
  const auto out = forward(p, x);
  const auto f = oracle::features(p, x);
  CHECK(oracle::max_abs_diff(out.features, f) < 1e-12);
  CHECK(oracle::max_abs_diff(out.logits, oracle::matmul(f, p.classifier)) < 1e-12);
  CHECK(extract_features(p, x) == out.features);
}

TEST_CASE("forward is batch-order equivariant") {
  const auto p = random_model({4, 8, 3}, 3, 4);
  SeededRng rng(5);
  const auto x = oracle::random_matrix(10, 4, rng);
  std::vector<std::size_t> perm(10);
  for (std::size_t i = 0; i < 10; ++i) perm[i] = i;
  shuffle_indices(perm, rng);
  DenseMatrix xp(10, 4);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 4; ++j) xp(i, j) = x(perm[i], j);
  const auto a = forward(p, x).logits;
  const auto b = forward(p, xp).logits;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t k = 0; k < 3; ++k) CHECK(b(i, k) == a(perm[i], k));
}

TEST_CASE("classify") {
  const auto w = DenseMatrix::identity(2);
  const std::vector<double> e0{1, 0}, zero{0, 0};
  CHECK(classify(e0, w) == 0);
  CHECK(classify(zero, w) == 0);
  SeededRng rng(6);
  for (int t = 0; t < 200; ++t) {
    const auto wk = oracle::random_matrix(6, 5, rng);
    const auto f = standard_normal(rng, 6);
    CHECK(classify(f, wk) == oracle::argmax_logit(f, wk));
  }
}

TEST_CASE("backward with zero upstream gradient is zero") {
  const auto p = random_model({3, 4, 2}, 2, 7);
  SeededRng rng(8);
  const auto fw = forward(p, oracle::random_matrix(5, 3, rng));
  const auto g = backward_features(p, fw.cache, DenseMatrix(5, 2));
  for (const auto& layer : g.layers) {
    for (double v : layer.weight.values()) CHECK(v == 0.0);
    for (double v : layer.bias) CHECK(v == 0.0);
  }
}

TEST_CASE("single linear layer gradient is the outer product") {
  ModelParams p;
  p.layers.push_back({DenseMatrix::from_rows({{1, 2}, {3, 4}}), {0, 0}});
  p.classifier = DenseMatrix::identity(2);
  const auto x = DenseMatrix::from_rows({{5, 6}});
  const auto fw = forward(p, x);
  const auto g = backward_features(p, fw.cache, DenseMatrix::from_rows({{1, -1}}));
  CHECK(g.layers[0].weight == DenseMatrix::from_rows({{5, 6}, {-5, -6}}));
  CHECK(g.layers[0].bias == std::vector<double>{1, -1});
}

TEST_CASE("backward matches central differences") {
  SeededRng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = random_model({4, 6, 3}, 2, 100 + static_cast<std::uint64_t>(trial));
    const auto x = oracle::random_matrix(5, 4, rng);
    const auto r = oracle::random_matrix(5, 3, rng);
    // L = sum(r * f) + 0.5 sum(f^2), so dL/df = r + f.
    auto loss = [&] {
      const auto f = oracle::features(p, x);
      double s = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) s += r.values()[i] * f.values()[i] + 0.5 * f.values()[i] * f.values()[i];
      return s;
    };
    const auto fw = forward(p, x);
    DenseMatrix up = r;
    axpy(1.0, fw.features, up);
    const auto g = backward_features(p, fw.cache, up);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const auto num_w = oracle::fd_gradient(p.layers[l].weight, loss);
      CHECK(oracle::max_relative_error(g.layers[l].weight, num_w) < 1e-4);
      DenseMatrix bias(1, p.layers[l].bias.size(), p.layers[l].bias);
      auto bias_loss = [&] {
        std::copy(bias.values().begin(), bias.values().end(), p.layers[l].bias.begin());
        return loss();
      };
      const auto num_b = oracle::fd_gradient(bias, bias_loss);
      std::copy(bias.values().begin(), bias.values().end(), p.layers[l].bias.begin());
      CHECK(oracle::max_relative_error(DenseMatrix(1, bias.cols(), g.layers[l].bias), num_b) < 1e-4);
    }
  }
}

TEST_CASE("softmax cross-entropy gradient") {
  SeededRng rng(10);
  auto logits = oracle::random_matrix(4, 3, rng, 3.0);
  const std::vector<int> y{0, 2, 1, 1};
  DenseMatrix grad;
  softmax_cross_entropy(logits, y, &grad);
  const auto num = oracle::fd_gradient(logits, [&] { return softmax_cross_entropy(logits, y, nullptr); });
  CHECK(oracle::max_relative_error(grad, num) < 1e-6);
  const std::vector<double> big{1000, 0};
  const auto s = softmax(big);
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(s[1]));
}

TEST_CASE("learning rate schedule") {
  CHECK(lr_at(0, 0.001, 0.001, 0.75) == 0.001);
  CHECK(lr_at(12345, 0.001, 0.0, 0.75) == 0.001);
  CHECK(lr_at(1000, 0.001, 0.001, 0.75) == doctest::Approx(5.9460e-4).epsilon(1e-4));
  CHECK(lr_at(1000, 0.001, 0.001, 0.75) == doctest::Approx(0.001 * std::pow(2.0, -0.75)).epsilon(1e-14));
  double prev = lr_at(0, 0.01, 0.01, 0.75);
  for (std::uint64_t i = 1; i < 2000; i += 7) {
    const double cur = lr_at(i, 0.01, 0.01, 0.75);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("sgd step on a scalar model") {
  SgdConfig plain{.lr0 = 0.1, .alpha = 0.0, .beta = 0.75, .momentum = 0.0, .weight_decay = 0.0};
  {
    auto p = scalar_model(2.0, 1.0);
    OptState opt(p, plain);
    sgd_step(p, scalar_grads(0.0, 0.0), opt);
    CHECK(p.layers[0].weight(0, 0) == 2.0);
    CHECK(p.layers[0].bias[0] == 1.0);
    sgd_step(p, scalar_grads(3.0, -1.0), opt);
    CHECK(p.layers[0].weight(0, 0) == 2.0 - 0.1 * 3.0);
    CHECK(p.layers[0].bias[0] == 1.0 + 0.1);
  }
  {
    SgdConfig cfg{.lr0 = 0.05, .alpha = 0.2, .beta = 0.75, .momentum = 0.9, .weight_decay = 0.01};
    auto p = scalar_model(1.5, 0.0);
    OptState opt(p, cfg);
    const double grads[3] = {0.7, -0.2, 1.1};
    double w = 1.5, v = 0.0;
    for (int i = 0; i < 3; ++i) {
      sgd_step(p, scalar_grads(grads[i], 0.0), opt);
      v = 0.9 * v + grads[i] + 0.01 * w;
      w = w - 0.05 * std::pow(1.0 + 0.2 * i, -0.75) * v;
    }
    CHECK(std::abs(p.layers[0].weight(0, 0) - w) < 1e-12);
    CHECK(opt.step == 3);
  }
}

TEST_CASE("classifier moves at the multiplier and never when frozen") {
  SgdConfig cfg{.lr0 = 0.1, .alpha = 0.0, .beta = 0.75, .momentum = 0.0, .weight_decay = 0.0};
  auto p = scalar_model(1.0, 0.0);
  auto g = scalar_grads(0.0, 0.0);
  g.classifier = DenseMatrix(1, 2, 1.0);
  OptState opt(p, cfg);
  sgd_step(p, g, opt);
  CHECK(p.classifier(0, 0) == doctest::Approx(1.0 - 0.1 * 10.0));
  p.classifier_frozen = true;
  const auto before = p.classifier;
  sgd_step(p, g, opt);
  CHECK(p.classifier == before);
}

TEST_CASE("pretraining separates two blobs") {
  SeededRng rng(11);
  DenseMatrix x(200, 2);
  std::vector<int> y(200);
  for (std::size_t i = 0; i < 200; ++i) {
    y[i] = static_cast<int>(i % 2);
    x(i, 0) = (y[i] ? 2.0 : -2.0) + 0.5 * rng.normal();
    x(i, 1) = 0.5 * rng.normal();
  }
  const FeatureDataset ds(x, y, 2, "blobs");
  PretrainConfig cfg;
  cfg.hidden = {16};
  cfg.feature_dim = 8;
  const auto p = pretrain_source(ds, cfg);
  const auto pred = predict(p, x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < 200; ++i) hit += pred[i] == y[i];
  CHECK(static_cast<double>(hit) / 200.0 >= 0.99);
  CHECK_FALSE(p.classifier_frozen);

  CHECK(pretrain_source(ds, cfg) == p);
}

TEST_CASE("pretraining rejects an empty class") {
  const FeatureDataset ds(DenseMatrix(4, 2, 1.0), std::vector<int>{0, 0, 0, 0}, 2, "");
  try {
    pretrain_source(ds, PretrainConfig{});
    FAIL("expected DegenerateDataset");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateDataset);
  }
}

TEST_CASE("checkpoint round trip") {
  auto p = random_model({5, 7, 3}, 4, 12);
  p.classifier_frozen = true;
  const auto bytes = encode_checkpoint(p);
  CHECK(decode_checkpoint(bytes) == p);
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
  const auto path = std::filesystem::temp_directory_path() / "srcfree_test_model.sfdm";
  write_checkpoint(p, path);
  CHECK(read_checkpoint(path) == p);
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[3] = 'E';
  CHECK_THROWS_AS(decode_checkpoint(bad), Error);
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
  CHECK_THROWS_AS(decode_checkpoint(cut), Error);
}

}
