#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "srcfree/bench.hpp"
#include "srcfree/error.hpp"
#include "srcfree/trainer.hpp"

using namespace srcfree;

namespace {

ShiftSpec small_spec(double rotation = std::numbers::pi / 6.0, double translation = 1.0) {
  ShiftSpec spec;
  spec.num_classes = 4;
  spec.input_dim = 6;
  spec.center_dims = 4;
  spec.samples_per_class = 60;
  spec.rotation = rotation;
  spec.translation_magnitude = translation;
  spec.seed = 3;
  return spec;
}

struct World {
  ShiftPair data;
  ModelParams model;
};

const World& world() {
  static const World w = [] {
    World out{gen_shift(small_spec()), {}};
    PretrainConfig pc;
    pc.hidden = {16};
    pc.feature_dim = 8;
    pc.epochs = 30;
    out.model = pretrain_source(out.data.source, pc);
    return out;
  }();
  return w;
}

AdaptConfig small_config(std::size_t epochs = 2) {
  AdaptConfig cfg = preset_config("office");
  cfg.classes_per_batch = 4;
  cfg.epochs = epochs;
  cfg.sgd.lr0 = 0.001;
  return cfg;
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

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("presets") {
  const auto office = preset_config("office");
  CHECK(office.tau == 0.6);
  CHECK(office.gamma == 1.0);
  CHECK(office.classes_per_batch == 12);
  CHECK(office.per_class_batch == 3);
  CHECK(office.sgd.lr0 == 0.001);
  const auto visda = preset_config("visda");
  CHECK(visda.tau == 0.078);
  CHECK(visda.gamma == 2.0);
  CHECK(visda.classes_per_batch == 6);
  CHECK(visda.per_class_batch == 10);
  CHECK(preset_config("custom").preset == "custom");
  CHECK_THROWS_AS(preset_config("imagenet"), Error);
  CHECK(parse_mean_variant("update-once") == MeanVariant::UpdateOnce);
  CHECK_THROWS_AS(parse_mean_variant("median"), Error);
}

TEST_CASE("config validation") {
  AdaptConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate(4));
  cfg.classes_per_batch = 5;
  CHECK(code_of([&] { cfg.validate(4); }) == ErrorCode::InvalidConfig);
  cfg = small_config();
  cfg.tau = 1.0;
  CHECK_THROWS_AS(cfg.validate(4), Error);
  cfg = small_config();
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(4), Error);
  cfg = small_config();
  cfg.per_class_batch = 0;
  CHECK_THROWS_AS(cfg.validate(4), Error);
}

TEST_CASE("zero epochs leave the model alone") {
  ModelParams m = world().model;
  const auto history = run_adaptation(m, UnlabeledView(world().data.target), small_config(0));
  CHECK(history.empty());
  CHECK(m.layers == world().model.layers);
  CHECK(m.classifier == world().model.classifier);
}

TEST_CASE("no confident samples leaves the model untouched") {
  ModelParams m = world().model;
  AdaptConfig cfg = small_config(1);
  cfg.tau = 1e-300;
  CHECK(code_of([&] { run_adaptation(m, UnlabeledView(world().data.target), cfg); }) ==
        ErrorCode::NoConfidentSamples);
  CHECK(m.layers == world().model.layers);
}

TEST_CASE("adaptation requires a frozen classifier") {
  ModelParams m = world().model;
  m.classifier_frozen = false;
  AdaptationSession s(m, small_config());
  CHECK(code_of([&] { s.run_epoch(UnlabeledView(world().data.target)); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("classifier stays frozen and the extractor moves") {
  ModelParams m = world().model;
  const auto before = m.classifier;
  run_adaptation(m, UnlabeledView(world().data.target), small_config(3));
  CHECK(m.classifier == before);
  CHECK(m.classifier_frozen);
  CHECK(m.layers != world().model.layers);
}

TEST_CASE("runs are reproducible") {
  ModelParams a = world().model, b = world().model;
  const Diagnostics diag{&world().data.target, &world().data.source};
  const auto ha = run_adaptation(a, UnlabeledView(world().data.target), small_config(3), diag);
  const auto hb = run_adaptation(b, UnlabeledView(world().data.target), small_config(3), diag);
  CHECK(ha == hb);
  CHECK(a == b);

  AdaptConfig other = small_config(3);
  other.seed = 1;
  ModelParams c = world().model;
  run_adaptation(c, UnlabeledView(world().data.target), other, diag);
  CHECK(c != a);

  ModelParams d = world().model, e = world().model;
  d.classifier_frozen = e.classifier_frozen = true;
  SeededRng r1(5), r2(5);
  CHECK(adapt_epoch(d, UnlabeledView(world().data.target), small_config(), r1) ==
        adapt_epoch(e, UnlabeledView(world().data.target), small_config(), r2));
  CHECK(d == e);
}

TEST_CASE("full variant is the default pipeline") {
  ModelParams a = world().model, b = world().model;
  const auto ha = run_adaptation(a, UnlabeledView(world().data.target), small_config(2));
  const auto hb = ablation_mean_variant(b, UnlabeledView(world().data.target), small_config(2), MeanVariant::Full);
  CHECK(ha == hb);
  CHECK(a == b);
}

TEST_CASE("update-once builds the surrogates once") {
  ModelParams m = world().model;
  m.classifier_frozen = true;
  AdaptConfig cfg = small_config(3);
  cfg.variant = MeanVariant::UpdateOnce;
  AdaptationSession s(m, cfg);
  std::vector<bool> rebuilt;
  for (int e = 0; e < 3; ++e) rebuilt.push_back(s.run_epoch(UnlabeledView(world().data.target)).sde_rebuilt);
  CHECK(s.sde_builds() == 1);
  CHECK(rebuilt == std::vector<bool>{true, false, false});

  ModelParams f = world().model;
  f.classifier_frozen = true;
  AdaptationSession full(f, small_config(3));
  for (int e = 0; e < 3; ++e) full.run_epoch(UnlabeledView(world().data.target));
  CHECK(full.sde_builds() == 3);
}

TEST_CASE("every step draws a valid class subset against constant surrogates") {
  for (std::size_t cpb : {2, 3, 4}) {
    ModelParams m = world().model;
    m.classifier_frozen = true;
    AdaptConfig cfg = small_config();
    cfg.classes_per_batch = cpb;
    AdaptationSession s(m, cfg);
    const SurrogateSet* seen = nullptr;
    std::vector<std::vector<double>> means;
    std::size_t steps = 0;
    s.set_step_observer([&](const StepInfo& info) {
      ++steps;
      const auto& cls = info.batch.classes;
      REQUIRE(cls.size() == std::min(cpb, info.populated.size()));
      CHECK(std::set<std::size_t>(cls.begin(), cls.end()).size() == cls.size());
      for (auto k : cls) CHECK(std::find(info.populated.begin(), info.populated.end(), k) != info.populated.end());
      for (const auto& t : info.batch.target) CHECK(t.rows() == cfg.per_class_batch);
      if (info.iteration == 0) {
        seen = &info.surrogates;
        means.clear();
        for (const auto& c : info.surrogates.classes) means.push_back(c.mean);
      } else {
        CHECK(seen == &info.surrogates);
        for (std::size_t k = 0; k < means.size(); ++k) CHECK(info.surrogates.classes[k].mean == means[k]);
      }
    });
    const auto rec = s.run_epoch(UnlabeledView(world().data.target));
    const std::size_t per_step = std::min(cpb, rec.populated_classes) * cfg.per_class_batch;
    CHECK(rec.iterations == (rec.n_confident + per_step - 1) / per_step);
    CHECK(steps == rec.iterations);
  }
}

TEST_CASE("diagnostics are reported only when supplied") {
  ModelParams a = world().model;
  const auto plain = run_adaptation(a, UnlabeledView(world().data.target), small_config(1));
  CHECK_FALSE(plain[0].pseudo_label_precision);
  CHECK_FALSE(plain[0].target_accuracy);
  CHECK(plain[0].covariance_bias.empty());

  ModelParams b = world().model;
  const Diagnostics diag{&world().data.target, &world().data.source};
  const auto rich = run_adaptation(b, UnlabeledView(world().data.target), small_config(1), diag);
  REQUIRE(rich[0].pseudo_label_precision);
  CHECK(*rich[0].pseudo_label_precision > 0.25);
  REQUIRE(rich[0].target_accuracy);
  CHECK(rich[0].covariance_bias.size() == 4);
  CHECK(rich[0].anchor_distances.size() == 4);
  CHECK(plain[0].mean_cdd_loss == rich[0].mean_cdd_loss);
}

TEST_CASE("max-probability pseudo-labels drive the same loop") {
  ModelParams m = world().model;
  AdaptConfig cfg = small_config(1);
  cfg.pseudo_labels = PseudoLabelMode::MaxProbability;
  cfg.tau_prime = 0.9;
  const auto h = run_adaptation(m, UnlabeledView(world().data.target), cfg);
  CHECK(h[0].kmeans_iterations == 0);
  CHECK(h[0].n_confident > 0);
}

TEST_CASE("no shift means no harm") {
  const auto pair = gen_shift(small_spec(0.0, 0.0));
  PretrainConfig pc;
  pc.hidden = {16};
  pc.feature_dim = 8;
  pc.epochs = 30;
  ModelParams m = pretrain_source(pair.source, pc);
  const double before = evaluate(m, pair.target).accuracy;
  const Diagnostics diag{&pair.target, nullptr};
  const auto h = run_adaptation(m, UnlabeledView(pair.target), small_config(1), diag);
  CHECK(std::abs(*h[0].target_accuracy - before) <= 0.01);
}

TEST_CASE("history files") {
  ModelParams m = world().model;
  const Diagnostics diag{&world().data.target, nullptr};
  const auto h = run_adaptation(m, UnlabeledView(world().data.target), small_config(2), diag);
  std::ostringstream jsonl, csv;
  write_history_jsonl(jsonl, small_config(2), h);
  write_history_csv(csv, h);

  std::istringstream jl(jsonl.str());
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(jl, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0]["config"]["preset"] == "office");
  CHECK(rows[0]["config"]["classes_per_batch"] == 4);
  CHECK(rows[2]["epoch"] == 1);
  CHECK(rows[1]["n_confident"] == h[0].n_confident);
  CHECK(rows[1]["covariance_bias"].empty());

  std::istringstream cs(csv.str());
  std::getline(cs, line);
  CHECK(line == "epoch,loss,accuracy,n_confident,mean_anchor_distance");
  std::size_t n = 0;
  while (std::getline(cs, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 4);
    ++n;
  }
  CHECK(n == 2);
}

}
