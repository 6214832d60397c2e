// Command-line driver: generate benchmarks, pretrain on source features,
// adapt to an unlabeled target, evaluate, and run the verification harness.
// Results go to stdout as JSON; progress goes to stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "srcfree/bench.hpp"
#include "srcfree/feature_store.hpp"
#include "srcfree/model.hpp"
#include "srcfree/trainer.hpp"

namespace fs = std::filesystem;
using namespace srcfree;

namespace {

struct AdaptFlags {
  std::string ckpt;
  std::string target;
  std::string source;
  std::string preset = "office";
  std::optional<double> tau, gamma, lr, alpha, beta, momentum, weight_decay;
  std::optional<std::size_t> cpb, nb, epochs;
  std::uint64_t seed = 0;
  std::size_t runs = 1;
  bool diagonal = false;
  std::string history;
  std::string csv;
  std::string out;
};

void add_adapt_flags(CLI::App* cmd, AdaptFlags& f) {
  cmd->add_option("--ckpt", f.ckpt, "Source-pretrained checkpoint (SFDM)")->required();
  cmd->add_option("--target", f.target, "Target features (SFDE); labels, if any, are used for reporting only")
      ->required();
  cmd->add_option("--source", f.source, "Optional source features for covariance-bias diagnostics");
  cmd->add_option("--preset", f.preset, "office | visda | custom")
      ->check(CLI::IsMember({"office", "visda", "custom"}));
  cmd->add_option("--tau", f.tau, "Cosine-distance confidence threshold");
  cmd->add_option("--gamma", f.gamma, "Covariance multiplier");
  cmd->add_option("--cpb", f.cpb, "Classes per batch |C'|");
  cmd->add_option("--nb", f.nb, "Samples per class per batch");
  cmd->add_option("--epochs", f.epochs, "Adaptation epochs");
  cmd->add_option("--lr", f.lr, "Initial learning rate");
  cmd->add_option("--alpha", f.alpha, "Learning-rate decay alpha");
  cmd->add_option("--beta", f.beta, "Learning-rate decay beta");
  cmd->add_option("--momentum", f.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", f.weight_decay, "SGD weight decay");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--runs", f.runs, "Independent runs; run i uses seed + i")->check(CLI::PositiveNumber);
  cmd->add_flag("--diagonal-covariance", f.diagonal, "Diagonal surrogate covariances");
  cmd->add_option("--history", f.history, "History JSONL output");
  cmd->add_option("--csv", f.csv, "History CSV output (default: history path with .csv)");
  cmd->add_option("--out", f.out, "Adapted checkpoint output");
}

AdaptConfig resolve_config(const AdaptFlags& f) {
  AdaptConfig cfg = preset_config(f.preset);
  if (f.tau) cfg.tau = *f.tau;
  if (f.gamma) cfg.gamma = *f.gamma;
  if (f.cpb) cfg.classes_per_batch = *f.cpb;
  if (f.nb) cfg.per_class_batch = *f.nb;
  if (f.epochs) cfg.epochs = *f.epochs;
  if (f.lr) cfg.sgd.lr0 = *f.lr;
  if (f.alpha) cfg.sgd.alpha = *f.alpha;
  if (f.beta) cfg.sgd.beta = *f.beta;
  if (f.momentum) cfg.sgd.momentum = *f.momentum;
  if (f.weight_decay) cfg.sgd.weight_decay = *f.weight_decay;
  cfg.diagonal_covariance = f.diagonal;
  cfg.seed = f.seed;
  return cfg;
}

std::string with_run_suffix(const std::string& path, std::size_t run, std::size_t runs) {
  if (path.empty() || runs == 1) return path;
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + ".run" + std::to_string(run) + p.extension().string())).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << text;
}

int run_adapt(const AdaptFlags& f, std::optional<MeanVariant> variant, std::optional<double> tau_prime) {
  AdaptConfig base = resolve_config(f);
  if (variant) base.variant = *variant;
  if (tau_prime) {
    base.pseudo_labels = PseudoLabelMode::MaxProbability;
    base.tau_prime = *tau_prime;
  }
  const ModelParams initial = read_checkpoint(f.ckpt);
  const FeatureDataset target = read_binary(f.target);
  std::optional<FeatureDataset> source;
  if (!f.source.empty()) source = read_binary(f.source);
  const UnlabeledView unlabeled(target);
  // A preset |C'| larger than K is cut to K; an explicit --cpb is validated as given.
  if (!f.cpb && base.classes_per_batch > target.num_classes()) {
    std::cerr << "adapt: preset |C'|=" << base.classes_per_batch << " reduced to K=" << target.num_classes() << "\n";
    base.classes_per_batch = target.num_classes();
  }

  Diagnostics diag;
  if (target.has_labels()) diag.labeled_target = &target;
  if (source && source->has_labels()) diag.source = &*source;

  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t run = 0; run < f.runs; ++run) {
    AdaptConfig cfg = base;
    cfg.seed = base.seed + run;
    ModelParams model = initial;
    std::cerr << "adapt: run " << run << " seed " << cfg.seed << " preset " << cfg.preset << " variant "
              << to_string(cfg.variant) << " pseudo " << to_string(cfg.pseudo_labels) << "\n";
    std::optional<double> before;
    if (diag.labeled_target) before = evaluate(model, target).accuracy;
    const auto history = run_adaptation(model, unlabeled, cfg, diag);
    for (const auto& r : history) {
      std::cerr << "  epoch " << r.epoch << " n_conf " << r.n_confident << " loss " << r.mean_cdd_loss;
      if (r.target_accuracy) std::cerr << " acc " << *r.target_accuracy;
      std::cerr << " anchor_dist " << r.mean_anchor_distance << "\n";
    }
    if (!f.history.empty()) {
      const std::string hist_path = with_run_suffix(f.history, run, f.runs);
      std::ostringstream jsonl;
      write_history_jsonl(jsonl, cfg, history);
      write_text(hist_path, jsonl.str());
      std::string csv_path = f.csv.empty() ? fs::path(f.history).replace_extension(".csv").string() : f.csv;
      csv_path = with_run_suffix(csv_path, run, f.runs);
      std::ostringstream csv;
      write_history_csv(csv, history);
      write_text(csv_path, csv.str());
    }
    if (!f.out.empty()) write_checkpoint(model, with_run_suffix(f.out, run, f.runs));
    nlohmann::json summary{{"seed", cfg.seed}, {"epochs", history.size()}};
    summary["source_only_accuracy"] = before ? nlohmann::json(*before) : nlohmann::json(nullptr);
    summary["final_accuracy"] =
        !history.empty() && history.back().target_accuracy ? nlohmann::json(*history.back().target_accuracy)
                                                           : nlohmann::json(nullptr);
    runs.push_back(summary);
  }
  std::cout << nlohmann::json{{"config", config_to_json(base)}, {"runs", runs}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-free domain adaptation engine"};
  app.require_subcommand(1);

  std::string spec_path, out_src, out_tgt, out_holdout;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic shifted source/target pair");
  gen->add_option("--spec", spec_path, "Benchmark spec (key = value)")->required();
  gen->add_option("--out-src", out_src, "Source SFDE output")->required();
  gen->add_option("--out-tgt", out_tgt, "Target SFDE output")->required();
  gen->add_option("--out-holdout", out_holdout, "Optional held-out source SFDE output");

  std::string pre_source, pre_out;
  PretrainConfig pre_cfg;
  std::size_t pre_hidden = 128;
  auto* pretrain = app.add_subcommand("pretrain", "Supervised training on labeled source features");
  pretrain->add_option("--source", pre_source, "Labeled source SFDE")->required();
  pretrain->add_option("--out", pre_out, "Checkpoint output (SFDM)")->required();
  pretrain->add_option("--epochs", pre_cfg.epochs, "Training epochs");
  pretrain->add_option("--seed", pre_cfg.seed, "Random seed");
  pretrain->add_option("--lr", pre_cfg.sgd.lr0, "Initial extractor learning rate");
  pretrain->add_option("--alpha", pre_cfg.sgd.alpha, "Learning-rate decay alpha");
  pretrain->add_option("--beta", pre_cfg.sgd.beta, "Learning-rate decay beta");
  pretrain->add_option("--batch", pre_cfg.batch_size, "Mini-batch size");
  pretrain->add_option("--hidden", pre_hidden, "Hidden layer width");
  pretrain->add_option("--feature-dim", pre_cfg.feature_dim, "Feature dimension m");

  AdaptFlags adapt_flags;
  auto* adapt = app.add_subcommand("adapt", "Adapt a pretrained model to an unlabeled target");
  add_adapt_flags(adapt, adapt_flags);

  std::string eval_ckpt, eval_data;
  auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on a labeled dataset");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint (SFDM)")->required();
  eval->add_option("--data", eval_data, "Labeled SFDE dataset")->required();

  std::uint64_t gc_seed = 0;
  std::size_t gc_configs = 20;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of all analytic gradients");
  gradcheck->add_option("--seed", gc_seed, "Random seed");
  gradcheck->add_option("--configs", gc_configs, "Random configurations per component")->check(CLI::Range(20, 100000));

  AdaptFlags ablate_flags;
  std::string ablate_variant;
  std::string ablate_pseudo;
  std::optional<double> tau_prime;
  auto* ablate = app.add_subcommand("ablate", "Mean-estimator or pseudo-labeling ablations");
  add_adapt_flags(ablate, ablate_flags);
  ablate->add_option("--variant", ablate_variant, "target-mean | anchor | update-once | full");
  ablate->add_option("--pseudo", ablate_pseudo, "max-prob")->check(CLI::IsMember({"max-prob"}));
  ablate->add_option("--tau-prime", tau_prime, "Max-probability threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const ShiftSpec spec = read_shift_spec(spec_path);
      const ShiftPair pair = gen_shift(spec);
      write_binary(pair.source, out_src);
      write_binary(pair.target, out_tgt);
      if (!out_holdout.empty()) write_binary(gen_source_holdout(spec), out_holdout);
      std::cout << nlohmann::json{{"source", out_src}, {"target", out_tgt}, {"n_source", pair.source.size()},
                                  {"n_target", pair.target.size()}, {"dim", pair.source.dim()},
                                  {"classes", pair.source.num_classes()}}
                       .dump()
                << "\n";
    } else if (*pretrain) {
      pre_cfg.hidden = {pre_hidden};
      const FeatureDataset source = read_binary(pre_source);
      std::cerr << "pretrain: " << source.size() << " rows, " << pre_cfg.epochs << " epochs\n";
      const ModelParams model = pretrain_source(source, pre_cfg);
      write_checkpoint(model, pre_out);
      const EvalResult res = evaluate(model, source);
      std::cout << nlohmann::json{{"checkpoint", pre_out}, {"source_accuracy", res.accuracy}}.dump() << "\n";
    } else if (*adapt) {
      return run_adapt(adapt_flags, std::nullopt, std::nullopt);
    } else if (*eval) {
      const ModelParams model = read_checkpoint(eval_ckpt);
      const FeatureDataset data = read_binary(eval_data);
      std::cout << eval_to_json(evaluate(model, data)).dump() << "\n";
    } else if (*gradcheck) {
      GradcheckOptions opts;
      opts.configurations = gc_configs;
      const GradcheckReport report = gradcheck_suite(gc_seed, opts);
      std::cout << report_to_json(report).dump() << "\n";
      return report.passed ? 0 : 2;
    } else if (*ablate) {
      if (ablate_variant.empty() == ablate_pseudo.empty()) {
        throw Error(ErrorCode::InvalidConfig, "ablate needs exactly one of --variant or --pseudo");
      }
      if (!ablate_pseudo.empty()) {
        if (!tau_prime) throw Error(ErrorCode::InvalidConfig, "--pseudo max-prob requires --tau-prime");
        return run_adapt(ablate_flags, std::nullopt, tau_prime);
      }
      return run_adapt(ablate_flags, parse_mean_variant(ablate_variant), std::nullopt);
    }
  } catch (const Error& e) {
    const std::string what = e.what();
    const auto colon = what.find(": ");
    std::cerr << nlohmann::json{{"error", std::string(error_code_name(e.code()))},
                                {"message", colon == std::string::npos ? std::string() : what.substr(colon + 2)}}
                     .dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
