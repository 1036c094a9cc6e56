// SPDX-License-Identifier: Apache-2.0
//
// morphctl: train, evaluate and analyze a morphology-conditioned controller.
// Exit codes: 0 success, 2 usage or configuration error, 1 anything else.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "morphctl/config.h"
#include "morphctl/harness.h"

namespace fs = std::filesystem;
using namespace morphctl;

namespace {

// Flags shared by train and transfer: a base preset, an optional JSON file,
// then one --key value flag per config key.
struct ConfigFlags {
  std::string preset = "full";
  std::string file;
  std::vector<std::pair<std::string, std::string>> overrides;

  void Register(CLI::App* app) {
    app->add_option("--preset", preset, "base configuration: full or desk")
        ->check(CLI::IsMember({"full", "desk"}));
    app->add_option("--config", file, "JSON config file applied over the preset");
    for (const std::string& key : ConfigKeys()) {
      std::string names = "--" + key;
      std::string dashed = key;
      for (char& ch : dashed) {
        if (ch == '_') ch = '-';
      }
      if (dashed != key) names += ",--" + dashed;
      app->add_option_function<std::string>(
          names, [this, key](const std::string& v) { overrides.emplace_back(key, v); },
          "config key " + key);
    }
  }

  std::optional<std::string> Override(const std::string& key) const {
    std::optional<std::string> v;
    for (const auto& [k, val] : overrides) {
      if (k == key) v = val;
    }
    return v;
  }

  // `base_file` replaces preset and --config (used by --resume).
  TrainConfig Build(const std::string& base_file = "") const {
    TrainConfig c = preset == "desk" ? TrainConfig::Desk() : TrainConfig::Full();
    if (!base_file.empty()) {
      c = LoadConfigFile(base_file, c);
    } else if (!file.empty()) {
      c = LoadConfigFile(file, c);
    }
    if (const auto env = SeedFromEnv()) c.seed = *env;
    for (const auto& [k, v] : overrides) ApplyOverride(c, k, v);
    c.Validate();
    return c;
  }
};

std::string CheckpointPath(const std::string& arg) {
  if (fs::is_directory(arg)) return RunPaths{arg}.LatestCheckpoint().string();
  return arg;
}

// Explicit flag, then MM_SEED, then 0.
std::uint64_t ResolveSeed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const auto env = SeedFromEnv()) return *env;
  return 0;
}

void WriteJson(const std::string& path, const nlohmann::ordered_json& j) {
  if (path.empty()) return;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

void PrintEval(const EvalReport& r) {
  std::printf("%-24s %12s %12s\n", "robot", "mean", "std");
  for (const RobotScore& s : r.robots) {
    std::printf("%-24s %12.4f %12.4f\n", s.id.c_str(), s.mean, s.std);
  }
  std::printf("%-24s %12.4f\n", "all robots", r.mean);
}

void PrintZeroshot(const ZeroshotReport& r) {
  std::printf("%-12s %8s %12s %12s %12s\n", "kind", "variants", "mean", "ci95_lo", "ci95_hi");
  for (const KindSummary& k : r.kinds) {
    std::printf("%-12s %8d %12.4f %12.4f %12.4f\n", k.kind.c_str(), k.variants, k.ci.mean,
                k.ci.lo, k.ci.hi);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate one transformer controller over many robot morphologies"};
  app.require_subcommand(1);

  // train
  ConfigFlags train_flags;
  bool resume = false;
  int train_max_iterations = -1;
  CLI::App* train = app.add_subcommand("train", "joint training over a robot corpus");
  train_flags.Register(train);
  train->add_flag("--resume", resume, "continue from the newest checkpoint in output_dir");
  train->add_option("--max-iterations", train_max_iterations, "stop after this many iterations");

  // transfer
  ConfigFlags transfer_flags;
  std::string transfer_ckpt;
  bool scratch = false;
  int transfer_max_iterations = -1;
  CLI::App* transfer =
      app.add_subcommand("transfer", "fine-tune a checkpoint on a new corpus or task");
  transfer_flags.Register(transfer);
  transfer->add_option("--checkpoint", transfer_ckpt, "source checkpoint or run directory")
      ->required();
  transfer->add_flag("--scratch", scratch, "train the same architecture from a fresh init");
  transfer->add_option("--max-iterations", transfer_max_iterations);

  // evaluate
  std::string eval_ckpt, eval_robots, eval_task, eval_json;
  int eval_trials = 10;
  std::optional<std::uint64_t> eval_seed;
  bool eval_random = false;
  CLI::App* evaluate = app.add_subcommand("evaluate", "per-robot reward of the policy mean");
  evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint or run directory")->required();
  evaluate->add_option("--robots", eval_robots, "corpus (default: the training corpus)");
  evaluate->add_option("--task", eval_task, "task (default: the training task)");
  evaluate->add_option("--trials", eval_trials, "episodes per robot");
  evaluate->add_option("--seed", eval_seed, "terrain seed root (default MM_SEED or 0)");
  evaluate->add_flag("--random", eval_random, "uniform random actions instead of the policy");
  evaluate->add_option("--json", eval_json, "also write the table as JSON");

  // zeroshot
  std::string zs_ckpt, zs_manifest, zs_task, zs_json;
  int zs_trials = 10, zs_resamples = 10000;
  std::optional<std::uint64_t> zs_seed;
  CLI::App* zeroshot = app.add_subcommand("zeroshot", "evaluate a variant suite per kind");
  zeroshot->add_option("--checkpoint", zs_ckpt, "checkpoint or run directory")->required();
  zeroshot->add_option("--suite,--manifest", zs_manifest, "variant manifest.json")->required();
  zeroshot->add_option("--task", zs_task);
  zeroshot->add_option("--trials", zs_trials);
  zeroshot->add_option("--seed", zs_seed);
  zeroshot->add_option("--resamples", zs_resamples, "bootstrap resamples");
  zeroshot->add_option("--json", zs_json);

  // analyze
  CLI::App* analyze = app.add_subcommand("analyze", "attention, embedding and curve analysis");
  analyze->require_subcommand(1);
  std::string sr_ckpt, sr_robot, sr_task, sr_out = "stable_rank.csv";
  int sr_steps = 200;
  std::optional<std::uint64_t> sr_seed;
  CLI::App* stablerank = analyze->add_subcommand("stablerank", "stable rank along an episode");
  stablerank->add_option("--checkpoint", sr_ckpt)->required();
  stablerank->add_option("--robot", sr_robot, "morphology file")->required();
  stablerank->add_option("--task", sr_task);
  stablerank->add_option("--steps", sr_steps);
  stablerank->add_option("--seed", sr_seed);
  stablerank->add_option("--out", sr_out);
  std::string pe_ckpt, pe_out = "posembed.csv";
  CLI::App* posembed = analyze->add_subcommand("posembed", "position-embedding cosine matrix");
  posembed->add_option("--checkpoint", pe_ckpt)->required();
  posembed->add_option("--out", pe_out);
  std::vector<std::string> cv_runs, cv_keys = {"mean_reward"};
  std::string cv_out = "curves.csv";
  CLI::App* curves = analyze->add_subcommand("curves", "mean and std of metrics over runs");
  curves->add_option("--runs", cv_runs, "run directories")->required();
  curves->add_option("--keys", cv_keys, "metric keys");
  curves->add_option("--out", cv_out);

  // make-corpus
  int mc_count = 8;
  std::optional<std::uint64_t> mc_seed;
  std::string mc_out;
  CLI::App* make_corpus = app.add_subcommand("make-corpus", "sample random morphologies");
  make_corpus->add_option("--count", mc_count);
  make_corpus->add_option("--seed", mc_seed);
  make_corpus->add_option("--out", mc_out)->required();

  // make-variants
  std::string mv_robots, mv_out;
  std::vector<std::string> mv_kinds;
  int mv_per_robot = 4;
  std::optional<std::uint64_t> mv_seed;
  CLI::App* make_variants = app.add_subcommand("make-variants", "build a zero-shot variant suite");
  make_variants->add_option("--robots", mv_robots)->required();
  make_variants->add_option("--kinds", mv_kinds, "variation kinds (default: all six)");
  make_variants->add_option("--per-robot", mv_per_robot, "variants per robot and kind");
  make_variants->add_option("--seed", mv_seed);
  make_variants->add_option("--out", mv_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) {
      TrainRequest req;
      req.resume = resume;
      req.max_iterations = train_max_iterations;
      if (resume) {
        const auto dir = train_flags.Override("output_dir");
        if (!dir) throw UsageError("--resume needs --output_dir");
        req.config = train_flags.Build((fs::path(*dir) / "config.json").string());
      } else {
        req.config = train_flags.Build();
      }
      CmdTrain(req, &std::cerr);
      std::cout << req.config.output_dir << "\n";
    } else if (transfer->parsed()) {
      TransferRequest req;
      req.config = transfer_flags.Build();
      req.checkpoint = CheckpointPath(transfer_ckpt);
      req.scratch = scratch;
      req.max_iterations = transfer_max_iterations;
      CmdTransfer(req, &std::cerr);
      std::cout << req.config.output_dir << "\n";
    } else if (evaluate->parsed()) {
      EvalRequest req;
      req.checkpoint = CheckpointPath(eval_ckpt);
      req.robots = eval_robots;
      req.task = eval_task;
      req.trials = eval_trials;
      req.seed = ResolveSeed(eval_seed);
      req.random_actions = eval_random;
      const EvalReport report = CmdEvaluate(req);
      PrintEval(report);
      WriteJson(eval_json, ToJson(report));
    } else if (zeroshot->parsed()) {
      ZeroshotRequest req;
      req.checkpoint = CheckpointPath(zs_ckpt);
      req.manifest = zs_manifest;
      req.task = zs_task;
      req.trials = zs_trials;
      req.seed = ResolveSeed(zs_seed);
      req.resamples = zs_resamples;
      const ZeroshotReport report = CmdZeroshot(req);
      PrintZeroshot(report);
      WriteJson(zs_json, ToJson(report));
    } else if (stablerank->parsed()) {
      const int rows = AnalyzeStableRank(CheckpointPath(sr_ckpt), sr_robot, sr_task, sr_steps,
                                         ResolveSeed(sr_seed), sr_out);
      std::cout << sr_out << " (" << rows << " rows)\n";
    } else if (posembed->parsed()) {
      AnalyzePosEmbed(CheckpointPath(pe_ckpt), pe_out);
      std::cout << pe_out << "\n";
    } else if (curves->parsed()) {
      AnalyzeCurves(cv_runs, cv_keys, cv_out);
      std::cout << cv_out << "\n";
    } else if (make_corpus->parsed()) {
      const int n = CmdMakeCorpus(mc_count, ResolveSeed(mc_seed), mc_out);
      std::cout << n << " robots in " << mc_out << "\n";
    } else if (make_variants->parsed()) {
      const int n = CmdMakeVariants(mv_robots, mv_kinds, mv_per_robot, ResolveSeed(mv_seed), mv_out);
      std::cout << n << " variants in " << mv_out << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "morphctl: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "morphctl: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "morphctl: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
