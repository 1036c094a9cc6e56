// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the morphctl tool. Each returns data and
// writes files; printing is left to the caller.
//
// Run directory layout:
//   config.json     effective configuration (reparses to the config used)
//   seeds.json      master seed and the derived streams
//   metrics.jsonl   one record per iteration
//   ckpt_NNNNNN.bin checkpoints, including iteration 0
//   latest          name of the newest checkpoint
//   transfer.json   transfer runs only: source checkpoint and --scratch flag

#ifndef MORPHCTL_HARNESS_H_
#define MORPHCTL_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphctl/config.h"
#include "morphctl/evaluation.h"
#include "morphctl/trainer.h"

namespace morphctl {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path seeds() const { return dir / "seeds.json"; }
  std::filesystem::path metrics() const { return dir / "metrics.jsonl"; }
  std::filesystem::path latest() const { return dir / "latest"; }
  std::filesystem::path transfer() const { return dir / "transfer.json"; }
  std::filesystem::path checkpoint(int iteration) const;
  // Path named by `latest`; throws when there is none.
  std::filesystem::path LatestCheckpoint() const;
};

struct TrainRequest {
  TrainConfig config;
  bool resume = false;
  // Stop after this many further iterations (a checkpoint is written at the
  // stop point). Negative runs to the end of the budget.
  int max_iterations = -1;
};

// Trains into config.output_dir. With `resume`, continues from the newest
// checkpoint there and drops metrics lines written after it; the stored
// config must agree with `config` except for output_dir.
TrainerState CmdTrain(const TrainRequest& request, std::ostream* log = nullptr);

struct TransferRequest {
  TrainConfig config;  // new corpus, task and training settings
  std::string checkpoint;
  bool scratch = false;  // keep the architecture, ignore the parameters
  int max_iterations = -1;
};

// Starts a run from a trained checkpoint: parameters and observation
// statistics are copied, the optimizer, iteration counter and balancer start
// fresh. Model dimensions always come from the checkpoint so the scratch
// control has the same architecture.
TrainerState CmdTransfer(const TransferRequest& request, std::ostream* log = nullptr);

struct EvalRequest {
  std::string checkpoint;
  std::string robots;  // empty: the corpus recorded in the checkpoint
  std::string task;    // empty: the checkpoint's task
  int trials = 10;
  std::uint64_t seed = 0;
  bool random_actions = false;  // uniform random baseline
};

struct EvalReport {
  std::string task;
  int trials = 0;
  std::uint64_t seed = 0;
  bool random_actions = false;
  std::vector<RobotScore> robots;
  double mean = 0.0;  // over robots
};

EvalReport CmdEvaluate(const EvalRequest& request);
nlohmann::ordered_json ToJson(const EvalReport& report);

struct ZeroshotRequest {
  std::string checkpoint;
  std::string manifest;
  std::string task;
  int trials = 10;
  std::uint64_t seed = 0;
  int resamples = 10000;
};

struct KindSummary {
  std::string kind;
  int variants = 0;
  ConfidenceInterval ci;  // over per-variant mean rewards
  std::vector<double> variant_means;
};

struct ZeroshotReport {
  std::string task;
  int trials = 0;
  std::vector<KindSummary> kinds;  // in order of first appearance
};

ZeroshotReport CmdZeroshot(const ZeroshotRequest& request);
nlohmann::ordered_json ToJson(const ZeroshotReport& report);

// step,layer,stable_rank rows for `steps` policy steps on one robot.
// Returns the number of rows written.
int AnalyzeStableRank(const std::string& checkpoint, const std::string& robot_file,
                      const std::string& task, int steps, std::uint64_t seed,
                      const std::filesystem::path& out_csv);
// N_max x N_max cosine matrix of the actor's position embedding.
void AnalyzePosEmbed(const std::string& checkpoint, const std::filesystem::path& out_csv);
// iteration,<key>_mean,<key>_std,<key>_runs per key over the runs' metrics.
void AnalyzeCurves(const std::vector<std::string>& run_dirs, const std::vector<std::string>& keys,
                   const std::filesystem::path& out_csv);

int CmdMakeCorpus(int count, std::uint64_t seed, const std::filesystem::path& out_dir);
int CmdMakeVariants(const std::string& robots, const std::vector<std::string>& kinds,
                    int variants_per_robot, std::uint64_t seed,
                    const std::filesystem::path& out_dir);

// MM_SEED, when set, parsed as an unsigned integer.
std::optional<std::uint64_t> SeedFromEnv();

}  // namespace morphctl

#endif  // MORPHCTL_HARNESS_H_
