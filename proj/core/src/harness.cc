// SPDX-License-Identifier: Apache-2.0

#include "morphctl/harness.h"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "morphctl/analysis.h"
#include "morphctl/checkpoint.h"
#include "morphctl/corpus.h"
#include "morphctl/morphology_io.h"
#include "morphctl/variation.h"

namespace morphctl {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 0x494e4954ULL;

void WriteText(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Keeps records with iteration <= `last`.
void TruncateMetrics(const fs::path& path, int last) {
  if (!fs::exists(path)) return;
  std::istringstream in(ReadText(path));
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json rec = nlohmann::json::parse(line);
    if (rec.at("iteration").get<int>() <= last) kept += line + "\n";
  }
  WriteText(path, kept);
}

std::vector<Robot> LoadCorpus(const std::string& path) {
  if (path.empty()) throw UsageError("no robot corpus given (set --robots)");
  return LoadRobots(path);
}

void SaveAndPoint(const RunPaths& paths, const TrainerState& st) {
  const fs::path ckpt = paths.checkpoint(st.iteration);
  SaveCheckpoint(ckpt.string(), st);
  WriteText(paths.latest(), ckpt.filename().string() + "\n");
}

void WriteRunMetadata(const RunPaths& paths, const TrainConfig& c) {
  WriteText(paths.config(), ToJson(c).dump(2) + "\n");
  nlohmann::ordered_json seeds;
  seeds["seed"] = c.seed;
  seeds["init"] = DeriveSeed(c.seed, {kInitStream});
  // Per-episode robot and terrain seeds are drawn from the slot stream.
  seeds["rollout_slot"] = "DeriveSeed(seed, [iteration, slot, 0x524f])";
  seeds["minibatch_shuffle"] = "DeriveSeed(seed, [iteration, 0x5348554655])";
  seeds["dropout"] = "DeriveSeed(seed, [iteration, 0x44524f50])";
  WriteText(paths.seeds(), seeds.dump(2) + "\n");
}

// Trains from `st` to the end of the budget (or `max_iterations` more),
// appending metrics and checkpointing on the interval and at the stop point.
TrainerState Train(TrainerState st, std::vector<Robot> robots, const RunPaths& paths,
                   int max_iterations, std::ostream* log) {
  Trainer trainer(std::move(st), std::move(robots));
  std::ofstream metrics(paths.metrics(), std::ios::binary | std::ios::app);
  if (!metrics) throw std::runtime_error("cannot open '" + paths.metrics().string() + "'");
  const int interval = trainer.state().config.checkpoint_interval;
  const int total = trainer.state().config.NumIterations();
  trainer.Run(max_iterations, [&](const nlohmann::ordered_json& rec, const TrainerState& s) {
    metrics << rec.dump() << "\n";
    metrics.flush();
    if (s.iteration % interval == 0 || s.iteration == total) SaveAndPoint(paths, s);
    if (log) {
      *log << "iteration " << s.iteration << "/" << total << "  mean_reward "
           << rec["mean_reward"].dump() << "  episodes " << rec["episodes"].dump() << "\n";
    }
  });
  const TrainerState& end = trainer.state();
  if (end.iteration % interval != 0 && end.iteration != total) SaveAndPoint(paths, end);
  return end;
}

void StartFreshRun(const RunPaths& paths) {
  fs::create_directories(paths.dir);
  if (fs::exists(paths.metrics()) && fs::file_size(paths.metrics()) > 0) {
    throw UsageError("run directory '" + paths.dir.string() +
                     "' already holds metrics; pass --resume or choose another output_dir");
  }
  WriteText(paths.metrics(), "");
}

TrainConfig WithAbsoluteRobots(TrainConfig c) {
  if (!c.robots.empty()) c.robots = fs::absolute(c.robots).lexically_normal().string();
  return c;
}

std::string ResolveTask(const std::string& requested, const TrainConfig& c) {
  const std::string task = requested.empty() ? c.task : requested;
  try {
    ParseTask(task);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return task;
}

TaskConfig TaskFor(const TrainConfig& c, const std::string& task) {
  TrainConfig t = c;
  t.task = task;
  return t.Task();
}

void WriteCsv(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  WriteText(path, text);
}

std::string Num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

fs::path RunPaths::checkpoint(int iteration) const {
  char name[32];
  std::snprintf(name, sizeof(name), "ckpt_%06d.bin", iteration);
  return dir / name;
}

fs::path RunPaths::LatestCheckpoint() const {
  if (!fs::exists(latest())) {
    throw UsageError("no checkpoint to resume from in '" + dir.string() + "'");
  }
  std::string name = ReadText(latest());
  while (!name.empty() && (name.back() == '\n' || name.back() == '\r')) name.pop_back();
  return dir / name;
}

TrainerState CmdTrain(const TrainRequest& request, std::ostream* log) {
  const TrainConfig config = WithAbsoluteRobots(request.config);
  config.Validate();
  const RunPaths paths{config.output_dir};
  if (request.resume) {
    TrainerState st = LoadCheckpoint(paths.LatestCheckpoint().string());
    TrainConfig stored = st.config;
    stored.output_dir = config.output_dir;
    if (ToJson(stored) != ToJson(config)) {
      throw UsageError("resume config differs from the one stored in '" + paths.dir.string() + "'");
    }
    st.config = stored;
    TruncateMetrics(paths.metrics(), st.iteration);
    if (log) *log << "resuming at iteration " << st.iteration << "\n";
    return Train(std::move(st), LoadCorpus(config.robots), paths, request.max_iterations, log);
  }
  std::vector<Robot> robots = LoadCorpus(config.robots);
  StartFreshRun(paths);
  WriteRunMetadata(paths, config);
  TrainerState st = TrainerState::Create(config, robots);
  SaveAndPoint(paths, st);
  return Train(std::move(st), std::move(robots), paths, request.max_iterations, log);
}

TrainerState CmdTransfer(const TransferRequest& request, std::ostream* log) {
  const TrainerState source = LoadCheckpoint(request.checkpoint);
  TrainConfig config = WithAbsoluteRobots(request.config);
  const TrainConfig& sc = source.config;
  config.layers = sc.layers;
  config.heads = sc.heads;
  config.d_model = sc.d_model;
  config.feedforward = sc.feedforward;
  config.activation = sc.activation;
  config.global_hidden = sc.global_hidden;
  config.max_tokens = sc.max_tokens;
  config.action_std = sc.action_std;
  config.Validate();

  std::vector<Robot> robots = LoadCorpus(config.robots);
  const RunPaths paths{config.output_dir};
  StartFreshRun(paths);
  WriteRunMetadata(paths, config);
  nlohmann::ordered_json meta;
  meta["source_checkpoint"] = fs::absolute(request.checkpoint).lexically_normal().string();
  meta["source_iteration"] = source.iteration;
  meta["scratch"] = request.scratch;
  WriteText(paths.transfer(), meta.dump(2) + "\n");

  TrainerState st = TrainerState::Create(config, robots);
  if (!request.scratch) {
    for (Parameter& p : st.net.params()) p.value = source.net.params()[source.net.params().Find(p.name)].value;
    if (config.observation_normalization == sc.observation_normalization) {
      st.obs_norm.local.SetState(source.obs_norm.local.mean(), source.obs_norm.local.var(),
                                 source.obs_norm.local.count());
      st.obs_norm.global.SetState(source.obs_norm.global.mean(), source.obs_norm.global.var(),
                                  source.obs_norm.global.count());
    }
  }
  if (log) {
    *log << (request.scratch ? "scratch control" : "fine-tuning") << " from "
         << request.checkpoint << "\n";
  }
  SaveAndPoint(paths, st);
  return Train(std::move(st), std::move(robots), paths, request.max_iterations, log);
}

EvalReport CmdEvaluate(const EvalRequest& request) {
  if (request.trials < 1) throw UsageError("trials must be >= 1");
  const TrainerState st = LoadCheckpoint(request.checkpoint);
  const std::vector<Robot> robots =
      LoadCorpus(request.robots.empty() ? st.config.robots : request.robots);
  EvalReport report;
  report.task = ResolveTask(request.task, st.config);
  report.trials = request.trials;
  report.seed = request.seed;
  report.random_actions = request.random_actions;
  report.robots = EvaluatePool(st.net, st.obs_norm, robots, TaskFor(st.config, report.task),
                               request.trials, request.seed,
                               request.random_actions ? ActionMode::kUniformRandom
                                                      : ActionMode::kPolicyMean);
  std::vector<double> means;
  for (const RobotScore& r : report.robots) means.push_back(r.mean);
  report.mean = MeanOf(means);
  return report;
}

nlohmann::ordered_json ToJson(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["task"] = report.task;
  j["trials"] = report.trials;
  j["seed"] = report.seed;
  j["policy"] = report.random_actions ? "uniform_random" : "mean";
  j["mean_reward"] = report.mean;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const RobotScore& r : report.robots) {
    rows.push_back({{"robot", r.id}, {"mean", r.mean}, {"std", r.std}, {"rewards", r.rewards}});
  }
  j["robots"] = rows;
  return j;
}

ZeroshotReport CmdZeroshot(const ZeroshotRequest& request) {
  if (request.trials < 1) throw UsageError("trials must be >= 1");
  const TrainerState st = LoadCheckpoint(request.checkpoint);
  const std::vector<ManifestRecord> records = ReadManifest(request.manifest);
  std::vector<std::string> missing;
  for (const ManifestRecord& r : records) {
    if (!fs::exists(r.path)) missing.push_back(r.path);
  }
  if (!missing.empty()) {
    std::string msg = "missing variant files:";
    for (const std::string& m : missing) msg += "\n  " + m;
    throw UsageError(msg);
  }
  ZeroshotReport report;
  report.task = ResolveTask(request.task, st.config);
  report.trials = request.trials;
  const TaskConfig task = TaskFor(st.config, report.task);
  std::map<std::string, std::size_t> slot;
  for (const ManifestRecord& r : records) {
    const MorphologyGraph g = LoadMorphologyFile(r.path);
    const std::vector<TrialResult> trials = EvaluateRobot(st.net, st.obs_norm, g, task,
                                                          request.trials, request.seed,
                                                          ActionMode::kPolicyMean);
    double sum = 0.0;
    for (const TrialResult& t : trials) sum += t.reward;
    const std::string kind = ToString(r.kind);
    auto [it, inserted] = slot.emplace(kind, report.kinds.size());
    if (inserted) report.kinds.push_back({kind, 0, {}, {}});
    report.kinds[it->second].variant_means.push_back(sum / request.trials);
  }
  for (std::size_t k = 0; k < report.kinds.size(); ++k) {
    KindSummary& s = report.kinds[k];
    s.variants = static_cast<int>(s.variant_means.size());
    s.ci = BootstrapMeanCi(s.variant_means, request.resamples, DeriveSeed(request.seed, {k}));
  }
  return report;
}

nlohmann::ordered_json ToJson(const ZeroshotReport& report) {
  nlohmann::ordered_json j;
  j["task"] = report.task;
  j["trials"] = report.trials;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const KindSummary& k : report.kinds) {
    rows.push_back({{"kind", k.kind},
                    {"variants", k.variants},
                    {"mean", k.ci.mean},
                    {"ci95_lo", k.ci.lo},
                    {"ci95_hi", k.ci.hi},
                    {"variant_means", k.variant_means}});
  }
  j["kinds"] = rows;
  return j;
}

int AnalyzeStableRank(const std::string& checkpoint, const std::string& robot_file,
                      const std::string& task, int steps, std::uint64_t seed,
                      const fs::path& out_csv) {
  if (steps < 1) throw UsageError("steps must be >= 1");
  const TrainerState st = LoadCheckpoint(checkpoint);
  const MorphologyGraph g = LoadMorphologyFile(robot_file);
  const std::vector<AttentionRecord> recs = AttentionEpisodeTrace(
      st.net, st.obs_norm, g, TaskFor(st.config, ResolveTask(task, st.config)), steps, seed);
  std::string csv = "step,layer,stable_rank\n";
  for (const AttentionRecord& r : recs) {
    csv += std::to_string(r.step) + "," + std::to_string(r.layer) + "," + Num(r.stable_rank) + "\n";
  }
  WriteCsv(out_csv, csv);
  return static_cast<int>(recs.size());
}

void AnalyzePosEmbed(const std::string& checkpoint, const fs::path& out_csv) {
  const TrainerState st = LoadCheckpoint(checkpoint);
  const ParameterSet& params = st.net.params();
  const int idx = params.Find("policy.Wpos");
  if (idx < 0) throw AnalysisError("checkpoint has no position embedding");
  const Matrix c = PosEmbedCosine(params[idx].value);
  std::string csv;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.cols(); ++j) csv += (j ? "," : "") + Num(c(i, j));
    csv += "\n";
  }
  WriteCsv(out_csv, csv);
}

void AnalyzeCurves(const std::vector<std::string>& run_dirs, const std::vector<std::string>& keys,
                   const fs::path& out_csv) {
  if (run_dirs.empty()) throw UsageError("no run directories given");
  if (keys.empty()) throw UsageError("no metric keys given");
  std::vector<std::vector<nlohmann::json>> runs;
  for (const std::string& d : run_dirs) {
    runs.push_back(ReadJsonLines((RunPaths{d}.metrics()).string()));
  }
  std::vector<Curve> curves;
  for (const std::string& k : keys) curves.push_back(SummarizeMetrics(runs, k));
  std::string csv = "iteration";
  for (const std::string& k : keys) csv += "," + k + "_mean," + k + "_std," + k + "_runs";
  csv += "\n";
  for (std::size_t i = 0; i < curves[0].iterations.size(); ++i) {
    csv += std::to_string(curves[0].iterations[i]);
    for (const Curve& c : curves) {
      csv += "," + Num(c.mean[i]) + "," + Num(c.std[i]) + "," + std::to_string(c.runs[i]);
    }
    csv += "\n";
  }
  WriteCsv(out_csv, csv);
}

int CmdMakeCorpus(int count, std::uint64_t seed, const fs::path& out_dir) {
  if (count < 1) throw UsageError("count must be >= 1");
  WriteCorpus(SampleCorpus(count, seed), out_dir);
  return count;
}

int CmdMakeVariants(const std::string& robots, const std::vector<std::string>& kinds,
                    int variants_per_robot, std::uint64_t seed, const fs::path& out_dir) {
  if (variants_per_robot < 1) throw UsageError("variants per robot must be >= 1");
  std::vector<NamedRobot> named;
  for (Robot& r : LoadCorpus(robots)) named.push_back({r.id, std::move(r.graph)});
  std::vector<VariationSpec> specs;
  for (const std::string& k : kinds) {
    VariationSpec s;
    try {
      s.kind = ParseVariationKind(k);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    s.variants_per_robot = variants_per_robot;
    specs.push_back(s);
  }
  if (specs.empty()) {
    for (VariationKind k : AllVariationKinds()) {
      VariationSpec s;
      s.kind = k;
      s.variants_per_robot = variants_per_robot;
      specs.push_back(s);
    }
  }
  SuiteManifest suite = BuildVariantSuite(named, specs, seed);
  WriteVariantSuite(suite, out_dir);
  return static_cast<int>(suite.entries.size());
}

std::optional<std::uint64_t> SeedFromEnv() {
  const char* v = std::getenv("MM_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (errno != 0 || *end != '\0' || v[0] == '-') {
    throw UsageError(std::string("MM_SEED must be a non-negative integer, got '") + v + "'");
  }
  return s;
}

}  // namespace morphctl
