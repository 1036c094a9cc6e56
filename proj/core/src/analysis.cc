// SPDX-License-Identifier: Apache-2.0

#include "morphctl/analysis.h"

#include <cmath>
#include <fstream>

#include <Eigen/Eigenvalues>

namespace morphctl {

double StableRank(const Matrix& a) {
  if (a.size() == 0) throw AnalysisError("stable rank of an empty matrix");
  if (!a.allFinite()) throw AnalysisError("stable rank of a non-finite matrix");
  const double fro2 = a.squaredNorm();
  if (fro2 == 0.0) throw AnalysisError("stable rank of a zero matrix");
  // Work with the smaller Gram matrix.
  const Eigen::MatrixXd gram =
      a.rows() < a.cols() ? Eigen::MatrixXd(a * a.transpose()) : Eigen::MatrixXd(a.transpose() * a);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw AnalysisError("eigenvalue solver did not converge");
  const double top = solver.eigenvalues().maxCoeff();
  return fro2 / top;
}

std::vector<AttentionRecord> AttentionEpisodeTrace(const ActorCritic& net,
                                                   const ObsNormalizers& norm,
                                                   const MorphologyGraph& graph,
                                                   const TaskConfig& task, int steps,
                                                   std::uint64_t seed) {
  std::vector<AttentionRecord> out;
  std::uint64_t episode = 0;
  auto env = std::make_unique<Environment>(graph, task, DeriveSeed(seed, {episode}));
  auto builder = std::make_unique<ObservationBuilder>(env->model(), DfsTokenOrder(graph),
                                                      net.config().max_tokens);
  const int n = static_cast<int>(graph.nodes.size());
  for (int step = 0; step < steps; ++step) {
    const ObservationBundle obs = norm.Apply(builder->Build(env->state(), env->terrain()));
    const ObservationBundle* ptr = &obs;
    const TokenBatch batch = TokenBatch::Build(std::span(&ptr, 1), true);
    Tape tape(false);
    TransformerNet::Trace trace;
    const Tape::Id means = net.ActorMeans(tape, batch, false, nullptr, &trace);
    for (std::size_t l = 0; l < trace.attention.size(); ++l) {
      const auto& probs = tape.attention_probs(trace.attention[l]);
      AttentionRecord rec;
      rec.step = step;
      rec.layer = static_cast<int>(l);
      rec.attention = Matrix::Zero(n, n);
      for (const Matrix& head : probs[0]) rec.attention += head;
      rec.attention /= static_cast<double>(probs[0].size());
      rec.stable_rank = StableRank(rec.attention);
      out.push_back(std::move(rec));
    }
    const std::vector<double> mu = LiveMeans(tape.value(means), batch, 0);
    std::vector<double> action(env->num_joints(), 0.0);
    const auto& live = builder->live_joints();
    for (std::size_t k = 0; k < live.size(); ++k) action[live[k]] = mu[k];
    if (env->Step(action).done) {
      ++episode;
      env = std::make_unique<Environment>(graph, task, DeriveSeed(seed, {episode}));
      builder = std::make_unique<ObservationBuilder>(env->model(), DfsTokenOrder(graph),
                                                     net.config().max_tokens);
    }
  }
  return out;
}

Matrix PosEmbedCosine(const Matrix& w_pos, int* zero_rows) {
  const Eigen::Index n = w_pos.rows();
  Vector norms(n);
  int zeros = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    norms(i) = w_pos.row(i).norm();
    if (norms(i) == 0.0) ++zeros;
  }
  Matrix c = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (norms(i) == 0.0 || norms(j) == 0.0) continue;
      c(i, j) = i == j ? 1.0 : w_pos.row(i).dot(w_pos.row(j)) / (norms(i) * norms(j));
    }
  }
  if (zero_rows) *zero_rows = zeros;
  return c;
}

Curve SummarizeMetrics(const std::vector<std::vector<nlohmann::json>>& runs,
                       const std::string& key) {
  if (runs.empty()) throw AnalysisError("no runs to summarize");
  Curve c;
  c.key = key;
  for (const auto& rec : runs[0]) c.iterations.push_back(rec.at("iteration").get<int>());
  for (std::size_t r = 1; r < runs.size(); ++r) {
    std::vector<int> its;
    for (const auto& rec : runs[r]) its.push_back(rec.at("iteration").get<int>());
    if (its != c.iterations) {
      throw AnalysisError("run " + std::to_string(r) + " has a different iteration grid");
    }
  }
  for (std::size_t i = 0; i < c.iterations.size(); ++i) {
    std::vector<double> v;
    for (const auto& run : runs) {
      const auto& rec = run[i];
      if (!rec.contains(key)) throw AnalysisError("metrics record has no key '" + key + "'");
      if (rec.at(key).is_null()) continue;
      if (!rec.at(key).is_number()) throw AnalysisError("key '" + key + "' is not numeric");
      v.push_back(rec.at(key).get<double>());
    }
    double mean = 0.0, var = 0.0;
    for (double x : v) mean += x;
    if (!v.empty()) mean /= static_cast<double>(v.size());
    for (double x : v) var += (x - mean) * (x - mean);
    if (!v.empty()) var /= static_cast<double>(v.size());
    c.mean.push_back(v.empty() ? std::nan("") : mean);
    c.std.push_back(v.empty() ? std::nan("") : std::sqrt(var));
    c.runs.push_back(static_cast<int>(v.size()));
  }
  return c;
}

std::vector<nlohmann::json> ReadJsonLines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw AnalysisError("cannot open '" + path + "'");
  std::vector<nlohmann::json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw AnalysisError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace morphctl
