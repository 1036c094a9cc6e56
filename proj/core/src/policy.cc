// SPDX-License-Identifier: Apache-2.0

#include "morphctl/policy.h"

#include <cmath>
#include <numbers>

namespace morphctl {

int TokenBatch::num_live_joints(int sample) const {
  const Segment seg = segments[sample];
  int n = 0;
  for (int r = seg.begin; r < seg.begin + seg.length; ++r) {
    if (key_mask[r]) n += joint_mask[r][0] + joint_mask[r][1];
  }
  return n;
}

TokenBatch TokenBatch::Build(std::span<const ObservationBundle* const> bundles, bool packed) {
  if (bundles.empty()) throw PolicyError("token batch needs at least one sample");
  const Eigen::Index width = bundles[0]->local.cols();
  const Eigen::Index gwidth = bundles[0]->global.size();
  int rows = 0;
  for (const ObservationBundle* b : bundles) {
    if (b->local.cols() != width || b->global.size() != gwidth) {
      throw PolicyError("token batch: inconsistent observation widths");
    }
    rows += packed ? b->num_tokens() : static_cast<int>(b->local.rows());
  }
  TokenBatch tb;
  tb.local.resize(rows, width);
  tb.global.resize(static_cast<Eigen::Index>(bundles.size()), gwidth);
  tb.key_mask.reserve(rows);
  tb.position.reserve(rows);
  tb.row_sample.reserve(rows);
  tb.joint_mask.reserve(rows);
  int r = 0;
  for (std::size_t s = 0; s < bundles.size(); ++s) {
    const ObservationBundle& b = *bundles[s];
    tb.global.row(static_cast<Eigen::Index>(s)) = b.global.transpose();
    const int begin = r;
    for (Eigen::Index t = 0; t < b.local.rows(); ++t) {
      if (packed && !b.mask[t]) continue;
      tb.local.row(r) = b.local.row(t);
      tb.key_mask.push_back(b.mask[t]);
      tb.position.push_back(static_cast<int>(t));
      tb.row_sample.push_back(static_cast<int>(s));
      tb.joint_mask.push_back(b.mask[t] ? b.joint_mask[t] : std::array<bool, 2>{false, false});
      ++r;
    }
    if (r == begin) throw PolicyError("token batch: sample " + std::to_string(s) + " has no modules");
    tb.segments.push_back({begin, r - begin});
  }
  return tb;
}

TransformerNet::TransformerNet(ParameterSet& params, const PolicyConfig& config,
                               const std::string& prefix, int outputs_per_token)
    : config_(config), prefix_(prefix), outputs_(outputs_per_token) {
  if (config.heads <= 0 || config.d_model % config.heads != 0) {
    throw PolicyError("d_model must be divisible by the head count");
  }
  const int d = config.d_model;
  const int f = config.feedforward;
  const int gh = config.global_hidden;
  const std::string p = prefix + ".";
  w_e_ = params.Add(p + "We", config.local_width, d);
  b_e_ = params.Add(p + "We.b", 1, d);
  w_pos_ = params.Add(p + "Wpos", config.max_tokens, d);
  for (int i = 0; i < config.layers; ++i) {
    const std::string b = p + "block" + std::to_string(i) + ".";
    Block k;
    k.ln1_g = params.Add(b + "ln1.gain", 1, d);
    k.ln1_b = params.Add(b + "ln1.bias", 1, d);
    k.wq = params.Add(b + "msa.Wq", d, d);
    k.bq = params.Add(b + "msa.bq", 1, d);
    k.wk = params.Add(b + "msa.Wk", d, d);
    k.bk = params.Add(b + "msa.bk", 1, d);
    k.wv = params.Add(b + "msa.Wv", d, d);
    k.bv = params.Add(b + "msa.bv", 1, d);
    k.wo = params.Add(b + "msa.Wo", d, d);
    k.bo = params.Add(b + "msa.bo", 1, d);
    k.ln2_g = params.Add(b + "ln2.gain", 1, d);
    k.ln2_b = params.Add(b + "ln2.bias", 1, d);
    k.w1 = params.Add(b + "mlp.W1", d, f);
    k.b1 = params.Add(b + "mlp.b1", 1, f);
    k.w2 = params.Add(b + "mlp.W2", f, d);
    k.b2 = params.Add(b + "mlp.b2", 1, d);
    blocks_.push_back(k);
  }
  g_w1_ = params.Add(p + "Wg.W1", config.global_width, gh);
  g_b1_ = params.Add(p + "Wg.b1", 1, gh);
  g_w2_ = params.Add(p + "Wg.W2", gh, gh);
  g_b2_ = params.Add(p + "Wg.b2", 1, gh);
  w_d_ = params.Add(p + "Wd", d + gh, outputs_per_token);
  b_d_ = params.Add(p + "Wd.b", 1, outputs_per_token);
}

namespace {

void FillUniform(Matrix& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Uniform(-bound, bound);
}

void FillXavier(Matrix& m, Rng& rng) {
  FillUniform(m, std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols())), rng);
}

}  // namespace

void TransformerNet::Initialize(ParameterSet& params, Rng& rng) const {
  FillUniform(params[w_e_].value, 0.1, rng);
  params[b_e_].value.setZero();
  for (Eigen::Index i = 0; i < params[w_pos_].value.size(); ++i) {
    params[w_pos_].value.data()[i] = rng.Normal(0.0, 0.02);
  }
  for (const Block& k : blocks_) {
    params[k.ln1_g].value.setOnes();
    params[k.ln1_b].value.setZero();
    params[k.ln2_g].value.setOnes();
    params[k.ln2_b].value.setZero();
    for (int w : {k.wq, k.wk, k.wv, k.wo, k.w1, k.w2}) FillXavier(params[w].value, rng);
    for (int b : {k.bq, k.bk, k.bv, k.bo, k.b1, k.b2}) params[b].value.setZero();
  }
  FillXavier(params[g_w1_].value, rng);
  FillXavier(params[g_w2_].value, rng);
  params[g_b1_].value.setZero();
  params[g_b2_].value.setZero();
  FillUniform(params[w_d_].value, 0.01, rng);
  params[b_d_].value.setZero();
}

Tape::Id TransformerNet::Forward(Tape& tape, const ParameterSet& params, const TokenBatch& batch,
                                 bool train, Rng* dropout_rng, Trace* trace) const {
  if (batch.local.cols() != config_.local_width) {
    throw PolicyError("local observation width " + std::to_string(batch.local.cols()) +
                      " != configured " + std::to_string(config_.local_width));
  }
  if (batch.global.cols() != config_.global_width) {
    throw PolicyError("global observation width " + std::to_string(batch.global.cols()) +
                      " != configured " + std::to_string(config_.global_width));
  }
  auto P = [&](int i) { return tape.Param(params[i]); };
  const double p = config_.dropout;

  Tape::Id m = tape.Linear(tape.Input(batch.local), P(w_e_), P(b_e_));
  m = tape.Add(m, tape.GatherRows(P(w_pos_), batch.position));
  for (const Block& k : blocks_) {
    const Tape::Id h = tape.LayerNorm(m, P(k.ln1_g), P(k.ln1_b));
    const Tape::Id q = tape.Linear(h, P(k.wq), P(k.bq));
    const Tape::Id kk = tape.Linear(h, P(k.wk), P(k.bk));
    const Tape::Id v = tape.Linear(h, P(k.wv), P(k.bv));
    const Tape::Id a = tape.Attention(q, kk, v, batch.segments, batch.key_mask, config_.heads,
                                      trace != nullptr);
    if (trace) trace->attention.push_back(a);
    Tape::Id o = tape.Linear(a, P(k.wo), P(k.bo));
    m = tape.Add(m, tape.Dropout(o, p, dropout_rng, train));

    const Tape::Id h2 = tape.LayerNorm(m, P(k.ln2_g), P(k.ln2_b));
    Tape::Id f = tape.Relu(tape.Linear(h2, P(k.w1), P(k.b1)));
    f = tape.Dropout(f, p, dropout_rng, train);
    f = tape.Linear(f, P(k.w2), P(k.b2));
    m = tape.Add(m, tape.Dropout(f, p, dropout_rng, train));
  }
  Tape::Id g = tape.Relu(tape.Linear(tape.Input(batch.global), P(g_w1_), P(g_b1_)));
  g = tape.Relu(tape.Linear(g, P(g_w2_), P(g_b2_)));
  const Tape::Id joined = tape.ConcatCols(m, tape.GatherRows(g, batch.row_sample));
  return tape.Linear(joined, P(w_d_), P(b_d_));
}

double GaussianLogDensity(double x, double mean, double std) {
  const double z = (x - mean) / std;
  return -0.5 * z * z - std::log(std) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double LogProb(const ActionDistribution& dist, std::span<const double> action) {
  if (action.size() != dist.mean.size()) {
    throw PolicyError("action length " + std::to_string(action.size()) + " != live joints " +
                      std::to_string(dist.mean.size()));
  }
  double lp = 0.0;
  for (std::size_t i = 0; i < action.size(); ++i) {
    lp += GaussianLogDensity(action[i], dist.mean[i], dist.std);
  }
  return lp;
}

std::vector<double> SampleAction(const ActionDistribution& dist, Rng& rng) {
  std::vector<double> a(dist.mean.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = dist.mean[i] + dist.std * rng.Normal();
  return a;
}

double Entropy(const ActionDistribution& dist) {
  const double per = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e) + std::log(dist.std);
  return per * static_cast<double>(dist.mean.size());
}

std::vector<double> LiveMeans(const Matrix& per_token, const TokenBatch& batch, int sample) {
  std::vector<double> out;
  const Segment seg = batch.segments[sample];
  for (int r = seg.begin; r < seg.begin + seg.length; ++r) {
    if (!batch.key_mask[r]) continue;
    for (int s = 0; s < kJointSlots; ++s) {
      if (batch.joint_mask[r][s]) out.push_back(per_token(r, s));
    }
  }
  return out;
}

Vector SegmentMeanOverReal(const Matrix& per_token, const TokenBatch& batch) {
  Vector out(batch.num_samples());
  for (int s = 0; s < batch.num_samples(); ++s) {
    const Segment seg = batch.segments[s];
    double sum = 0.0;
    int n = 0;
    for (int r = seg.begin; r < seg.begin + seg.length; ++r) {
      if (!batch.key_mask[r]) continue;
      sum += per_token(r, 0);
      ++n;
    }
    out(s) = sum / n;
  }
  return out;
}

ActorCritic::ActorCritic(const PolicyConfig& config, std::uint64_t init_seed) : config_(config) {
  actor_ = TransformerNet(params_, config, "policy", kJointSlots);
  critic_ = TransformerNet(params_, config, "critic", 1);
  Rng rng(init_seed);
  actor_.Initialize(params_, rng);
  critic_.Initialize(params_, rng);
}

Tape::Id ActorCritic::ActorMeans(Tape& tape, const TokenBatch& batch, bool train, Rng* rng,
                                 TransformerNet::Trace* trace) const {
  return actor_.Forward(tape, params_, batch, train, rng, trace);
}

Tape::Id ActorCritic::CriticValue(Tape& tape, const TokenBatch& batch, bool train,
                                  Rng* rng) const {
  const Tape::Id per_token = critic_.Forward(tape, params_, batch, train, rng);
  Matrix value = SegmentMeanOverReal(tape.value(per_token), batch);
  std::vector<Segment> segments = batch.segments;
  std::vector<bool> mask = batch.key_mask;
  return tape.Custom(
      {per_token}, std::move(value),
      [segments = std::move(segments), mask = std::move(mask)](const Matrix& g,
                                                               std::vector<Matrix*>& grads) {
        Matrix& gt = *grads[0];
        for (std::size_t s = 0; s < segments.size(); ++s) {
          const Segment seg = segments[s];
          int n = 0;
          for (int r = seg.begin; r < seg.begin + seg.length; ++r) n += mask[r];
          for (int r = seg.begin; r < seg.begin + seg.length; ++r) {
            if (mask[r]) gt(r, 0) += g(static_cast<Eigen::Index>(s), 0) / n;
          }
        }
      });
}

ActorCritic::Output ActorCritic::Evaluate(const TokenBatch& batch) const {
  Tape tape(false);
  const Tape::Id means = ActorMeans(tape, batch, false, nullptr);
  const Tape::Id value = CriticValue(tape, batch, false, nullptr);
  Output out;
  out.dists.resize(batch.num_samples());
  for (int s = 0; s < batch.num_samples(); ++s) {
    out.dists[s].mean = LiveMeans(tape.value(means), batch, s);
    out.dists[s].std = config_.action_std;
  }
  out.values = tape.value(value).col(0);
  return out;
}

}  // namespace morphctl
