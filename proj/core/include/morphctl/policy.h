// SPDX-License-Identifier: Apache-2.0
//
// Transformer actor and critic over module tokens. Each network embeds every
// token with a shared affine map plus a learned position embedding, runs a
// stack of pre-norm attention blocks, and decodes every token from
// [token state | encoded terrain]. The actor emits two action means per token
// (one per joint slot); the critic emits one value per token and averages
// over real tokens.

#ifndef MORPHCTL_POLICY_H_
#define MORPHCTL_POLICY_H_

#include <array>
#include <span>
#include <string>
#include <vector>

#include "morphctl/matrix.h"
#include "morphctl/observation.h"
#include "morphctl/rng.h"
#include "morphctl/tensor.h"

namespace morphctl {

struct PolicyConfig {
  int max_tokens = 12;
  int local_width = kLocalWidth;
  int global_width = 23;
  int d_model = 128;
  int layers = 5;
  int heads = 1;
  int feedforward = 1024;
  int global_hidden = 64;  // two hidden layers of this width
  double dropout = 0.1;
  double action_std = 0.9;
};

class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A batch of samples flattened to token rows. In packed form only real
// tokens are present; in padded form every sample contributes max_tokens rows
// and padding rows are masked as keys.
struct TokenBatch {
  Matrix local;                 // rows x local_width
  Matrix global;                // samples x global_width
  std::vector<Segment> segments;
  std::vector<bool> key_mask;   // per row
  std::vector<int> position;    // per row, index into W_pos
  std::vector<int> row_sample;  // per row
  std::vector<std::array<bool, kJointSlots>> joint_mask;  // per row

  int num_samples() const { return static_cast<int>(segments.size()); }
  int num_rows() const { return static_cast<int>(local.rows()); }
  int num_live_joints(int sample) const;

  static TokenBatch Build(std::span<const ObservationBundle* const> bundles, bool packed);
};

// Parameter layout of one transformer network inside a shared ParameterSet.
class TransformerNet {
 public:
  TransformerNet() = default;
  TransformerNet(ParameterSet& params, const PolicyConfig& config, const std::string& prefix,
                 int outputs_per_token);

  void Initialize(ParameterSet& params, Rng& rng) const;

  struct Trace {
    std::vector<Tape::Id> attention;  // one Attention node per layer
  };
  // Returns a [rows, outputs_per_token] node.
  Tape::Id Forward(Tape& tape, const ParameterSet& params, const TokenBatch& batch, bool train,
                   Rng* dropout_rng, Trace* trace = nullptr) const;

  int outputs() const { return outputs_; }
  const std::string& prefix() const { return prefix_; }
  int pos_embedding() const { return w_pos_; }

 private:
  struct Block {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    int ln2_g, ln2_b, w1, b1, w2, b2;
  };
  PolicyConfig config_;
  std::string prefix_;
  int outputs_ = 0;
  int w_e_ = -1, b_e_ = -1, w_pos_ = -1;
  std::vector<Block> blocks_;
  int g_w1_ = -1, g_b1_ = -1, g_w2_ = -1, g_b2_ = -1;
  int w_d_ = -1, b_d_ = -1;
};

// Diagonal Gaussian over the live joints of one sample, in token order.
struct ActionDistribution {
  std::vector<double> mean;
  double std = 0.9;
};

double LogProb(const ActionDistribution& dist, std::span<const double> action);
std::vector<double> SampleAction(const ActionDistribution& dist, Rng& rng);
double Entropy(const ActionDistribution& dist);
double GaussianLogDensity(double x, double mean, double std);

// Live action means of sample `s` read from a [rows, 2] output.
std::vector<double> LiveMeans(const Matrix& per_token, const TokenBatch& batch, int sample);
// Mean of a [rows, 1] per-token output over the real rows of each sample.
Vector SegmentMeanOverReal(const Matrix& per_token, const TokenBatch& batch);

// Policy and critic with separate trunks sharing one parameter set
// ("policy.*", "critic.*") so clipping and the optimizer see both.
class ActorCritic {
 public:
  ActorCritic() = default;
  ActorCritic(const PolicyConfig& config, std::uint64_t init_seed);

  struct Output {
    std::vector<ActionDistribution> dists;
    Vector values;
  };
  // Inference without gradient recording; dropout off.
  Output Evaluate(const TokenBatch& batch) const;

  // Appends a value node [samples, 1] that averages per-token critic outputs
  // over real tokens.
  Tape::Id CriticValue(Tape& tape, const TokenBatch& batch, bool train, Rng* rng) const;
  Tape::Id ActorMeans(Tape& tape, const TokenBatch& batch, bool train, Rng* rng,
                      TransformerNet::Trace* trace = nullptr) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const PolicyConfig& config() const { return config_; }
  const TransformerNet& actor() const { return actor_; }
  const TransformerNet& critic() const { return critic_; }

 private:
  PolicyConfig config_;
  ParameterSet params_;
  TransformerNet actor_;
  TransformerNet critic_;
};

}  // namespace morphctl

#endif  // MORPHCTL_POLICY_H_
