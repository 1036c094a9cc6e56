// SPDX-License-Identifier: Apache-2.0
//
// A small reverse-mode autodiff tape over dense row-major matrices. Only the
// ops needed by the transformer policy are provided. Rows are tokens; a
// "segment" is a contiguous run of rows belonging to one robot/sample, and
// attention never crosses segment boundaries.

#ifndef MORPHCTL_TENSOR_H_
#define MORPHCTL_TENSOR_H_

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "morphctl/matrix.h"
#include "morphctl/rng.h"

namespace morphctl {

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Parameter {
  std::string name;
  Matrix value;
  mutable Matrix grad;  // accumulated by Tape::Backward
};

// Named parameters with stable addresses and insertion order. Copying a set
// copies values and gradients.
class ParameterSet {
 public:
  // Returns the index of the new parameter. Names must be unique.
  int Add(const std::string& name, int rows, int cols);
  Parameter& operator[](int i) { return params_[i]; }
  const Parameter& operator[](int i) const { return params_[i]; }
  int size() const { return static_cast<int>(params_.size()); }
  int Find(const std::string& name) const;  // -1 if absent
  void ZeroGrad();
  long NumScalars() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, int> index_;
};

struct Segment {
  int begin = 0;
  int length = 0;
};

class Tape {
 public:
  using Id = int;

  // With record=false no backward closures are kept (inference only).
  explicit Tape(bool record = true) : record_(record) {}

  Id Param(const Parameter& p);
  Id Input(Matrix value);

  // x [R, in] * W [in, out] + b [1, out]
  Id Linear(Id x, Id w, Id b);
  Id Add(Id a, Id b);
  // Over the last dimension, eps 1e-5. gain and bias are [1, D].
  Id LayerNorm(Id x, Id gain, Id bias);
  Id Relu(Id x);
  // Inverted dropout: kept entries scale by 1/(1-p) in training.
  Id Dropout(Id x, double p, Rng* rng, bool train);
  // Scaled dot-product attention within each segment. key_mask (one flag
  // per row, true = real token) may be empty. Keys that are masked get zero
  // weight. Probabilities are kept when keep_probs is set.
  Id Attention(Id q, Id k, Id v, const std::vector<Segment>& segments,
               const std::vector<bool>& key_mask, int heads, bool keep_probs = false);
  // [a | b] column concatenation; row counts must match.
  Id ConcatCols(Id a, Id b);
  // out.row(r) = x.row(index[r])
  Id GatherRows(Id x, std::vector<int> index);

  // Op with a caller-supplied value and adjoint. `backward` receives the
  // output gradient and must add into the (pre-sized, zeroed) input grads.
  using CustomBackward =
      std::function<void(const Matrix& grad_out, std::vector<Matrix*>& grad_in)>;
  Id Custom(std::vector<Id> inputs, Matrix value, CustomBackward backward);

  const Matrix& value(Id id) const;
  const Matrix& grad(Id id) const { return nodes_[id].grad; }
  bool requires_grad(Id id) const { return nodes_[id].requires_grad; }

  // Probabilities of an Attention node: [segment][head], each len x len.
  const std::vector<std::vector<Matrix>>& attention_probs(Id id) const;

  // Seeds d(loss)/d(loss) = 1 and accumulates into Parameter::grad.
  void Backward(Id loss);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;  // parameters are not copied
    const Parameter* param = nullptr;
    Matrix grad;
    bool requires_grad = false;
    std::vector<Id> inputs;
    std::function<void(Tape&, Node&)> backward;
    std::vector<std::vector<Matrix>> probs;
  };

  Id Push(Node node);
  Matrix& GradOf(Id id);  // allocates zeros on first use
  void Check(bool cond, const std::string& what) const;

  std::vector<Node> nodes_;
  bool record_ = true;
  bool backward_done_ = false;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.5;  // <= 0 disables clipping
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

// Clips the global gradient norm of `params`, then applies one bias-corrected
// Adam update. Returns the global norm before clipping. Throws on non-finite
// gradients (parameters untouched).
double AdamStep(ParameterSet& params, AdamState& state, double lr,
                const AdamConfig& config = AdamConfig{});

double GlobalGradNorm(const ParameterSet& params);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  long checked = 0;
};

// Compares the gradients currently stored in `params` with central
// differences of `loss`. Relative error is |a - n| / max(|a|, |n|, floor).
// With max_per_param > 0 only that many randomly chosen entries of each
// parameter are probed.
GradCheckResult FiniteDifferenceCheck(const std::function<double()>& loss, ParameterSet& params,
                                      double h = 1e-5, int max_per_param = -1,
                                      std::uint64_t seed = 0, double floor = 1e-6);

}  // namespace morphctl

#endif  // MORPHCTL_TENSOR_H_
