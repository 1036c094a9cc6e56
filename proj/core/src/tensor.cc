// SPDX-License-Identifier: Apache-2.0

#include "morphctl/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace morphctl {

int ParameterSet::Add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw TensorError("duplicate parameter '" + name + "'");
  Parameter p;
  p.name = name;
  p.value = Matrix::Zero(rows, cols);
  p.grad = Matrix::Zero(rows, cols);
  params_.push_back(std::move(p));
  const int i = static_cast<int>(params_.size()) - 1;
  index_[name] = i;
  return i;
}

int ParameterSet::Find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

void ParameterSet::ZeroGrad() {
  for (Parameter& p : params_) p.grad.setZero();
}

long ParameterSet::NumScalars() const {
  long n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

void Tape::Check(bool cond, const std::string& what) const {
  if (!cond) throw TensorError(what);
}

Tape::Id Tape::Push(Node node) {
  if (!record_) node.backward = nullptr;
  nodes_.push_back(std::move(node));
  return static_cast<Id>(nodes_.size()) - 1;
}

const Matrix& Tape::value(Id id) const {
  const Node& n = nodes_.at(id);
  return n.ref ? *n.ref : n.value;
}

Matrix& Tape::GradOf(Id id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

const std::vector<std::vector<Matrix>>& Tape::attention_probs(Id id) const {
  return nodes_.at(id).probs;
}

Tape::Id Tape::Param(const Parameter& p) {
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.requires_grad = true;
  return Push(std::move(n));
}

Tape::Id Tape::Input(Matrix value) {
  Node n;
  n.value = std::move(value);
  return Push(std::move(n));
}

Tape::Id Tape::Linear(Id x, Id w, Id b) {
  const Matrix& X = value(x);
  const Matrix& W = value(w);
  const Matrix& B = value(b);
  Check(X.cols() == W.rows(), "linear: input width " + std::to_string(X.cols()) +
                                  " != weight rows " + std::to_string(W.rows()));
  Check(B.rows() == 1 && B.cols() == W.cols(), "linear: bias shape mismatch");
  Node n;
  n.value.noalias() = X * W;
  n.value.rowwise() += B.row(0);
  n.inputs = {x, w, b};
  n.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad || nodes_[b].requires_grad;
  n.backward = [x, w, b](Tape& t, Node& self) {
    const Matrix& g = self.grad;
    if (t.nodes_[x].requires_grad) t.GradOf(x).noalias() += g * t.value(w).transpose();
    if (t.nodes_[w].requires_grad) t.GradOf(w).noalias() += t.value(x).transpose() * g;
    if (t.nodes_[b].requires_grad) t.GradOf(b) += g.colwise().sum();
  };
  return Push(std::move(n));
}

Tape::Id Tape::Add(Id a, Id b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  Check(A.rows() == B.rows() && A.cols() == B.cols(), "add: shape mismatch");
  Node n;
  n.value = A + B;
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  n.backward = [a, b](Tape& t, Node& self) {
    if (t.nodes_[a].requires_grad) t.GradOf(a) += self.grad;
    if (t.nodes_[b].requires_grad) t.GradOf(b) += self.grad;
  };
  return Push(std::move(n));
}

Tape::Id Tape::LayerNorm(Id x, Id gain, Id bias) {
  constexpr double kEps = 1e-5;
  const Matrix& X = value(x);
  const Matrix& G = value(gain);
  const Matrix& B = value(bias);
  const Eigen::Index d = X.cols();
  Check(G.rows() == 1 && G.cols() == d && B.rows() == 1 && B.cols() == d,
        "layer_norm: gain/bias shape mismatch");
  Matrix xhat(X.rows(), d);
  Vector inv_std(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kEps);
    xhat.row(r) = (X.row(r).array() - mu) * inv_std(r);
  }
  Node n;
  n.value = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  n.inputs = {x, gain, bias};
  n.requires_grad =
      nodes_[x].requires_grad || nodes_[gain].requires_grad || nodes_[bias].requires_grad;
  n.backward = [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                   Tape& t, Node& self) {
    const Matrix& g = self.grad;
    if (t.nodes_[gain].requires_grad) {
      t.GradOf(gain) += g.cwiseProduct(xhat).colwise().sum();
    }
    if (t.nodes_[bias].requires_grad) t.GradOf(bias) += g.colwise().sum();
    if (t.nodes_[x].requires_grad) {
      const Matrix dxhat = g.array().rowwise() * t.value(gain).row(0).array();
      Matrix& gx = t.GradOf(x);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(g.cols());
        gx.row(r).array() +=
            inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
    }
  };
  return Push(std::move(n));
}

Tape::Id Tape::Relu(Id x) {
  Node n;
  n.value = value(x).cwiseMax(0.0);
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  n.backward = [x](Tape& t, Node& self) {
    if (!t.nodes_[x].requires_grad) return;
    t.GradOf(x).array() += (self.value.array() > 0.0).select(self.grad.array(), 0.0);
  };
  return Push(std::move(n));
}

Tape::Id Tape::Dropout(Id x, double p, Rng* rng, bool train) {
  Check(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (!train || p == 0.0) return x;
  Check(rng != nullptr, "dropout: training mode needs an rng");
  const Matrix& X = value(x);
  Matrix keep(X.rows(), X.cols());
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < keep.size(); ++i) {
    keep.data()[i] = rng->Uniform() < p ? 0.0 : scale;
  }
  Node n;
  n.value = X.cwiseProduct(keep);
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  n.backward = [x, keep = std::move(keep)](Tape& t, Node& self) {
    if (t.nodes_[x].requires_grad) t.GradOf(x) += self.grad.cwiseProduct(keep);
  };
  return Push(std::move(n));
}

Tape::Id Tape::Attention(Id q, Id k, Id v, const std::vector<Segment>& segments,
                         const std::vector<bool>& key_mask, int heads, bool keep_probs) {
  const Matrix& Q = value(q);
  const Matrix& K = value(k);
  const Matrix& V = value(v);
  const Eigen::Index rows = Q.rows();
  const Eigen::Index d = Q.cols();
  Check(K.rows() == rows && V.rows() == rows && K.cols() == d && V.cols() == d,
        "attention: q/k/v shape mismatch");
  Check(heads > 0 && d % heads == 0, "attention: width not divisible by head count");
  Check(key_mask.empty() || static_cast<Eigen::Index>(key_mask.size()) == rows,
        "attention: key mask length mismatch");
  const int dh = static_cast<int>(d / heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool store = record_ || keep_probs;

  Node n;
  n.value = Matrix::Zero(rows, d);
  if (store) n.probs.resize(segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment seg = segments[s];
    Check(seg.begin >= 0 && seg.length > 0 && seg.begin + seg.length <= rows,
          "attention: segment out of range");
    std::vector<char> live(seg.length, 1);
    bool any = false;
    for (int j = 0; j < seg.length; ++j) {
      if (!key_mask.empty()) live[j] = key_mask[seg.begin + j];
      any = any || live[j];
    }
    Check(any, "attention: all keys masked in segment " + std::to_string(s));
    if (store) n.probs[s].resize(heads);
    for (int h = 0; h < heads; ++h) {
      const auto Qs = Q.block(seg.begin, h * dh, seg.length, dh);
      const auto Ks = K.block(seg.begin, h * dh, seg.length, dh);
      const auto Vs = V.block(seg.begin, h * dh, seg.length, dh);
      Matrix P = (Qs * Ks.transpose()) * scale;
      for (int i = 0; i < seg.length; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < seg.length; ++j) {
          if (live[j]) mx = std::max(mx, P(i, j));
        }
        double z = 0.0;
        for (int j = 0; j < seg.length; ++j) {
          P(i, j) = live[j] ? std::exp(P(i, j) - mx) : 0.0;
          z += P(i, j);
        }
        P.row(i) /= z;
      }
      n.value.block(seg.begin, h * dh, seg.length, dh).noalias() = P * Vs;
      if (store) n.probs[s][h] = std::move(P);
    }
  }
  n.inputs = {q, k, v};
  n.requires_grad = nodes_[q].requires_grad || nodes_[k].requires_grad || nodes_[v].requires_grad;
  n.backward = [q, k, v, segments, heads, dh, scale](Tape& t, Node& self) {
    const Matrix& Q = t.value(q);
    const Matrix& K = t.value(k);
    const Matrix& V = t.value(v);
    const bool gq = t.nodes_[q].requires_grad;
    const bool gk = t.nodes_[k].requires_grad;
    const bool gv = t.nodes_[v].requires_grad;
    Matrix* dq = gq ? &t.GradOf(q) : nullptr;
    Matrix* dk = gk ? &t.GradOf(k) : nullptr;
    Matrix* dv = gv ? &t.GradOf(v) : nullptr;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const Segment seg = segments[s];
      for (int h = 0; h < heads; ++h) {
        const Matrix& P = self.probs[s][h];
        const auto dO = self.grad.block(seg.begin, h * dh, seg.length, dh);
        const auto Qs = Q.block(seg.begin, h * dh, seg.length, dh);
        const auto Ks = K.block(seg.begin, h * dh, seg.length, dh);
        const auto Vs = V.block(seg.begin, h * dh, seg.length, dh);
        if (gv) dv->block(seg.begin, h * dh, seg.length, dh).noalias() += P.transpose() * dO;
        if (!gq && !gk) continue;
        const Matrix dP = dO * Vs.transpose();
        Matrix dS = dP;
        for (int i = 0; i < seg.length; ++i) {
          const double dot = P.row(i).dot(dP.row(i));
          dS.row(i) = P.row(i).array() * (dP.row(i).array() - dot);
        }
        dS *= scale;
        if (gq) dq->block(seg.begin, h * dh, seg.length, dh).noalias() += dS * Ks;
        if (gk) dk->block(seg.begin, h * dh, seg.length, dh).noalias() += dS.transpose() * Qs;
      }
    }
  };
  return Push(std::move(n));
}

Tape::Id Tape::ConcatCols(Id a, Id b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  Check(A.rows() == B.rows(), "concat: row count mismatch");
  Node n;
  n.value.resize(A.rows(), A.cols() + B.cols());
  n.value << A, B;
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  const Eigen::Index ca = A.cols();
  const Eigen::Index cb = B.cols();
  n.backward = [a, b, ca, cb](Tape& t, Node& self) {
    if (t.nodes_[a].requires_grad) t.GradOf(a) += self.grad.leftCols(ca);
    if (t.nodes_[b].requires_grad) t.GradOf(b) += self.grad.rightCols(cb);
  };
  return Push(std::move(n));
}

Tape::Id Tape::GatherRows(Id x, std::vector<int> index) {
  const Matrix& X = value(x);
  Node n;
  n.value.resize(static_cast<Eigen::Index>(index.size()), X.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    Check(index[r] >= 0 && index[r] < X.rows(), "gather: index out of range");
    n.value.row(static_cast<Eigen::Index>(r)) = X.row(index[r]);
  }
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  n.backward = [x, index = std::move(index)](Tape& t, Node& self) {
    if (!t.nodes_[x].requires_grad) return;
    Matrix& g = t.GradOf(x);
    for (std::size_t r = 0; r < index.size(); ++r) {
      g.row(index[r]) += self.grad.row(static_cast<Eigen::Index>(r));
    }
  };
  return Push(std::move(n));
}

Tape::Id Tape::Custom(std::vector<Id> inputs, Matrix value, CustomBackward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = false;
  for (Id i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
  n.inputs = inputs;
  n.backward = [inputs, backward = std::move(backward)](Tape& t, Node& self) {
    std::vector<Matrix*> grads;
    grads.reserve(inputs.size());
    std::vector<Matrix> scratch(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (t.nodes_[inputs[i]].requires_grad) {
        grads.push_back(&t.GradOf(inputs[i]));
      } else {
        const Matrix& v = t.value(inputs[i]);
        scratch[i] = Matrix::Zero(v.rows(), v.cols());
        grads.push_back(&scratch[i]);
      }
    }
    backward(self.grad, grads);
  };
  return Push(std::move(n));
}

void Tape::Backward(Id loss) {
  Check(record_, "backward: tape was created without recording");
  Check(!backward_done_, "backward: already called on this tape; run the forward pass again");
  Check(loss >= 0 && loss < size(), "backward: unknown node");
  const Matrix& L = value(loss);
  Check(L.rows() == 1 && L.cols() == 1, "backward: loss must be a scalar");
  Check(nodes_[loss].requires_grad, "backward: loss does not depend on any parameter");
  backward_done_ = true;
  GradOf(loss)(0, 0) = 1.0;
  for (Id i = loss; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, n);
    }
  }
}

double GlobalGradNorm(const ParameterSet& params) {
  double sq = 0.0;
  for (const Parameter& p : params) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

double AdamStep(ParameterSet& params, AdamState& state, double lr, const AdamConfig& config) {
  const double norm = GlobalGradNorm(params);
  if (!std::isfinite(norm)) throw TensorError("adam: non-finite gradient");
  if (state.m.size() != static_cast<std::size_t>(params.size())) {
    state.m.clear();
    state.v.clear();
    for (const Parameter& p : params) {
      state.m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      state.v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  const double clip =
      config.max_grad_norm > 0.0 && norm > config.max_grad_norm ? config.max_grad_norm / norm : 1.0;
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (int i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw TensorError("adam: moment shape mismatch for '" + p.name + "'");
    }
    const Matrix g = p.grad * clip;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseAbs2();
    p.value.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.eps);
  }
  return norm;
}

GradCheckResult FiniteDifferenceCheck(const std::function<double()>& loss, ParameterSet& params,
                                      double h, int max_per_param, std::uint64_t seed,
                                      double floor) {
  GradCheckResult result;
  Rng rng(seed);
  for (Parameter& p : params) {
    const Eigen::Index n = p.value.size();
    std::vector<Eigen::Index> entries;
    if (max_per_param > 0 && n > max_per_param) {
      for (int i = 0; i < max_per_param; ++i) {
        entries.push_back(static_cast<Eigen::Index>(rng.UniformIndex(static_cast<std::size_t>(n))));
      }
    } else {
      for (Eigen::Index i = 0; i < n; ++i) entries.push_back(i);
    }
    for (Eigen::Index i : entries) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (err > result.max_rel_error || result.worst_index < 0) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_param = p.name;
          result.worst_index = static_cast<int>(i);
          result.analytic = analytic;
          result.numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace morphctl
