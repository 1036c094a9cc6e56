// SPDX-License-Identifier: Apache-2.0

#include "morphctl/ppo.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

namespace morphctl {

ObsNormalizers::ObsNormalizers(int local_width, int global_width, double clip, bool enabled)
    : local(local_width, clip), global(global_width, clip), enabled(enabled) {}

ObservationBundle ObsNormalizers::Apply(const ObservationBundle& raw) const {
  if (!enabled) return raw;
  return NormalizeBundle(raw, local, global);
}

void ObsNormalizers::Update(std::span<const ObservationBundle> raw) {
  if (!enabled || raw.empty()) return;
  int rows = 0;
  for (const ObservationBundle& b : raw) rows += b.num_tokens();
  Matrix l(rows, local.dim());
  Matrix g(static_cast<Eigen::Index>(raw.size()), global.dim());
  int r = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const ObservationBundle& b = raw[i];
    for (Eigen::Index t = 0; t < b.local.rows(); ++t) {
      if (b.mask[t]) l.row(r++) = b.local.row(t);
    }
    g.row(static_cast<Eigen::Index>(i)) = b.global.transpose();
  }
  local.Update(l);
  global.Update(g);
}

void RolloutBuffer::Append(RolloutBuffer&& o) {
  auto move_into = [](auto& dst, auto& src) {
    dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
  };
  move_into(obs, o.obs);
  move_into(actions, o.actions);
  move_into(log_probs, o.log_probs);
  move_into(values, o.values);
  move_into(rewards, o.rewards);
  move_into(dones, o.dones);
  move_into(truncated, o.truncated);
  move_into(bootstrap, o.bootstrap);
  move_into(robot, o.robot);
  move_into(slot, o.slot);
  move_into(episodes, o.episodes);
}

namespace {

struct Slot {
  int index = 0;
  Rng rng;
  int steps = 0;
  std::unique_ptr<Environment> env;
  std::unique_ptr<ObservationBuilder> builder;
  int robot = -1;
  std::uint64_t terrain_seed = 0;
  EpisodeRecord episode;
  ObservationBundle raw;   // current observation
  ObservationBundle normed;
  RolloutBuffer out;
};

void StartEpisode(Slot& s, const std::vector<Robot>& robots, const TaskConfig& task,
                  const std::vector<double>& probs, const PolicyConfig& pc) {
  s.robot = PerformanceTracker::SampleFrom(probs, s.rng);
  s.terrain_seed = s.rng.NextU64();
  s.env = std::make_unique<Environment>(robots[s.robot].graph, task, s.terrain_seed);
  s.builder = std::make_unique<ObservationBuilder>(s.env->model(), DfsTokenOrder(s.env->model().graph()),
                                                   pc.max_tokens);
  s.episode = EpisodeRecord{};
  s.episode.robot = s.robot;
  s.episode.slot = s.index;
  s.episode.terrain_seed = s.terrain_seed;
}

std::string Describe(const Slot& s, const std::vector<Robot>& robots) {
  std::ostringstream os;
  os << "robot '" << (s.robot >= 0 ? robots[s.robot].id : std::string("?")) << "' terrain seed "
     << s.terrain_seed << " (slot " << s.index << ")";
  return os.str();
}

void RunWorker(std::vector<Slot*> slots, const ActorCritic& policy, const ObsNormalizers& norm,
               const std::vector<Robot>& robots, const TaskConfig& task,
               const std::vector<double>& probs, const CollectSpec& spec) {
  const PolicyConfig& pc = policy.config();
  for (Slot* s : slots) {
    StartEpisode(*s, robots, task, probs, pc);
    s->raw = s->builder->Build(s->env->state(), s->env->terrain());
    s->normed = norm.Apply(s->raw);
  }
  std::vector<Slot*> active = slots;
  std::vector<Slot*> cut;  // slots whose episode needs a bootstrap value
  while (!active.empty()) {
    std::vector<const ObservationBundle*> batch_obs;
    for (Slot* s : active) batch_obs.push_back(&s->normed);
    const TokenBatch batch = TokenBatch::Build(batch_obs, true);
    const ActorCritic::Output out = policy.Evaluate(batch);

    cut.clear();
    std::vector<Slot*> next;
    for (std::size_t i = 0; i < active.size(); ++i) {
      Slot& s = *active[i];
      const ActionDistribution& dist = out.dists[i];
      std::vector<double> a = spec.deterministic ? dist.mean : SampleAction(dist, s.rng);
      const double lp = LogProb(dist, a);
      std::vector<double> env_action(s.env->num_joints(), 0.0);
      const auto& live = s.builder->live_joints();
      for (std::size_t k = 0; k < live.size(); ++k) env_action[live[k]] = a[k];
      StepResult r;
      try {
        r = s.env->Step(env_action);
      } catch (const std::exception& e) {
        throw PpoError(std::string("environment failure on ") + Describe(s, robots) + ": " +
                       e.what());
      }
      RolloutBuffer& b = s.out;
      b.obs.push_back(std::move(s.raw));
      b.actions.push_back(std::move(a));
      b.log_probs.push_back(lp);
      b.values.push_back(out.values(static_cast<Eigen::Index>(i)));
      b.rewards.push_back(r.reward);
      b.dones.push_back(r.done && r.reason == "fall");
      b.truncated.push_back(0);
      b.bootstrap.push_back(0.0);
      b.robot.push_back(s.robot);
      b.slot.push_back(s.index);
      ++s.steps;
      s.episode.length += 1;
      s.episode.reward += r.reward;

      const bool budget = s.steps >= spec.steps_per_env;
      s.raw = s.builder->Build(s.env->state(), s.env->terrain());
      if (r.done || budget) {
        s.episode.complete = r.done;
        s.episode.reason = r.done ? r.reason : "budget";
        b.episodes.push_back(s.episode);
        if (!b.dones.back()) {
          b.truncated.back() = 1;
          s.normed = norm.Apply(s.raw);
          cut.push_back(&s);
        }
        if (!budget) {
          StartEpisode(s, robots, task, probs, pc);
          s.raw = s.builder->Build(s.env->state(), s.env->terrain());
        }
      }
      if (!budget) next.push_back(&s);
    }
    if (!cut.empty()) {
      std::vector<const ObservationBundle*> cut_obs;
      for (Slot* s : cut) cut_obs.push_back(&s->normed);
      const ActorCritic::Output v = policy.Evaluate(TokenBatch::Build(cut_obs, true));
      for (std::size_t i = 0; i < cut.size(); ++i) {
        cut[i]->out.bootstrap.back() = v.values(static_cast<Eigen::Index>(i));
      }
    }
    for (Slot* s : next) s->normed = norm.Apply(s->raw);
    active = std::move(next);
  }
}

}  // namespace

RolloutBuffer CollectRollouts(const ActorCritic& policy, const ObsNormalizers& norm,
                              const std::vector<Robot>& robots, const TaskConfig& task,
                              const std::vector<double>& probs, const CollectSpec& spec) {
  if (robots.empty()) throw PpoError("robot pool is empty");
  if (probs.size() != robots.size()) throw PpoError("sampling probabilities do not match robot pool");
  if (spec.num_envs < 1 || spec.steps_per_env < 1 || spec.num_workers < 1) {
    throw PpoError("collect spec needs positive env, step and worker counts");
  }
  std::vector<Slot> slots(spec.num_envs);
  for (int e = 0; e < spec.num_envs; ++e) {
    slots[e].index = e;
    slots[e].rng = Rng(DeriveSeed(spec.seed, {static_cast<std::uint64_t>(spec.iteration),
                                              static_cast<std::uint64_t>(e), 0x524fULL}));
  }
  const int workers = std::min(spec.num_workers, spec.num_envs);
  std::vector<std::vector<Slot*>> assignment(workers);
  for (int e = 0; e < spec.num_envs; ++e) assignment[e % workers].push_back(&slots[e]);

  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](int w) {
    try {
      RunWorker(assignment[w], policy, norm, robots, task, probs, spec);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (std::thread& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  RolloutBuffer merged;
  for (Slot& s : slots) merged.Append(std::move(s.out));
  return merged;
}

GaeResult ComputeGae(std::span<const double> rewards, std::span<const double> values,
                     std::span<const char> dones, std::span<const char> truncated,
                     std::span<const double> bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n || truncated.size() != n || bootstrap.size() != n) {
    throw PpoError("gae: input lengths differ");
  }
  GaeResult r;
  r.advantages.assign(n, 0.0);
  r.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    double next_value;
    if (dones[i]) {
      next_value = 0.0;
      next_adv = 0.0;
    } else if (truncated[i] || i + 1 == n) {
      next_value = bootstrap[i];
      next_adv = 0.0;
    } else {
      next_value = values[i + 1];
    }
    const double delta = rewards[i] + gamma * next_value - values[i];
    next_adv = delta + gamma * lambda * next_adv;
    r.advantages[i] = next_adv;
    r.returns[i] = next_adv + values[i];
  }
  return r;
}

std::vector<double> NormalizeRewards(const RolloutBuffer& buf, RunningNormalizer& ret_norm,
                                     double gamma, double clip) {
  const std::size_t n = buf.size();
  Matrix returns(static_cast<Eigen::Index>(n), 1);
  double ret = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ret = ret * gamma + buf.rewards[i];
    returns(static_cast<Eigen::Index>(i), 0) = ret;
    if (buf.dones[i] || buf.truncated[i]) ret = 0.0;
  }
  if (n > 0) ret_norm.Update(returns);
  const double scale = 1.0 / std::sqrt(ret_norm.var()(0) + 1e-8);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::clamp(buf.rewards[i] * scale, -clip, clip);
  return out;
}

Tape::Id PpoLoss(Tape& tape, const ActorCritic& net, const Minibatch& mb, const TrainConfig& c,
                 Rng* dropout_rng, LossStats* stats) {
  const int B = static_cast<int>(mb.obs.size());
  if (B == 0) throw PpoError("empty minibatch");
  if (mb.actions.size() != mb.obs.size() || mb.old_log_probs.size() != mb.obs.size() ||
      mb.old_values.size() != mb.obs.size() || mb.advantages.size() != mb.obs.size() ||
      mb.returns.size() != mb.obs.size()) {
    throw PpoError("minibatch fields differ in length");
  }
  const TokenBatch batch = TokenBatch::Build(mb.obs, true);
  const bool train = c.dropout > 0.0;
  const Tape::Id means = net.ActorMeans(tape, batch, train, dropout_rng);
  const Tape::Id value = net.CriticValue(tape, batch, train, dropout_rng);

  std::vector<double> adv = mb.advantages;
  if (c.normalize_advantages) {
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= B;
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double std = std::sqrt(var / B);
    for (double& a : adv) a = (a - mean) / (std + 1e-8);
  }

  const double sigma = net.config().action_std;
  const double eps = c.clip_epsilon;
  const Matrix& mu = tape.value(means);
  const Vector v = tape.value(value).col(0);

  // Per-sample coefficient of d(surrogate)/d(log pi) and of d(value loss)/dV.
  std::vector<double> pg_coef(B, 0.0);
  Vector v_coef = Vector::Zero(B);
  double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0, kl = 0.0, clipped = 0.0;
  for (int s = 0; s < B; ++s) {
    ActionDistribution dist{LiveMeans(mu, batch, s), sigma};
    const std::vector<double>& a = *mb.actions[s];
    const double logp = LogProb(dist, a);
    const double ratio = std::exp(logp - mb.old_log_probs[s]);
    const double rc = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    const double A = adv[s];
    const double unclipped_obj = ratio * A;
    const double clipped_obj = rc * A;
    policy_loss -= std::min(unclipped_obj, clipped_obj) / B;
    // Gradient flows when the unclipped branch is selected or the clip is inactive.
    if (unclipped_obj <= clipped_obj || rc == ratio) pg_coef[s] = -ratio * A / B;
    if (rc != ratio) clipped += 1.0;
    kl += (mb.old_log_probs[s] - logp) / B;
    entropy += Entropy(dist) / B;

    const double R = mb.returns[s];
    const double u = (v(s) - R) * (v(s) - R);
    if (c.clip_value) {
      const double dv = std::clamp(v(s) - mb.old_values[s], -eps, eps);
      const double vc = mb.old_values[s] + dv;
      const double cl = (vc - R) * (vc - R);
      value_loss += 0.5 * std::max(u, cl) / B;
      if (u >= cl) {
        v_coef(s) = (v(s) - R) / B;
      } else if (dv == v(s) - mb.old_values[s]) {
        v_coef(s) = (vc - R) / B;
      }
    } else {
      value_loss += 0.5 * u / B;
      v_coef(s) = (v(s) - R) / B;
    }
  }
  const double loss = policy_loss + c.value_coef * value_loss - c.entropy_coef * entropy;
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite PPO loss (policy " << policy_loss << ", value " << value_loss
       << ", entropy " << entropy << ") on a minibatch of " << B << " samples; first sample has "
       << mb.obs[0]->num_tokens() << " modules, advantage " << mb.advantages[0] << ", return "
       << mb.returns[0];
    throw PpoError(os.str());
  }
  if (stats) {
    stats->loss = loss;
    stats->policy_loss = policy_loss;
    stats->value_loss = value_loss;
    stats->entropy = entropy;
    stats->approx_kl = kl;
    stats->clip_fraction = clipped / B;
  }

  // d(loss)/d(mu) for live slots: pg_coef * d(log pi)/d(mu) = pg_coef * (a - mu) / sigma^2.
  Matrix g_mu = Matrix::Zero(mu.rows(), mu.cols());
  for (int s = 0; s < B; ++s) {
    if (pg_coef[s] == 0.0) continue;
    const std::vector<double>& a = *mb.actions[s];
    const Segment seg = batch.segments[s];
    std::size_t k = 0;
    for (int r = seg.begin; r < seg.begin + seg.length; ++r) {
      for (int j = 0; j < kJointSlots; ++j) {
        if (!batch.joint_mask[r][j]) continue;
        g_mu(r, j) = pg_coef[s] * (a[k] - mu(r, j)) / (sigma * sigma);
        ++k;
      }
    }
  }
  const double vcoef = c.value_coef;
  Matrix out(1, 1);
  out(0, 0) = loss;
  return tape.Custom({means, value}, std::move(out),
                     [g_mu = std::move(g_mu), v_coef = std::move(v_coef), vcoef](
                         const Matrix& g, std::vector<Matrix*>& grads) {
                       const double s = g(0, 0);
                       *grads[0] += s * g_mu;
                       grads[1]->col(0) += s * vcoef * v_coef;
                     });
}

}  // namespace morphctl
