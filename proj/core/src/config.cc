// SPDX-License-Identifier: Apache-2.0

#include "morphctl/config.h"

#include <cmath>
#include <fstream>
#include <numbers>
#include <variant>

namespace morphctl {
namespace {

using Member = std::variant<int TrainConfig::*, double TrainConfig::*, bool TrainConfig::*,
                            std::string TrainConfig::*, std::uint64_t TrainConfig::*>;

struct Field {
  const char* key;
  Member member;
};

const std::vector<Field>& Fields() {
  static const std::vector<Field> fields = {
      {"task", &TrainConfig::task},
      {"robots", &TrainConfig::robots},
      {"output_dir", &TrainConfig::output_dir},
      {"seed", &TrainConfig::seed},
      {"checkpoint_interval", &TrainConfig::checkpoint_interval},
      {"gamma", &TrainConfig::gamma},
      {"gae_lambda", &TrainConfig::gae_lambda},
      {"clip_epsilon", &TrainConfig::clip_epsilon},
      {"epochs", &TrainConfig::epochs},
      {"minibatch_size", &TrainConfig::minibatch_size},
      {"entropy_coef", &TrainConfig::entropy_coef},
      {"value_coef", &TrainConfig::value_coef},
      {"reward_normalization", &TrainConfig::reward_normalization},
      {"reward_clip", &TrainConfig::reward_clip},
      {"observation_normalization", &TrainConfig::observation_normalization},
      {"observation_clip", &TrainConfig::observation_clip},
      {"timesteps_per_rollout", &TrainConfig::timesteps_per_rollout},
      {"num_workers", &TrainConfig::num_workers},
      {"num_envs", &TrainConfig::num_envs},
      {"total_timesteps", &TrainConfig::total_timesteps},
      {"optimizer", &TrainConfig::optimizer},
      {"learning_rate", &TrainConfig::learning_rate},
      {"lr_schedule", &TrainConfig::lr_schedule},
      {"lr_warmup_iterations", &TrainConfig::lr_warmup_iterations},
      {"max_grad_norm", &TrainConfig::max_grad_norm},
      {"clip_value", &TrainConfig::clip_value},
      {"normalize_advantages", &TrainConfig::normalize_advantages},
      {"layers", &TrainConfig::layers},
      {"heads", &TrainConfig::heads},
      {"d_model", &TrainConfig::d_model},
      {"feedforward", &TrainConfig::feedforward},
      {"activation", &TrainConfig::activation},
      {"dropout", &TrainConfig::dropout},
      {"global_hidden", &TrainConfig::global_hidden},
      {"max_tokens", &TrainConfig::max_tokens},
      {"action_std", &TrainConfig::action_std},
      {"balancer_alpha", &TrainConfig::balancer_alpha},
      {"balancer_beta", &TrainConfig::balancer_beta},
      {"balancer_warmup", &TrainConfig::balancer_warmup},
      {"episode_horizon", &TrainConfig::episode_horizon},
      {"eval_trials", &TrainConfig::eval_trials},
  };
  return fields;
}

const Field* FindField(const std::string& key) {
  for (const Field& f : Fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

void SetFromJson(TrainConfig& c, const Field& f, const nlohmann::json& v) {
  const std::string key = f.key;
  auto fail = [&](const char* want) {
    throw ConfigError("config key '" + key + "': expected " + want + ", got " + v.dump());
  };
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (!v.is_boolean()) fail("boolean");
          c.*member = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (!v.is_string()) fail("string");
          c.*member = v.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
          if (!v.is_number()) fail("number");
          c.*member = v.get<double>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0 &&
                                         !v.is_number_unsigned())) {
            fail("non-negative integer");
          }
          c.*member = v.get<std::uint64_t>();
        } else {
          if (v.is_number_float()) {
            const double d = v.get<double>();
            if (d != std::floor(d)) fail("integer");
            c.*member = static_cast<int>(d);
          } else if (v.is_number_integer()) {
            c.*member = v.get<int>();
          } else {
            fail("integer");
          }
        }
      },
      f.member);
}

}  // namespace

TrainConfig TrainConfig::Full() { return TrainConfig{}; }

TrainConfig TrainConfig::Desk() {
  TrainConfig c;
  c.output_dir = "runs/desk";
  c.d_model = 32;
  c.layers = 2;
  c.feedforward = 128;
  c.dropout = 0.0;
  c.total_timesteps = 2e5;
  c.num_workers = 4;
  c.num_envs = 8;
  c.timesteps_per_rollout = 512;
  c.minibatch_size = 1024;
  c.epochs = 4;
  c.learning_rate = 1e-3;
  c.balancer_warmup = 5;
  c.episode_horizon = 400;
  c.checkpoint_interval = 10;
  return c;
}

int TrainConfig::NumIterations() const {
  const double per_iter = static_cast<double>(timesteps_per_rollout) * num_envs;
  return static_cast<int>(std::floor(total_timesteps / per_iter));
}

PolicyConfig TrainConfig::Policy() const {
  PolicyConfig p;
  p.max_tokens = max_tokens;
  p.d_model = d_model;
  p.layers = layers;
  p.heads = heads;
  p.feedforward = feedforward;
  p.global_hidden = global_hidden;
  p.dropout = dropout;
  p.action_std = action_std;
  return p;
}

BalancerConfig TrainConfig::Balancer() const {
  BalancerConfig b;
  b.alpha = balancer_alpha;
  b.beta = balancer_beta;
  b.max_episode_len = episode_horizon;
  b.warmup_iterations = balancer_warmup;
  return b;
}

TaskConfig TrainConfig::Task() const {
  TaskConfig t = TaskConfig::ForTask(ParseTask(task));
  t.episode_horizon = episode_horizon;
  return t;
}

void TrainConfig::Validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  try {
    ParseTask(task);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must be in [0, 1]");
  require(clip_epsilon > 0.0 && clip_epsilon < 1.0, "clip_epsilon must be in (0, 1)");
  require(epochs >= 1, "epochs must be >= 1");
  require(minibatch_size >= 1, "minibatch_size must be >= 1");
  require(timesteps_per_rollout >= 1, "timesteps_per_rollout must be >= 1");
  require(num_workers >= 1, "num_workers must be >= 1");
  require(num_envs >= 1, "num_envs must be >= 1");
  require(total_timesteps >= 0.0, "total_timesteps must be >= 0");
  require(optimizer == "adam", "optimizer must be 'adam'");
  require(learning_rate >= 0.0, "learning_rate must be >= 0");
  require(lr_schedule == "warmup_cosine" || lr_schedule == "constant",
          "lr_schedule must be 'warmup_cosine' or 'constant'");
  require(lr_warmup_iterations >= 0, "lr_warmup_iterations must be >= 0");
  require(layers >= 0, "layers must be >= 0");
  require(heads >= 1 && d_model % heads == 0, "d_model must be divisible by heads");
  require(d_model >= 1 && feedforward >= 1 && global_hidden >= 1, "widths must be positive");
  require(activation == "relu", "activation must be 'relu'");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(max_tokens >= 1, "max_tokens must be >= 1");
  require(action_std > 0.0, "action_std must be positive");
  require(balancer_alpha >= 0.0 && balancer_alpha <= 1.0, "balancer_alpha must be in [0, 1]");
  require(balancer_beta >= 0.0, "balancer_beta must be >= 0");
  require(episode_horizon >= 1, "episode_horizon must be >= 1");
  require(eval_trials >= 1, "eval_trials must be >= 1");
  require(checkpoint_interval >= 1, "checkpoint_interval must be >= 1");
  require(reward_clip > 0.0 && observation_clip > 0.0, "clip ranges must be positive");
}

const std::vector<std::string>& ConfigKeys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : Fields()) k.emplace_back(f.key);
    return k;
  }();
  return keys;
}

nlohmann::ordered_json ToJson(const TrainConfig& c) {
  nlohmann::ordered_json j;
  for (const Field& f : Fields()) {
    std::visit([&](auto member) { j[f.key] = c.*member; }, f.member);
  }
  return j;
}

TrainConfig FromJson(const nlohmann::json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c = base;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const Field* f = FindField(it.key());
    if (!f) throw ConfigError("unknown config key '" + it.key() + "'");
    SetFromJson(c, *f, it.value());
  }
  c.Validate();
  return c;
}

void ApplyOverride(TrainConfig& c, const std::string& key, const std::string& value) {
  const Field* f = FindField(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  nlohmann::json v;
  const bool is_string = std::holds_alternative<std::string TrainConfig::*>(f->member);
  if (is_string) {
    v = value;
  } else {
    try {
      v = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
      throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
    }
  }
  SetFromJson(c, *f, v);
}

TrainConfig LoadConfigFile(const std::string& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  return FromJson(j, base);
}

double LrAt(int iteration, const TrainConfig& c) {
  if (iteration < 0) throw ConfigError("iteration must be >= 0");
  if (c.lr_schedule == "constant") return c.learning_rate;
  const int warm = c.lr_warmup_iterations;
  if (iteration < warm) return c.learning_rate * iteration / warm;
  const int decay = c.NumIterations() - warm;
  if (decay <= 0) return c.learning_rate;
  const double progress = std::min(1.0, static_cast<double>(iteration - warm) / decay);
  return c.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace morphctl
