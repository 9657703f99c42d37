#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qpop/bandit.hpp"
#include "qpop/critic.hpp"
#include "qpop/env.hpp"
#include "qpop/population.hpp"
#include "qpop/replay.hpp"

namespace qpop {

struct AblationFlags {
  bool deterministic_critic = false;
  bool no_div = false;
  bool no_sta = false;
  bool disjoint = false;

  bool any() const { return deterministic_critic || no_div || no_sta || disjoint; }
};

struct TrainConfig {
  long total_steps = 20000;
  int batch_size = 64;
  double gamma = 0.9;
  int n_quantiles = 32;
  int n_target_quantiles = 32;
  int k_actor = 8;
  double kappa = 1.0;
  double actor_lr = 5e-4;
  double critic_lr = 1e-3;
  double target_update = 0.01;
  double lambda = 16.0;
  double noise = 0.1;
  long eval_interval = 500;
  int eval_episodes = 50;
  std::size_t replay_capacity = 100000;
  std::uint64_t seed = 1;
  PopulationConfig pop;
  CriticConfig critic;
  std::vector<int> actor_hidden{256, 64};
  AblationFlags ablation;
  bool ddpg_baseline = false;  // single deterministic actor-critic, no regularizers
  double group_alpha = 1.0;    // restrict rollouts to the bottom activity share

  void validate() const;
  // Resolves derived defaults (alpha list, decay horizon) and baseline /
  // ablation implications.
  void resolve();
};

struct EvalReport {
  long step = 0;
  std::vector<double> total_rewards;  // combined policy, per episode
  std::vector<int> depths;
  std::vector<double> per_actor_mean_return;
  double total_reward_mean = 0.0;
  double total_reward_std = 0.0;
  double depth_mean = 0.0;
  double cvar30 = 0.0;
  double cvar40 = 0.0;
  double gini_value = 0.0;  // NaN when undefined
  double coverage_value = 0.0;
  double ils_value = 0.0;
  bool bandit_active = false;
  std::array<long, 2> bandit_a{1, 1};
  std::array<long, 2> bandit_b{1, 1};
  int arm = -1;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

struct InferChoice {
  int actor_index = 0;
  std::vector<double> action;
  std::vector<int> items;
  std::vector<double> q_values;
};

// Critic-trusted action selection: every actor proposes, the critic's
// expected return picks the winner (ties to the lowest index).
InferChoice infer_action(const ActorPopulation& population, const QuantileCritic& critic,
                         const ItemCatalog& catalog, std::span<const double> state, int K, int n,
                         std::mt19937_64& rng);

class Trainer {
 public:
  Trainer(SimEnv env, TrainConfig cfg);

  using EvalCallback = std::function<void(const EvalReport&)>;

  struct Result {
    std::vector<EvalReport> reports;
    bool aborted = false;
    long steps_done = 0;
    int diversity_skips = 0;
  };

  Result train(const EvalCallback& on_eval = {});

  // Exploration-free rollouts with critic-trusted inference; episodes run on
  // independently derived seeds and merge in episode order.
  EvalReport evaluate(long step_label, int episodes, std::uint64_t salt) const;

  const SimEnv& env() const { return env_; }
  const TrainConfig& config() const { return cfg_; }
  const QuantileCritic& critic() const { return critic_; }
  QuantileCritic& critic() { return critic_; }
  const ActorPopulation& population() const { return population_; }
  ActorPopulation& population() { return population_; }
  const BanditState& bandit() const { return bandit_; }
  const ReplayBuffer& replay() const { return replay_; }

  void save_checkpoint(const std::string& dir) const;
  void load_checkpoint(const std::string& dir);

 private:
  void rollout_step();
  bool update_step(long t);  // false when a non-finite loss aborted the step

  SimEnv env_;
  TrainConfig cfg_;
  QuantileCritic critic_;
  ActorPopulation population_;
  ReplayBuffer replay_;
  BanditState bandit_;
  bool bandit_enabled_ = true;
  double lambda1_ = 0.0, lambda2_ = 0.0;
  int current_arm_ = -1;
  std::mt19937_64 rng_;
  std::vector<SessionState> sessions_;
  std::deque<double> eval_window_;
  int diversity_skips_ = 0;
};

}  // namespace qpop
