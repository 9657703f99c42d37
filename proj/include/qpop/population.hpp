#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "qpop/critic.hpp"
#include "qpop/env.hpp"
#include "qpop/mlp.hpp"
#include "qpop/replay.hpp"

namespace qpop {

struct PopulationConfig {
  int m = 5;
  std::vector<double> alphas;  // ascending; empty -> {1/m, ..., 1}
  double beta = 0.5;           // quantile decay ratio
  long decay_horizon = 0;      // steps mapped to t = 1; 0 -> trainer default
  double kernel_scale = 0.0;   // 0 -> sqrt(embed_batch)
  double jitter = 1e-4;
  bool disjoint = false;  // per-actor quantile interval instead of (0, alpha]
  int embed_batch = 16;

  void resolve_alphas();
  void validate() const;
};

struct Actor {
  int index = 0;
  double alpha = 1.0;
  MlpSpec spec;
  ParamSet params;
  ParamSet target;
  AdamState adam;
};

class ActorPopulation {
 public:
  ActorPopulation(int state_dim, int action_dim, std::span<const int> hidden,
                  const PopulationConfig& cfg, double lr, std::uint64_t seed);

  std::vector<Actor>& actors() { return actors_; }
  const std::vector<Actor>& actors() const { return actors_; }
  int size() const { return static_cast<int>(actors_.size()); }
  const PopulationConfig& config() const { return cfg_; }
  int action_dim() const { return action_dim_; }

  void soft_update_targets(double mu);

 private:
  PopulationConfig cfg_;
  int action_dim_ = 0;
  std::vector<Actor> actors_;
};

// Deterministic action for an encoded state.
std::vector<double> actor_action(const MlpSpec& spec, const ParamSet& params,
                                 std::span<const double> state);

// Top-n distinct items by descending action-embedding score, ties broken by
// ascending item id.
std::vector<int> top_n_items(std::span<const double> action, const ItemCatalog& catalog, int n);
// Full-stable-sort route, kept as the selection reference.
std::vector<int> top_n_items_full_sort(std::span<const double> action, const ItemCatalog& catalog,
                                       int n);

// alpha_t = max{alpha, 1 - beta*(1-alpha)*t}, t = t_step/horizon.
double decayed_alpha(double alpha, double beta, long t_step, long horizon);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // actor parameter gradient
};

// Negative Monte-Carlo quantile-interval mean of the critic at the actor's
// own actions, averaged over the state batch; critic parameters frozen.
// taus is row-major batch x K.
LossAndGrad actor_cvar_loss(const Actor& actor, const QuantileCritic& critic,
                            std::span<const std::vector<double>> states,
                            std::span<const double> taus, int K);

// Samples taus from U(alpha_lo, alpha_hi) and runs actor_cvar_loss.
LossAndGrad sampled_actor_loss(const Actor& actor, const QuantileCritic& critic,
                               std::span<const std::vector<double>> states, int K,
                               double alpha_lo, double alpha_hi, std::mt19937_64& rng);

struct BehaviorEmbedding {
  std::vector<double> values;  // batch * action_dim, each action L2-normalized
  int zero_actions = 0;
};

BehaviorEmbedding behavior_embedding(const Actor& actor,
                                     std::span<const std::vector<double>> states);

// exp(-|x1-x2|^2 / (2 l^2))
double se_kernel(std::span<const double> x1, std::span<const double> x2, double length_scale);

struct DiversityResult {
  bool ok = false;
  double loss = 0.0;
  std::vector<std::vector<double>> embedding_grads;
  double jitter_used = 0.0;
  int escalations = 0;
};

// -log det of the SE kernel matrix over the embeddings (jitter on the
// diagonal). On factorization failure the jitter escalates x10 up to 3
// times; if it still fails, ok=false and the step should be skipped.
DiversityResult diversity_loss(const std::vector<std::vector<double>>& embeddings,
                               double length_scale, double jitter);

// Chains diversity embedding gradients through the per-action normalization
// and the actor network; adds into grad_acc.
void diversity_actor_grad(const Actor& actor, std::span<const std::vector<double>> states,
                          std::span<const double> embedding_grad, std::span<double> grad_acc);

// Mean binary cross-entropy between sigmoid(action . item) and the stored
// feedback over each transition's exposed list.
LossAndGrad supervision_loss(const Actor& actor, const ItemCatalog& catalog,
                             std::span<const Transition* const> batch);

// sum_i (actor_i + lambda1 * sup_i) + lambda2 * div
double total_loss(std::span<const double> actor_losses, std::span<const double> sup_losses,
                  double div_loss, double lambda1, double lambda2);

}  // namespace qpop
