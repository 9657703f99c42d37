#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "qpop/mlp.hpp"

namespace qpop {

struct CriticConfig {
  int feature_dim = 16;
  std::vector<int> trunk_hidden{256, 64};
  int head_hidden = 32;
  bool deterministic = false;  // scalar Q head, quantile input ignored
};

// delta_ij = r + gamma*(1-done)*z_target[j] - z_online[i], row-major N x N'.
std::vector<double> td_error_matrix(double r, double gamma, std::span<const double> z_target,
                                    std::span<const double> z_online, bool done);

// |tau - 1{delta<0}| * Huber_kappa(delta)
double quantile_huber(double delta, double tau, double kappa);
double quantile_huber_ddelta(double delta, double tau, double kappa);

// Monte-Carlo mean of a quantile curve over U(lo, hi); shared by the critic
// estimators and by tests that substitute analytic quantile functions.
double mc_quantile_mean(const std::function<double(double)>& quantile_fn, double lo, double hi,
                        int K, std::mt19937_64& rng);

// Quantile critic: trunk on (s + a) producing a feature vector, a one-layer
// quantile embedder multiplied in elementwise, and a small head. Target
// copies of all three follow soft updates.
class QuantileCritic {
 public:
  QuantileCritic(int state_dim, int action_dim, const CriticConfig& cfg, double lr,
                 std::uint64_t seed);

  // z_i = head(trunk(s+a) * embed(tau_i)); rejects tau outside (0,1).
  std::vector<double> z_values(std::span<const double> s, std::span<const double> a,
                               std::span<const double> taus, bool use_target = false) const;
  double z_value(std::span<const double> s, std::span<const double> a, double tau,
                 bool use_target = false) const;

  struct Sample {
    std::span<const double> s, a, s_next, a_next;
    double r = 0.0;
    bool done = false;
  };

  struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;  // [trunk | embed | head]
  };

  // Quantile-regression loss on fixed tau grids (row-major batch x N /
  // batch x N'). Gradients flow only through online-net values.
  LossGrad loss_on_taus(std::span<const Sample> batch, std::span<const double> taus, int N,
                        std::span<const double> taus_next, int n_target, double kappa,
                        double gamma) const;

  // Serial explicit double-loop reference for the same tau grids.
  double loss_on_taus_ref(std::span<const Sample> batch, std::span<const double> taus, int N,
                          std::span<const double> taus_next, int n_target, double kappa,
                          double gamma) const;

  // Samples tau ~ U(0,1) grids and evaluates loss_on_taus.
  LossGrad sampled_loss(std::span<const Sample> batch, int N, int n_target, double kappa,
                        double gamma, std::mt19937_64& rng) const;

  // (1/K) sum_k z(s, a; tau_k) plus its gradient wrt the action, with critic
  // parameters held fixed. Adds into da_acc.
  double mean_z_with_action_grad(std::span<const double> s, std::span<const double> a,
                                 std::span<const double> taus, std::span<double> da_acc) const;

  void apply_update(const LossGrad& g);
  void soft_update_targets(double mu);

  std::size_t grad_size() const;
  bool deterministic() const { return cfg_.deterministic; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const CriticConfig& config() const { return cfg_; }

  void save(std::ostream& out) const;
  static QuantileCritic load(std::istream& in, double lr);

  // Test hooks.
  ParamSet& trunk_params() { return trunk_; }
  ParamSet& embed_params() { return embed_; }
  ParamSet& head_params() { return head_; }
  const ParamSet& trunk_params() const { return trunk_; }
  const ParamSet& head_params() const { return head_; }
  const ParamSet& trunk_target_params() const { return trunk_t_; }
  const MlpSpec& trunk_spec() const { return trunk_spec_; }
  const MlpSpec& head_spec() const { return head_spec_; }
  void refresh_versions();

 private:
  friend struct CriticEvalScratch;
  double z_one(std::span<const double> x, double tau, bool use_target) const;

  CriticConfig cfg_;
  int state_dim_ = 0, action_dim_ = 0;
  MlpSpec trunk_spec_, embed_spec_, head_spec_;
  ParamSet trunk_, embed_, head_;
  ParamSet trunk_t_, embed_t_, head_t_;
  AdamState adam_trunk_, adam_embed_, adam_head_;
};

// Mean of z over K draws tau ~ U(0, alpha); alpha in (0, 1].
double cvar_estimate(const QuantileCritic& critic, std::span<const double> s,
                     std::span<const double> a, double alpha, int K, std::mt19937_64& rng);

// Mean of z over tau ~ U(alpha_lo, alpha_hi); requires 0 <= lo < hi <= 1.
double interval_cvar_estimate(const QuantileCritic& critic, std::span<const double> s,
                              std::span<const double> a, double alpha_lo, double alpha_hi, int K,
                              std::mt19937_64& rng);

// Mean of z over tau ~ U(0, 1).
double q_expectation(const QuantileCritic& critic, std::span<const double> s,
                     std::span<const double> a, int K, std::mt19937_64& rng);

}  // namespace qpop
