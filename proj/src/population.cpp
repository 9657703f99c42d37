#include "qpop/population.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "qpop/parallel.hpp"
#include "qpop/util.hpp"

namespace qpop {

void PopulationConfig::resolve_alphas() {
  if (alphas.empty()) {
    alphas.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
      alphas[static_cast<std::size_t>(i)] = static_cast<double>(i + 1) / static_cast<double>(m);
  }
}

void PopulationConfig::validate() const {
  if (m < 1) throw std::invalid_argument("population: m must be >= 1");
  if (static_cast<int>(alphas.size()) != m)
    throw std::invalid_argument("population: alpha list must have m entries");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] > 0.0 && alphas[i] <= 1.0))
      throw std::invalid_argument("population: alphas must lie in (0, 1]");
    if (i > 0 && alphas[i] <= alphas[i - 1])
      throw std::invalid_argument("population: alphas must be strictly ascending");
  }
  if (beta <= 0.0) throw std::invalid_argument("population: beta must be positive");
  if (kernel_scale < 0.0) throw std::invalid_argument("population: kernel_scale must be >= 0");
  if (jitter <= 0.0) throw std::invalid_argument("population: jitter must be positive");
  if (embed_batch < 1) throw std::invalid_argument("population: embed_batch must be >= 1");
}

ActorPopulation::ActorPopulation(int state_dim, int action_dim, std::span<const int> hidden,
                                 const PopulationConfig& cfg, double lr, std::uint64_t seed)
    : cfg_(cfg), action_dim_(action_dim) {
  cfg_.resolve_alphas();
  cfg_.validate();
  std::vector<int> dims{state_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(action_dim);
  actors_.reserve(static_cast<std::size_t>(cfg_.m));
  for (int i = 0; i < cfg_.m; ++i) {
    Actor a;
    a.index = i;
    a.alpha = cfg_.alphas[static_cast<std::size_t>(i)];
    // actions bounded to [-1, 1] so exploration noise scales are meaningful
    a.spec = MlpSpec::make(dims, derive_seed(seed, 100 + static_cast<std::uint64_t>(i)),
                           Act::relu, Act::tanh);
    a.params = init_params(a.spec);
    a.target = a.params;
    a.adam = make_adam(a.params.size(), lr);
    actors_.push_back(std::move(a));
  }
}

void ActorPopulation::soft_update_targets(double mu) {
  for (auto& a : actors_) soft_update_inplace(a.target, a.params, mu);
}

std::vector<double> actor_action(const MlpSpec& spec, const ParamSet& params,
                                 std::span<const double> state) {
  return mlp_forward(spec, params, state);
}

static std::vector<double> score_items(std::span<const double> action,
                                       const ItemCatalog& catalog) {
  std::vector<double> scores(static_cast<std::size_t>(catalog.num_items));
  for (int i = 0; i < catalog.num_items; ++i)
    scores[static_cast<std::size_t>(i)] = dot(action, catalog.item(i));
  return scores;
}

std::vector<int> top_n_items(std::span<const double> action, const ItemCatalog& catalog, int n) {
  if (n < 1 || n > catalog.num_items)
    throw std::invalid_argument("top_n_items: n out of range");
  auto scores = score_items(action, catalog);
  std::vector<int> ids(static_cast<std::size_t>(catalog.num_items));
  std::iota(ids.begin(), ids.end(), 0);
  auto better = [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + n, ids.end(), better);
  ids.resize(static_cast<std::size_t>(n));
  return ids;
}

std::vector<int> top_n_items_full_sort(std::span<const double> action, const ItemCatalog& catalog,
                                       int n) {
  if (n < 1 || n > catalog.num_items)
    throw std::invalid_argument("top_n_items: n out of range");
  auto scores = score_items(action, catalog);
  std::vector<int> ids(static_cast<std::size_t>(catalog.num_items));
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  });
  ids.resize(static_cast<std::size_t>(n));
  return ids;
}

double decayed_alpha(double alpha, double beta, long t_step, long horizon) {
  if (horizon <= 0) throw std::invalid_argument("decayed_alpha: horizon must be positive");
  if (t_step < 0) throw std::invalid_argument("decayed_alpha: t_step must be >= 0");
  const double t = static_cast<double>(t_step) / static_cast<double>(horizon);
  return std::max(alpha, 1.0 - beta * (1.0 - alpha) * t);
}

LossAndGrad actor_cvar_loss(const Actor& actor, const QuantileCritic& critic,
                            std::span<const std::vector<double>> states,
                            std::span<const double> taus, int K) {
  if (states.empty()) throw std::invalid_argument("actor_cvar_loss: empty state batch");
  if (K < 1) throw std::invalid_argument("actor_cvar_loss: K must be >= 1");
  if (taus.size() != states.size() * static_cast<std::size_t>(K))
    throw std::invalid_argument("actor_cvar_loss: tau grid shape mismatch");
  const std::size_t B = states.size();
  const double inv_b = 1.0 / static_cast<double>(B);

  LossAndGrad out;
  out.grad.assign(actor.params.size(), 0.0);
  double loss = par::chunked_accumulate(
      B, out.grad, [&](std::size_t b, std::span<double> acc) -> double {
        Tape tape;
        mlp_forward_into(actor.spec, actor.params, states[b], tape);
        const auto action = tape.post.back();
        std::vector<double> da(action.size(), 0.0);
        const double mean_z = critic.mean_z_with_action_grad(
            states[b], action, taus.subspan(b * static_cast<std::size_t>(K),
                                            static_cast<std::size_t>(K)),
            da);
        for (double& g : da) g *= -inv_b;  // maximizing the CVaR estimate
        mlp_backward_acc(actor.spec, actor.params, tape, da, acc, {});
        return -mean_z * inv_b;
      });
  out.loss = loss;
  return out;
}

LossAndGrad sampled_actor_loss(const Actor& actor, const QuantileCritic& critic,
                               std::span<const std::vector<double>> states, int K,
                               double alpha_lo, double alpha_hi, std::mt19937_64& rng) {
  if (!(alpha_lo >= 0.0 && alpha_lo < alpha_hi && alpha_hi <= 1.0))
    throw std::invalid_argument("sampled_actor_loss: bad quantile interval");
  std::vector<double> taus(states.size() * static_cast<std::size_t>(K));
  for (double& t : taus) t = uniform_open(rng, alpha_lo, alpha_hi);
  return actor_cvar_loss(actor, critic, states, taus, K);
}

BehaviorEmbedding behavior_embedding(const Actor& actor,
                                     std::span<const std::vector<double>> states) {
  if (states.empty()) throw std::invalid_argument("behavior_embedding: empty state batch");
  const int d = actor.spec.out_dim();
  BehaviorEmbedding emb;
  emb.values.assign(states.size() * static_cast<std::size_t>(d), 0.0);
  std::vector<int> zero_flags(states.size(), 0);
  par::for_each(states.size(), [&](std::size_t b) {
    auto a = actor_action(actor.spec, actor.params, states[b]);
    const double norm = l2_norm(a);
    double* dst = emb.values.data() + b * static_cast<std::size_t>(d);
    if (norm > 0.0) {
      for (int k = 0; k < d; ++k) dst[k] = a[static_cast<std::size_t>(k)] / norm;
    } else {
      zero_flags[b] = 1;  // zero action stays a zero block
    }
  });
  for (int f : zero_flags) emb.zero_actions += f;
  return emb;
}

double se_kernel(std::span<const double> x1, std::span<const double> x2, double length_scale) {
  if (x1.size() != x2.size()) throw std::invalid_argument("se_kernel: length mismatch");
  if (length_scale <= 0.0) throw std::invalid_argument("se_kernel: length scale must be positive");
  return std::exp(-squared_distance(x1, x2) / (2.0 * length_scale * length_scale));
}

// Cholesky of a small SPD matrix; returns false when a pivot degenerates.
static bool cholesky(std::vector<double>& k, std::size_t m) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = k[i * m + j];
      for (std::size_t p = 0; p < j; ++p) s -= k[i * m + p] * k[j * m + p];
      if (i == j) {
        if (s <= 1e-300) return false;
        k[i * m + j] = std::sqrt(s);
      } else {
        k[i * m + j] = s / k[j * m + j];
      }
    }
    for (std::size_t j = i + 1; j < m; ++j) k[i * m + j] = 0.0;
  }
  return true;
}

static std::vector<double> spd_inverse_from_cholesky(const std::vector<double>& l,
                                                     std::size_t m) {
  std::vector<double> inv(m * m, 0.0);
  std::vector<double> y(m), x(m);
  for (std::size_t col = 0; col < m; ++col) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = (i == col) ? 1.0 : 0.0;
      for (std::size_t p = 0; p < i; ++p) s -= l[i * m + p] * y[p];
      y[i] = s / l[i * m + i];
    }
    for (std::size_t ii = m; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t p = ii + 1; p < m; ++p) s -= l[p * m + ii] * x[p];
      x[ii] = s / l[ii * m + ii];
    }
    for (std::size_t i = 0; i < m; ++i) inv[i * m + col] = x[i];
  }
  return inv;
}

DiversityResult diversity_loss(const std::vector<std::vector<double>>& embeddings,
                               double length_scale, double jitter) {
  const std::size_t m = embeddings.size();
  if (m < 1) throw std::invalid_argument("diversity_loss: need at least one embedding");
  if (jitter <= 0.0) throw std::invalid_argument("diversity_loss: jitter must be positive");
  for (const auto& e : embeddings)
    if (e.size() != embeddings.front().size())
      throw std::invalid_argument("diversity_loss: embedding length mismatch");

  std::vector<double> kernel(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      kernel[i * m + j] = se_kernel(embeddings[i], embeddings[j], length_scale);

  DiversityResult result;
  double j_used = jitter;
  std::vector<double> chol;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    chol = kernel;
    for (std::size_t i = 0; i < m; ++i) chol[i * m + i] += j_used;
    if (cholesky(chol, m)) {
      result.ok = true;
      break;
    }
    result.escalations += 1;
    j_used *= 10.0;
  }
  result.jitter_used = j_used;
  if (!result.ok) return result;

  double logdet = 0.0;
  for (std::size_t i = 0; i < m; ++i) logdet += 2.0 * std::log(chol[i * m + i]);
  result.loss = -logdet;

  const auto inv = spd_inverse_from_cholesky(chol, m);
  const double inv_l2 = 1.0 / (length_scale * length_scale);
  result.embedding_grads.assign(m, std::vector<double>(embeddings.front().size(), 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      // d(-logdet)/d e_i = 2 sum_j Kinv_ij K_ij (e_i - e_j) / l^2
      const double c = 2.0 * inv[i * m + j] * kernel[i * m + j] * inv_l2;
      auto& g = result.embedding_grads[i];
      for (std::size_t k = 0; k < g.size(); ++k)
        g[k] += c * (embeddings[i][k] - embeddings[j][k]);
    }
  }
  return result;
}

void diversity_actor_grad(const Actor& actor, std::span<const std::vector<double>> states,
                          std::span<const double> embedding_grad, std::span<double> grad_acc) {
  const int d = actor.spec.out_dim();
  if (embedding_grad.size() != states.size() * static_cast<std::size_t>(d))
    throw std::invalid_argument("diversity_actor_grad: gradient shape mismatch");
  if (grad_acc.size() != actor.params.size())
    throw std::invalid_argument("diversity_actor_grad: parameter buffer mismatch");

  double dummy = par::chunked_accumulate(
      states.size(), grad_acc, [&](std::size_t b, std::span<double> acc) -> double {
        Tape tape;
        mlp_forward_into(actor.spec, actor.params, states[b], tape);
        const auto action = tape.post.back();
        const double norm = l2_norm(action);
        if (norm <= 0.0) return 0.0;  // zero block carried no gradient
        std::span<const double> ge(embedding_grad.data() + b * static_cast<std::size_t>(d),
                                   static_cast<std::size_t>(d));
        // d(a/|a|)/da = (I - u u^T)/|a|
        std::vector<double> da(static_cast<std::size_t>(d));
        double proj = 0.0;
        for (int k = 0; k < d; ++k)
          proj += ge[static_cast<std::size_t>(k)] * action[static_cast<std::size_t>(k)] / norm;
        for (int k = 0; k < d; ++k)
          da[static_cast<std::size_t>(k)] =
              (ge[static_cast<std::size_t>(k)] -
               proj * action[static_cast<std::size_t>(k)] / norm) /
              norm;
        mlp_backward_acc(actor.spec, actor.params, tape, da, acc, {});
        return 0.0;
      });
  (void)dummy;
}

LossAndGrad supervision_loss(const Actor& actor, const ItemCatalog& catalog,
                             std::span<const Transition* const> batch) {
  if (batch.empty()) throw std::invalid_argument("supervision_loss: empty batch");
  for (const Transition* t : batch)
    if (t->exposed.empty() || t->exposed.size() != t->feedback.size())
      throw std::invalid_argument("supervision_loss: transitions must carry exposure/feedback");

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossAndGrad out;
  out.grad.assign(actor.params.size(), 0.0);
  out.loss = par::chunked_accumulate(
      batch.size(), out.grad, [&](std::size_t b, std::span<double> acc) -> double {
        const Transition& tr = *batch[b];
        Tape tape;
        mlp_forward_into(actor.spec, actor.params, tr.s, tape);
        const auto action = tape.post.back();
        const double inv_n = 1.0 / static_cast<double>(tr.exposed.size());
        double loss = 0.0;
        std::vector<double> da(action.size(), 0.0);
        for (std::size_t k = 0; k < tr.exposed.size(); ++k) {
          auto item = catalog.item(tr.exposed[k]);
          const double logit = dot(action, item);
          const double y = static_cast<double>(tr.feedback[k]);
          loss += bce_from_logit(logit, y) * inv_n;
          const double err = (sigmoid(logit) - y) * inv_n * inv_b;
          for (std::size_t c = 0; c < da.size(); ++c) da[c] += err * item[c];
        }
        mlp_backward_acc(actor.spec, actor.params, tape, da, acc, {});
        return loss * inv_b;
      });
  return out;
}

double total_loss(std::span<const double> actor_losses, std::span<const double> sup_losses,
                  double div_loss, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0)
    throw std::invalid_argument("total_loss: lambdas must be >= 0");
  if (actor_losses.size() != sup_losses.size())
    throw std::invalid_argument("total_loss: per-actor loss lists must match");
  double total = 0.0;
  for (std::size_t i = 0; i < actor_losses.size(); ++i)
    total += actor_losses[i] + lambda1 * sup_losses[i];
  return total + lambda2 * div_loss;
}

}  // namespace qpop
