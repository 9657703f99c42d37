#include "qpop/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "qpop/metrics.hpp"
#include "qpop/parallel.hpp"
#include "qpop/util.hpp"

namespace qpop {

void TrainConfig::validate() const {
  if (total_steps < 0) throw std::invalid_argument("train: total_steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("train: gamma must lie in [0, 1)");
  if (n_quantiles < 1 || n_target_quantiles < 1 || k_actor < 1)
    throw std::invalid_argument("train: quantile sample counts must be >= 1");
  if (kappa <= 0.0) throw std::invalid_argument("train: kappa must be positive");
  if (actor_lr <= 0.0 || critic_lr <= 0.0)
    throw std::invalid_argument("train: learning rates must be positive");
  if (target_update <= 0.0 || target_update > 1.0)
    throw std::invalid_argument("train: target_update must lie in (0, 1]");
  if (lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
  if (noise < 0.0) throw std::invalid_argument("train: noise must be >= 0");
  if (eval_interval < 1) throw std::invalid_argument("train: eval_interval must be >= 1");
  if (eval_episodes < 1) throw std::invalid_argument("train: eval_episodes must be >= 1");
  if (replay_capacity == 0) throw std::invalid_argument("train: replay capacity must be >= 1");
  if (group_alpha <= 0.0 || group_alpha > 1.0)
    throw std::invalid_argument("train: group_alpha must lie in (0, 1]");
  if (ablation.deterministic_critic && ablation.disjoint)
    throw std::invalid_argument("train: det-critic and disjoint ablations conflict");
  if (ddpg_baseline && ablation.any())
    throw std::invalid_argument("train: the baseline cannot be combined with ablations");
}

void TrainConfig::resolve() {
  if (ddpg_baseline) {
    pop.m = 1;
    pop.alphas = {1.0};
    critic.deterministic = true;
  }
  if (ablation.deterministic_critic) critic.deterministic = true;
  if (ablation.disjoint) pop.disjoint = true;
  pop.resolve_alphas();
  if (pop.decay_horizon <= 0) pop.decay_horizon = std::max<long>(1, total_steps / 2);
  if (pop.kernel_scale <= 0.0)
    pop.kernel_scale = std::sqrt(static_cast<double>(pop.embed_batch));
  validate();
  pop.validate();
}

InferChoice infer_action(const ActorPopulation& population, const QuantileCritic& critic,
                         const ItemCatalog& catalog, std::span<const double> state, int K, int n,
                         std::mt19937_64& rng) {
  InferChoice best;
  double best_q = 0.0;
  std::vector<double> all_q;
  all_q.reserve(static_cast<std::size_t>(population.size()));
  for (const Actor& actor : population.actors()) {
    auto action = actor_action(actor.spec, actor.params, state);
    const double q = q_expectation(critic, state, action, K, rng);
    all_q.push_back(q);
    if (actor.index == 0 || q > best_q) {
      best_q = q;
      best.actor_index = actor.index;
      best.action = std::move(action);
    }
  }
  best.items = top_n_items(best.action, catalog, n);
  best.q_values = std::move(all_q);
  return best;
}

Trainer::Trainer(SimEnv env, TrainConfig cfg)
    : env_(std::move(env)),
      cfg_([&] {
        cfg.resolve();
        return cfg;
      }()),
      critic_(env_.state_dim(), env_.action_dim(), cfg_.critic, cfg_.critic_lr,
              derive_seed(cfg_.seed, 11)),
      population_(env_.state_dim(), env_.action_dim(), cfg_.actor_hidden, cfg_.pop,
                  cfg_.actor_lr, derive_seed(cfg_.seed, 12)),
      replay_(cfg_.replay_capacity),
      rng_(derive_seed(cfg_.seed, 13)) {
  if (cfg_.group_alpha < 1.0)
    env_.restrict_users(env_.bottom_activity_users(cfg_.group_alpha));
  bandit_.lambda = cfg_.lambda;

  bandit_enabled_ = !(cfg_.ddpg_baseline || cfg_.ablation.no_div || cfg_.ablation.no_sta);
  if (cfg_.ddpg_baseline) {
    lambda1_ = 0.0;
    lambda2_ = 0.0;
  } else if (cfg_.ablation.no_div && cfg_.ablation.no_sta) {
    lambda1_ = 0.0;
    lambda2_ = 0.0;
  } else if (cfg_.ablation.no_div) {
    lambda1_ = cfg_.lambda;
    lambda2_ = 0.0;
  } else if (cfg_.ablation.no_sta) {
    lambda1_ = 0.0;
    lambda2_ = cfg_.lambda;
  }

  sessions_.reserve(static_cast<std::size_t>(population_.size()));
  for (int i = 0; i < population_.size(); ++i)
    sessions_.push_back(env_.new_session(env_.sample_user(rng_)));
}

void Trainer::rollout_step() {
  const int n = env_.config().list_size;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Actor& actor : population_.actors()) {
    SessionState& session = sessions_[static_cast<std::size_t>(actor.index)];
    auto s = env_.encode_state(session);
    auto action = actor_action(actor.spec, actor.params, s);
    if (cfg_.noise > 0.0) {
      for (double& x : action) x = std::clamp(x + cfg_.noise * gauss(rng_), -1.0, 1.0);
    }
    auto items = top_n_items(action, env_.catalog(), n);
    auto outcome = env_.respond(session, items, rng_);

    Transition tr;
    tr.s = std::move(s);
    tr.a = std::move(action);
    tr.exposed = outcome.exposed;
    tr.feedback = outcome.feedback;
    tr.r = outcome.reward;
    tr.s_next = env_.encode_state(outcome.next);
    tr.done = outcome.next.done;
    tr.actor_id = actor.index;
    replay_.push(std::move(tr));

    session = outcome.next;
    if (session.done) session = env_.new_session(env_.sample_user(rng_));
  }
}

bool Trainer::update_step(long t) {
  if (replay_.size() < static_cast<std::size_t>(cfg_.batch_size)) return true;

  auto batch = replay_.sample_minibatch(static_cast<std::size_t>(cfg_.batch_size), rng_);

  // critic step: the target action comes from the originating actor's target net
  std::vector<std::vector<double>> next_actions(batch.size());
  std::vector<QuantileCritic::Sample> samples(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Transition& tr = *batch[b];
    const Actor& owner = population_.actors()[static_cast<std::size_t>(tr.actor_id)];
    next_actions[b] = actor_action(owner.spec, owner.target, tr.s_next);
    samples[b] = {tr.s, tr.a, tr.s_next, next_actions[b], tr.r, tr.done};
  }
  auto critic_grad = critic_.sampled_loss(samples, cfg_.n_quantiles, cfg_.n_target_quantiles,
                                          cfg_.kappa, cfg_.gamma, rng_);
  if (!std::isfinite(critic_grad.loss)) return false;
  critic_.apply_update(critic_grad);

  // per-actor quantile targets with decay
  std::vector<std::vector<double>> states;
  states.reserve(batch.size());
  for (const Transition* tr : batch) states.push_back(tr->s);

  const auto& alphas = cfg_.pop.alphas;
  std::vector<LossAndGrad> actor_grads;
  std::vector<double> actor_losses, sup_losses;
  actor_grads.reserve(static_cast<std::size_t>(population_.size()));
  for (Actor& actor : population_.actors()) {
    double hi = decayed_alpha(actor.alpha, cfg_.pop.beta, t, cfg_.pop.decay_horizon);
    double lo = 0.0;
    if (cfg_.pop.disjoint && actor.index > 0) {
      lo = decayed_alpha(alphas[static_cast<std::size_t>(actor.index - 1)], cfg_.pop.beta, t,
                         cfg_.pop.decay_horizon);
      if (lo >= hi) lo = std::max(0.0, hi - 1e-9);  // degenerate only at t = 0
    }
    actor_grads.push_back(
        sampled_actor_loss(actor, critic_, states, cfg_.k_actor, lo, hi, rng_));
    actor_losses.push_back(actor_grads.back().loss);
  }

  // stability supervision on the same minibatch
  if (lambda1_ > 0.0) {
    for (Actor& actor : population_.actors()) {
      auto sup = supervision_loss(actor, env_.catalog(), batch);
      sup_losses.push_back(sup.loss);
      for (std::size_t i = 0; i < sup.grad.size(); ++i)
        actor_grads[static_cast<std::size_t>(actor.index)].grad[i] += lambda1_ * sup.grad[i];
    }
  } else {
    sup_losses.assign(static_cast<std::size_t>(population_.size()), 0.0);
  }

  // population diversity on a fresh state batch
  double div_loss = 0.0;
  if (lambda2_ > 0.0 && population_.size() > 1) {
    auto div_states = replay_.sample_states(
        static_cast<std::size_t>(std::min<long>(cfg_.pop.embed_batch,
                                                static_cast<long>(replay_.size()))),
        rng_);
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(static_cast<std::size_t>(population_.size()));
    for (const Actor& actor : population_.actors())
      embeddings.push_back(behavior_embedding(actor, div_states).values);
    auto div = diversity_loss(embeddings, cfg_.pop.kernel_scale, cfg_.pop.jitter);
    if (div.ok) {
      div_loss = div.loss;
      for (Actor& actor : population_.actors()) {
        auto& grad = actor_grads[static_cast<std::size_t>(actor.index)].grad;
        std::vector<double> scaled(grad.size(), 0.0);
        diversity_actor_grad(actor, div_states,
                             div.embedding_grads[static_cast<std::size_t>(actor.index)], scaled);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += lambda2_ * scaled[i];
      }
    } else {
      ++diversity_skips_;
    }
  }

  const double joint =
      total_loss(actor_losses, sup_losses, div_loss, lambda1_, lambda2_);
  if (!std::isfinite(joint)) return false;

  for (Actor& actor : population_.actors())
    adam_step(actor.adam, actor.params, actor_grads[static_cast<std::size_t>(actor.index)].grad);

  critic_.soft_update_targets(cfg_.target_update);
  population_.soft_update_targets(cfg_.target_update);
  return true;
}

Trainer::Result Trainer::train(const EvalCallback& on_eval) {
  Result result;
  if (cfg_.total_steps == 0) return result;

  if (bandit_enabled_) {
    auto choice = select_arm(bandit_, rng_);
    current_arm_ = choice.arm;
    lambda1_ = choice.lambda1;
    lambda2_ = choice.lambda2;
  }

  // last-good snapshot, refreshed at evaluation boundaries
  std::vector<char> snapshot;
  auto take_snapshot = [&] {
    std::ostringstream os(std::ios::binary);
    critic_.save(os);
    for (const Actor& a : population_.actors()) {
      save_params(os, a.params);
      save_params(os, a.target);
    }
    const std::string s = os.str();
    snapshot.assign(s.begin(), s.end());
  };
  auto restore_snapshot = [&] {
    if (snapshot.empty()) return;
    std::istringstream is(std::string(snapshot.begin(), snapshot.end()), std::ios::binary);
    critic_ = QuantileCritic::load(is, cfg_.critic_lr);
    for (Actor& a : population_.actors()) {
      auto p = load_params(is);
      auto tgt = load_params(is);
      a.params.data = std::move(p.data);
      a.target.data = std::move(tgt.data);
      a.params.version += 1;
      a.target.version += 1;
    }
  };
  take_snapshot();

  for (long t = 1; t <= cfg_.total_steps; ++t) {
    rollout_step();
    bool ok = true;
    try {
      ok = update_step(t);
    } catch (const std::invalid_argument&) {
      ok = false;  // non-finite gradients rejected by the optimizer
    }
    if (!ok) {
      restore_snapshot();
      result.aborted = true;
      result.steps_done = t - 1;
      result.diversity_skips = diversity_skips_;
      return result;
    }

    const bool boundary = (t % cfg_.eval_interval == 0);
    const bool trailing = (t == cfg_.total_steps) && !boundary;
    if (boundary || trailing) {
      EvalReport report = evaluate(t, cfg_.eval_episodes,
                                   static_cast<std::uint64_t>(t / cfg_.eval_interval) + 1);
      report.bandit_active = bandit_enabled_;
      report.bandit_a = bandit_.a;
      report.bandit_b = bandit_.b;
      report.arm = current_arm_;
      report.lambda1 = lambda1_;
      report.lambda2 = lambda2_;

      if (bandit_enabled_) {
        eval_window_.push_back(report.total_reward_mean);
        if (eval_window_.size() > 10) eval_window_.pop_front();
        double avg = 0.0;
        for (double v : eval_window_) avg += v;
        avg /= static_cast<double>(eval_window_.size());
        observe(bandit_, avg);
        auto choice = select_arm(bandit_, rng_);
        current_arm_ = choice.arm;
        lambda1_ = choice.lambda1;
        lambda2_ = choice.lambda2;
        report.bandit_a = bandit_.a;
        report.bandit_b = bandit_.b;
      }

      take_snapshot();
      result.reports.push_back(report);
      if (on_eval) on_eval(result.reports.back());
    }
  }
  result.steps_done = cfg_.total_steps;
  result.diversity_skips = diversity_skips_;
  return result;
}

EvalReport Trainer::evaluate(long step_label, int episodes, std::uint64_t salt) const {
  EvalReport report;
  report.step = step_label;
  report.total_rewards.assign(static_cast<std::size_t>(episodes), 0.0);
  report.depths.assign(static_cast<std::size_t>(episodes), 0);
  std::vector<std::vector<std::vector<int>>> lists(static_cast<std::size_t>(episodes));

  const int n = env_.config().list_size;
  par::for_each(static_cast<std::size_t>(episodes), [&](std::size_t ep) {
    auto rng = make_rng(derive_seed(cfg_.seed, 0xE7A1u + salt, ep));
    SessionState session = env_.new_session(env_.sample_user(rng));
    double total = 0.0;
    while (!session.done) {
      auto s = env_.encode_state(session);
      auto choice = infer_action(population_, critic_, env_.catalog(), s, cfg_.k_actor, n, rng);
      auto outcome = env_.respond(session, choice.items, rng);
      total += outcome.reward;
      lists[ep].push_back(std::move(outcome.exposed));
      session = outcome.next;
    }
    report.total_rewards[ep] = total;
    report.depths[ep] = session.depth;
  });

  report.per_actor_mean_return.assign(static_cast<std::size_t>(population_.size()), 0.0);
  for (const Actor& actor : population_.actors()) {
    std::vector<double> totals(static_cast<std::size_t>(episodes), 0.0);
    par::for_each(static_cast<std::size_t>(episodes), [&](std::size_t ep) {
      auto rng = make_rng(derive_seed(cfg_.seed,
                                      0xAC70u + salt * 64 + static_cast<std::uint64_t>(actor.index),
                                      ep));
      SessionState session = env_.new_session(env_.sample_user(rng));
      double total = 0.0;
      while (!session.done) {
        auto s = env_.encode_state(session);
        auto action = actor_action(actor.spec, actor.params, s);
        auto items = top_n_items(action, env_.catalog(), n);
        auto outcome = env_.respond(session, items, rng);
        total += outcome.reward;
        session = outcome.next;
      }
      totals[ep] = total;
    });
    report.per_actor_mean_return[static_cast<std::size_t>(actor.index)] = mean_of(totals);
  }

  report.total_reward_mean = mean_of(report.total_rewards);
  report.total_reward_std = stddev_of(report.total_rewards);
  double depth_sum = 0.0;
  for (int d : report.depths) depth_sum += d;
  report.depth_mean = depth_sum / static_cast<double>(episodes);
  report.cvar30 = empirical_cvar(report.total_rewards, 0.3);
  report.cvar40 = empirical_cvar(report.total_rewards, 0.4);
  try {
    report.gini_value = gini(report.total_rewards);
  } catch (const std::invalid_argument&) {
    report.gini_value = std::numeric_limits<double>::quiet_NaN();
  }

  std::vector<std::vector<int>> all_lists;
  double ils_sum = 0.0;
  std::size_t ils_count = 0;
  for (auto& ep_lists : lists) {
    for (auto& list : ep_lists) {
      if (list.size() >= 2) {
        ils_sum += ils(list, env_.catalog().category);
        ++ils_count;
      }
      all_lists.push_back(std::move(list));
    }
  }
  report.coverage_value = coverage(all_lists, env_.catalog().num_items);
  report.ils_value =
      ils_count ? ils_sum / static_cast<double>(ils_count) : std::numeric_limits<double>::quiet_NaN();
  return report;
}

void Trainer::save_checkpoint(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "critic.bin", std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write critic.bin");
    critic_.save(out);
  }
  for (const Actor& a : population_.actors()) {
    std::ofstream out(fs::path(dir) / ("actor_" + std::to_string(a.index) + ".bin"),
                      std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write actor file");
    const char magic[8] = {'Q', 'P', 'O', 'P', 'A', 'C', 'T', '1'};
    out.write(magic, 8);
    const std::int64_t idx = a.index;
    const double alpha = a.alpha;
    out.write(reinterpret_cast<const char*>(&idx), 8);
    out.write(reinterpret_cast<const char*>(&alpha), 8);
    const std::int64_t nd = static_cast<std::int64_t>(a.spec.dims.size());
    out.write(reinterpret_cast<const char*>(&nd), 8);
    for (int d : a.spec.dims) {
      const std::int64_t v = d;
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
    save_params(out, a.params);
    save_params(out, a.target);
  }
  {
    nlohmann::json j;
    j["a"] = bandit_.a;
    j["b"] = bandit_.b;
    j["lambda"] = bandit_.lambda;
    j["last_arm"] = bandit_.last_arm;
    j["last_return"] = bandit_.last_return;
    j["has_baseline"] = bandit_.has_baseline;
    std::ofstream out(fs::path(dir) / "bandit.json");
    out << j.dump(2) << "\n";
  }
}

void Trainer::load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  {
    std::ifstream in(fs::path(dir) / "critic.bin", std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot read critic.bin");
    critic_ = QuantileCritic::load(in, cfg_.critic_lr);
  }
  for (Actor& a : population_.actors()) {
    std::ifstream in(fs::path(dir) / ("actor_" + std::to_string(a.index) + ".bin"),
                     std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot read actor file");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "QPOPACT1")
      throw std::runtime_error("checkpoint: bad actor magic");
    std::int64_t idx = 0, nd = 0;
    double alpha = 0.0;
    in.read(reinterpret_cast<char*>(&idx), 8);
    in.read(reinterpret_cast<char*>(&alpha), 8);
    in.read(reinterpret_cast<char*>(&nd), 8);
    std::vector<int> dims;
    for (std::int64_t i = 0; i < nd; ++i) {
      std::int64_t v = 0;
      in.read(reinterpret_cast<char*>(&v), 8);
      dims.push_back(static_cast<int>(v));
    }
    if (dims != a.spec.dims) throw std::runtime_error("checkpoint: actor topology mismatch");
    auto params = load_params(in);
    auto target = load_params(in);
    a.params.data = std::move(params.data);
    a.target.data = std::move(target.data);
    a.params.version += 1;
    a.target.version += 1;
    a.alpha = alpha;
  }
  std::ifstream in(fs::path(dir) / "bandit.json");
  if (in) {
    nlohmann::json j;
    in >> j;
    bandit_.a = {j["a"][0].get<long>(), j["a"][1].get<long>()};
    bandit_.b = {j["b"][0].get<long>(), j["b"][1].get<long>()};
    bandit_.lambda = j["lambda"].get<double>();
    bandit_.last_arm = j["last_arm"].get<int>();
    bandit_.last_return = j["last_return"].get<double>();
    bandit_.has_baseline = j["has_baseline"].get<bool>();
  }
}

}  // namespace qpop
