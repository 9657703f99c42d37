// Kernel timings: OpenMP batch paths against their serial references.
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "qpop/critic.hpp"
#include "qpop/env.hpp"
#include "qpop/metrics.hpp"
#include "qpop/parallel.hpp"
#include "qpop/population.hpp"
#include "qpop/trainer.hpp"
#include "qpop/util.hpp"

using namespace qpop;
using clock_type = std::chrono::steady_clock;

static double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = clock_type::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = clock_type::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

static void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int main() {
  const int threads = par::max_threads();
  std::printf("threads available: %d\n\n", threads);
  std::printf("%-34s %10s %10s %8s\n", "kernel", "serial ms", "omp ms", "speedup");

  std::mt19937_64 rng(42);

  // batched quantile critic loss
  {
    const int state_dim = 22, action_dim = 16, B = 64, N = 32, Np = 32;
    CriticConfig ccfg;
    QuantileCritic critic(state_dim, action_dim, ccfg, 1e-3, 1);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<double>> s(B), a(B), sn(B), an(B);
    std::vector<QuantileCritic::Sample> batch(B);
    for (int b = 0; b < B; ++b) {
      s[b].resize(state_dim);
      sn[b].resize(state_dim);
      a[b].resize(action_dim);
      an[b].resize(action_dim);
      for (auto* v : {&s[b], &sn[b]})
        for (double& x : *v) x = g(rng);
      for (auto* v : {&a[b], &an[b]})
        for (double& x : *v) x = g(rng);
      batch[b] = {s[b], a[b], sn[b], an[b], 0.3, false};
    }
    std::vector<double> taus(B * N), taus_next(B * Np);
    for (double& t : taus) t = uniform_open(rng, 0, 1);
    for (double& t : taus_next) t = uniform_open(rng, 0, 1);

    auto run = [&] { critic.loss_on_taus(batch, taus, N, taus_next, Np, 1.0, 0.9); };
    set_threads(1);
    const double serial = time_ms(run, 5);
    set_threads(threads);
    const double par_t = time_ms(run, 5);
    auto ref = [&] { critic.loss_on_taus_ref(batch, taus, N, taus_next, Np, 1.0, 0.9); };
    const double ref_t = time_ms(ref, 1);
    std::printf("%-34s %10.2f %10.2f %7.2fx\n", "critic loss (B=64, N=N'=32)", serial, par_t,
                serial / par_t);
    std::printf("%-34s %10.2f %10s\n", "  brute-force reference", ref_t, "-");
  }

  // actor CVaR loss
  {
    const int state_dim = 22, action_dim = 16, B = 64, K = 8;
    CriticConfig ccfg;
    QuantileCritic critic(state_dim, action_dim, ccfg, 1e-3, 2);
    PopulationConfig pcfg;
    pcfg.m = 1;
    pcfg.alphas = {1.0};
    std::vector<int> hidden{256, 64};
    ActorPopulation pop(state_dim, action_dim, hidden, pcfg, 5e-4, 3);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<double>> states(B, std::vector<double>(state_dim));
    for (auto& v : states)
      for (double& x : v) x = g(rng);
    std::vector<double> taus(B * K);
    for (double& t : taus) t = uniform_open(rng, 0, 0.5);

    auto run = [&] { actor_cvar_loss(pop.actors()[0], critic, states, taus, K); };
    set_threads(1);
    const double serial = time_ms(run, 10);
    set_threads(threads);
    const double par_t = time_ms(run, 10);
    std::printf("%-34s %10.2f %10.2f %7.2fx\n", "actor cvar loss (B=64, K=8)", serial, par_t,
                serial / par_t);
  }

  // gini fast path vs pairwise definition
  {
    std::vector<double> values(20000);
    std::uniform_real_distribution<double> u(0.1, 20.0);
    for (double& v : values) v = u(rng);
    const double fast = time_ms([&] { gini(values); }, 20);
    const double ref = time_ms([&] { gini_ref(values); }, 1);
    std::printf("%-34s %10.2f %10.2f %7.0fx\n", "gini (n=20000) ref vs fast", ref, fast,
                ref / fast);
  }

  // evaluation episodes
  {
    EnvConfig ecfg;
    SimEnv env = SimEnv::synthetic(ecfg, 7);
    TrainConfig tcfg;
    tcfg.total_steps = 0;
    Trainer trainer(env, tcfg);
    auto run = [&] { trainer.evaluate(0, 50, 1); };
    set_threads(1);
    const double serial = time_ms(run, 3);
    set_threads(threads);
    const double par_t = time_ms(run, 3);
    std::printf("%-34s %10.2f %10.2f %7.2fx\n", "evaluation (50 episodes)", serial, par_t,
                serial / par_t);
  }

  set_threads(threads);
  return 0;
}
