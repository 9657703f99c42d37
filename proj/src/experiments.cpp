#include "qpop/experiments.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qpop/parallel.hpp"
#include "qpop/util.hpp"

namespace qpop {

namespace fs = std::filesystem;
using nlohmann::json;

static json number_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

std::string report_to_jsonl(const EvalReport& report, int population_size) {
  json j;
  j["step"] = report.step;
  json per_actor = json::array();
  for (int i = 0; i < population_size; ++i) {
    if (i < static_cast<int>(report.per_actor_mean_return.size()))
      per_actor.push_back(number_or_null(report.per_actor_mean_return[static_cast<std::size_t>(i)]));
    else
      per_actor.push_back(nullptr);
  }
  j["per_actor_mean_return"] = per_actor;
  j["total_reward_mean"] = number_or_null(report.total_reward_mean);
  j["total_reward_std"] = number_or_null(report.total_reward_std);
  j["depth_mean"] = number_or_null(report.depth_mean);
  j["cvar_0_3"] = number_or_null(report.cvar30);
  j["cvar_0_4"] = number_or_null(report.cvar40);
  j["gini"] = number_or_null(report.gini_value);
  j["coverage"] = number_or_null(report.coverage_value);
  j["ils"] = number_or_null(report.ils_value);
  if (report.bandit_active) {
    j["bandit"] = {{"a", report.bandit_a}, {"b", report.bandit_b}};
    j["arm"] = report.arm;
  } else {
    j["bandit"] = nullptr;
    j["arm"] = nullptr;
  }
  j["lambda1"] = report.lambda1;
  j["lambda2"] = report.lambda2;
  return j.dump();
}

void emit_metrics(const std::vector<EvalReport>& reports, int population_size,
                  const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "metrics.jsonl");
    if (!out) throw std::runtime_error("emit_metrics: cannot write metrics.jsonl in " + dir);
    for (const auto& r : reports) out << report_to_jsonl(r, population_size) << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / "curves.csv");
    if (!out) throw std::runtime_error("emit_metrics: cannot write curves.csv in " + dir);
    out << "step";
    for (int i = 0; i < population_size; ++i) out << ",actor_" << i;
    out << "\n";
    for (const auto& r : reports) {
      out << r.step;
      for (int i = 0; i < population_size; ++i) {
        out << ",";
        if (i < static_cast<int>(r.per_actor_mean_return.size()))
          out << r.per_actor_mean_return[static_cast<std::size_t>(i)];
      }
      out << "\n";
    }
  }
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet) {
  fs::create_directories(out_dir);
  {
    std::ofstream snap(fs::path(out_dir) / "config.txt");
    if (!snap) throw std::runtime_error("run: cannot write config snapshot in " + out_dir);
    snap << cfg.snapshot();
  }
  {
    std::ofstream seed(fs::path(out_dir) / "seed.txt");
    seed << cfg.get("seed") << "\n";
  }

  SimEnv env = cfg.build_env();
  env.save_population((fs::path(out_dir) / "population.bin").string());
  Trainer trainer(std::move(env), cfg.train_config());

  std::ofstream jsonl(fs::path(out_dir) / "metrics.jsonl");
  if (!jsonl) throw std::runtime_error("run: cannot write metrics.jsonl in " + out_dir);
  const int m = trainer.population().size();
  auto result = trainer.train([&](const EvalReport& r) {
    jsonl << report_to_jsonl(r, m) << "\n";
    jsonl.flush();
    if (!quiet)
      std::cout << "step " << r.step << "  reward " << r.total_reward_mean << "  depth "
                << r.depth_mean << "\n";
  });
  jsonl.close();

  {
    std::ofstream out(fs::path(out_dir) / "curves.csv");
    out << "step";
    for (int i = 0; i < m; ++i) out << ",actor_" << i;
    out << "\n";
    for (const auto& r : result.reports) {
      out << r.step;
      for (int i = 0; i < m; ++i)
        out << "," << r.per_actor_mean_return[static_cast<std::size_t>(i)];
      out << "\n";
    }
  }
  trainer.save_checkpoint(out_dir);
  return {std::move(result), out_dir};
}

void run_population_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::vector<int> sizes{2, 3, 4, 5, 6};
  std::vector<double> final_return(sizes.size(), 0.0);
  std::vector<std::string> errors(sizes.size());

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (long long k = 0; k < static_cast<long long>(sizes.size()); ++k) {
    const int m = sizes[static_cast<std::size_t>(k)];
    ExperimentConfig sub = cfg;
    sub.set("m", std::to_string(m));
    sub.set("alphas", "");  // resolves to {1/m, ..., 1}
    try {
      auto res = run_experiment(sub, (fs::path(out_dir) / ("m_" + std::to_string(m))).string(),
                                /*quiet=*/true);
      final_return[static_cast<std::size_t>(k)] =
          res.train_result.reports.empty() ? std::nan("")
                                           : res.train_result.reports.back().total_reward_mean;
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(k)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("sweep-m: " + e);

  std::ofstream out(fs::path(out_dir) / "sweep_m.csv");
  out << "m,total_reward_mean\n";
  for (std::size_t k = 0; k < sizes.size(); ++k)
    out << sizes[k] << "," << final_return[k] << "\n";
}

GroupNoiseResult run_group_noise_study(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  GroupNoiseResult result;
  result.group_alphas = {0.2, 0.4, 0.6, 0.8, 1.0};
  result.noise_levels = {0.1, 0.2, 0.3, 0.4};
  const int seeds = cfg.get_int("study_seeds");
  const long steps = cfg.get_long("study_steps");
  const std::uint64_t base_seed = static_cast<std::uint64_t>(cfg.get_long("seed"));

  const std::size_t ng = result.group_alphas.size(), nn = result.noise_levels.size();
  result.mean_returns.assign(ng, std::vector<double>(nn, 0.0));

  struct Cell {
    std::size_t g, n;
    int seed_idx;
  };
  std::vector<Cell> cells;
  for (std::size_t g = 0; g < ng; ++g)
    for (std::size_t n = 0; n < nn; ++n)
      for (int s = 0; s < seeds; ++s) cells.push_back({g, n, s});

  std::vector<double> returns(cells.size(), 0.0);
  std::vector<std::string> errors(cells.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (long long c = 0; c < static_cast<long long>(cells.size()); ++c) {
    const Cell& cell = cells[static_cast<std::size_t>(c)];
    try {
      ExperimentConfig sub = cfg;
      sub.set("algo", "ddpg");
      sub.set("steps", std::to_string(steps));
      sub.set("group_alpha", std::to_string(result.group_alphas[cell.g]));
      sub.set("noise", std::to_string(result.noise_levels[cell.n]));
      sub.set("seed", std::to_string(base_seed + static_cast<std::uint64_t>(cell.seed_idx)));
      SimEnv env = sub.build_env();
      Trainer trainer(std::move(env), sub.train_config());
      auto res = trainer.train();
      returns[static_cast<std::size_t>(c)] =
          res.reports.empty() ? std::nan("") : res.reports.back().total_reward_mean;
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(c)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("group-noise-study: " + e);

  for (std::size_t c = 0; c < cells.size(); ++c)
    result.mean_returns[cells[c].g][cells[c].n] += returns[c] / static_cast<double>(seeds);

  std::ofstream out(fs::path(out_dir) / "group_noise.csv");
  out << "group_alpha";
  for (double s : result.noise_levels) out << ",noise_" << s;
  out << "\n";
  for (std::size_t g = 0; g < ng; ++g) {
    out << result.group_alphas[g];
    for (std::size_t n = 0; n < nn; ++n) out << "," << result.mean_returns[g][n];
    out << "\n";
  }
  return result;
}

// Rebuilds environment + networks from a finished run directory.
static std::pair<SimEnv, Trainer> load_run(const std::string& run_dir) {
  ExperimentConfig cfg;
  cfg.load_file((fs::path(run_dir) / "config.txt").string());
  EnvConfig ecfg = cfg.env_config();
  SimEnv env = SimEnv::load_population((fs::path(run_dir) / "population.bin").string(), ecfg);
  Trainer trainer(env, cfg.train_config());
  trainer.load_checkpoint(run_dir);
  return {std::move(env), std::move(trainer)};
}

void probe_quantiles(const std::string& run_dir, const std::string& out_csv, int tau_points) {
  auto [env, trainer] = load_run(run_dir);
  auto rng = make_rng(derive_seed(trainer.config().seed, 0x9001));
  SessionState session = env.new_session(env.sample_user(rng));
  auto state = env.encode_state(session);

  std::ofstream out(out_csv);
  if (!out) throw std::runtime_error("probe-quantiles: cannot write " + out_csv);
  out << "tau,z_mean\n";
  const auto& catalog = env.catalog();
  for (int k = 0; k < tau_points; ++k) {
    const double tau = (static_cast<double>(k) + 0.5) / static_cast<double>(tau_points);
    double mean = 0.0;
    for (int item = 0; item < catalog.num_items; ++item)
      mean += trainer.critic().z_value(state, catalog.item(item), tau);
    mean /= static_cast<double>(catalog.num_items);
    out << tau << "," << mean << "\n";
  }
}

void dump_actions(const std::string& run_dir, const std::string& out_csv, int num_states) {
  auto [env, trainer] = load_run(run_dir);
  auto rng = make_rng(derive_seed(trainer.config().seed, 0x9002));

  // sample states by rolling short sessions with the combined policy
  std::vector<std::vector<double>> states;
  while (static_cast<int>(states.size()) < num_states) {
    SessionState session = env.new_session(env.sample_user(rng));
    for (int step = 0; step < 4 && !session.done; ++step) {
      auto s = env.encode_state(session);
      states.push_back(s);
      if (static_cast<int>(states.size()) >= num_states) break;
      auto choice = infer_action(trainer.population(), trainer.critic(), env.catalog(), s,
                                 trainer.config().k_actor, env.config().list_size, rng);
      session = env.respond(session, choice.items, rng).next;
    }
  }

  std::ofstream out(out_csv);
  if (!out) throw std::runtime_error("dump-actions: cannot write " + out_csv);
  out << "actor_id,state_index";
  for (int k = 0; k < env.action_dim(); ++k) out << ",a_" << k;
  out << "\n";
  for (const Actor& actor : trainer.population().actors()) {
    for (std::size_t si = 0; si < states.size(); ++si) {
      auto action = actor_action(actor.spec, actor.params, states[si]);
      out << actor.index << "," << si;
      for (double v : action) out << "," << v;
      out << "\n";
    }
  }
}

}  // namespace qpop
