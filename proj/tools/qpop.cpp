#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qpop/config.hpp"
#include "qpop/experiments.hpp"
#include "qpop/util.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out = "run";
  std::string seed, steps, m, alphas, beta, lambda, noise, ablation, env;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "config file (key = value lines)");
  cmd->add_option("--out", opts.out, "output directory");
  cmd->add_option("--seed", opts.seed, "master seed");
  cmd->add_option("--steps", opts.steps, "training steps");
  cmd->add_option("--m", opts.m, "population size");
  cmd->add_option("--alphas", opts.alphas, "comma-separated quantile levels");
  cmd->add_option("--beta", opts.beta, "quantile decay ratio");
  cmd->add_option("--lambda", opts.lambda, "regularization coefficient");
  cmd->add_option("--noise", opts.noise, "exploration noise sigma");
  cmd->add_option("--ablation", opts.ablation,
                  "det-critic | no-div | no-sta | disjoint (comma-separable)");
  cmd->add_option("--env", opts.env, "synthetic | csv:<path>");
}

qpop::ExperimentConfig resolve_config(const CommonOpts& opts) {
  qpop::ExperimentConfig cfg;
  if (!opts.config_path.empty()) cfg.load_file(opts.config_path);
  if (!opts.seed.empty()) cfg.set("seed", opts.seed);
  if (!opts.steps.empty()) cfg.set("steps", opts.steps);
  if (!opts.m.empty()) {
    cfg.set("m", opts.m);
    if (opts.alphas.empty()) cfg.set("alphas", "");  // default to {1/m, ..., 1}
  }
  if (!opts.alphas.empty()) cfg.set("alphas", opts.alphas);
  if (!opts.beta.empty()) cfg.set("beta", opts.beta);
  if (!opts.lambda.empty()) cfg.set("lambda", opts.lambda);
  if (!opts.noise.empty()) cfg.set("noise", opts.noise);
  if (!opts.ablation.empty()) cfg.set("ablation", opts.ablation);
  if (!opts.env.empty()) cfg.set("env", opts.env);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"population-based risk-sensitive recommendation lab"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, ablate_opts, sweep_opts, study_opts;
  std::string eval_run, probe_run, probe_out = "quantiles.csv";
  std::string dump_run, dump_out = "actions.csv";
  int eval_episodes = 200;
  int probe_points = 100, dump_states = 64;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic population checkpoint");
  add_common(gen, gen_opts);

  auto* train = app.add_subcommand("train", "train the actor population");
  add_common(train, train_opts);

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a finished run");
  evaluate->add_option("--run", eval_run, "run directory with checkpoints")->required();
  evaluate->add_option("--episodes", eval_episodes, "evaluation episodes");

  auto* ablate = app.add_subcommand("ablate", "train one ablation variant");
  add_common(ablate, ablate_opts);

  auto* sweep = app.add_subcommand("sweep-m", "population-size sweep m in {2..6}");
  add_common(sweep, sweep_opts);

  auto* study = app.add_subcommand("group-noise-study",
                                   "baseline return matrix over user groups x noise levels");
  add_common(study, study_opts);

  auto* probe = app.add_subcommand("probe-quantiles", "dump critic quantile curves as CSV");
  probe->add_option("--run", probe_run, "run directory")->required();
  probe->add_option("--out", probe_out, "output CSV path");
  probe->add_option("--points", probe_points, "tau grid size");

  auto* dump = app.add_subcommand("dump-actions", "dump per-actor action vectors as CSV");
  dump->add_option("--run", dump_run, "run directory")->required();
  dump->add_option("--out", dump_out, "output CSV path");
  dump->add_option("--states", dump_states, "number of sampled states");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      auto cfg = resolve_config(gen_opts);
      auto env = cfg.build_env();
      std::filesystem::create_directories(gen_opts.out);
      const auto path = std::filesystem::path(gen_opts.out) / "population.bin";
      env.save_population(path.string());
      std::ofstream snap(std::filesystem::path(gen_opts.out) / "config.txt");
      snap << cfg.snapshot();
      std::cout << "wrote " << path.string() << "\n";
    } else if (train->parsed()) {
      auto cfg = resolve_config(train_opts);
      auto result = qpop::run_experiment(cfg, train_opts.out);
      if (result.train_result.aborted) {
        std::cerr << "training aborted on a non-finite loss; last-good checkpoint kept\n";
        return 3;
      }
    } else if (evaluate->parsed()) {
      qpop::ExperimentConfig cfg;
      cfg.load_file((std::filesystem::path(eval_run) / "config.txt").string());
      auto env = qpop::SimEnv::load_population(
          (std::filesystem::path(eval_run) / "population.bin").string(), cfg.env_config());
      qpop::Trainer trainer(std::move(env), cfg.train_config());
      trainer.load_checkpoint(eval_run);
      auto report = trainer.evaluate(0, eval_episodes, 0xF1A7);
      std::cout << qpop::report_to_jsonl(report, trainer.population().size()) << "\n";
    } else if (ablate->parsed()) {
      auto cfg = resolve_config(ablate_opts);
      if (cfg.get("ablation") == "none")
        throw std::invalid_argument("ablate: --ablation is required");
      qpop::run_experiment(cfg, ablate_opts.out);
    } else if (sweep->parsed()) {
      auto cfg = resolve_config(sweep_opts);
      qpop::run_population_sweep(cfg, sweep_opts.out);
    } else if (study->parsed()) {
      auto cfg = resolve_config(study_opts);
      auto res = qpop::run_group_noise_study(cfg, study_opts.out);
      for (std::size_t g = 0; g < res.group_alphas.size(); ++g) {
        std::cout << "group " << res.group_alphas[g] << ":";
        for (double r : res.mean_returns[g]) std::cout << " " << r;
        std::cout << "\n";
      }
    } else if (probe->parsed()) {
      qpop::probe_quantiles(probe_run, probe_out, probe_points);
      std::cout << "wrote " << probe_out << "\n";
    } else if (dump->parsed()) {
      qpop::dump_actions(dump_run, dump_out, dump_states);
      std::cout << "wrote " << dump_out << "\n";
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
