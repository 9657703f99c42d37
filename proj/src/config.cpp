#include "qpop/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "qpop/util.hpp"

namespace qpop {

static std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

ExperimentConfig::ExperimentConfig() {
  values_ = {
      // environment
      {"env", "synthetic"},
      {"population", ""},
      {"num_users", "200"},
      {"num_items", "300"},
      {"embed_dim", "16"},
      {"static_dim", "4"},
      {"heterogeneity", "1.0"},
      {"list_size", "10"},
      {"history_window", "10"},
      {"max_depth", "20"},
      {"initial_temper", "10"},
      {"history_decay", "0.8"},
      {"num_categories", "10"},
      // training
      {"steps", "20000"},
      {"batch_size", "64"},
      {"gamma", "0.9"},
      {"n_quantiles", "32"},
      {"n_target_quantiles", "32"},
      {"k_actor", "8"},
      {"kappa", "1.0"},
      {"actor_lr", "5e-4"},
      {"critic_lr", "1e-3"},
      {"target_update", "0.01"},
      {"lambda", "16"},
      {"beta", "0.5"},
      {"decay_horizon", "0"},
      {"m", "5"},
      {"alphas", "0.2,0.4,0.6,0.8,1.0"},
      {"kernel_scale", "0"},
      {"jitter", "1e-4"},
      {"embed_batch", "16"},
      {"noise", "0.1"},
      {"replay_capacity", "100000"},
      {"eval_interval", "500"},
      {"eval_episodes", "50"},
      {"seed", "1"},
      {"algo", "uoep"},
      {"ablation", "none"},
      {"group_alpha", "1.0"},
      // networks
      {"actor_hidden", "256,64"},
      {"critic_trunk_hidden", "256,64"},
      {"critic_feature_dim", "16"},
      {"critic_head_hidden", "32"},
      // presets
      {"study_steps", "3000"},
      {"study_seeds", "4"},
  };
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end())
    throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second = value;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw std::invalid_argument("config: unknown key '" + key + "'");
  return it->second;
}

bool ExperimentConfig::has(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

void ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(line_no) +
                               " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("config: line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

long ExperimentConfig::get_long(const std::string& key) const {
  return std::stol(get(key));
}
int ExperimentConfig::get_int(const std::string& key) const { return std::stoi(get(key)); }
double ExperimentConfig::get_double(const std::string& key) const { return std::stod(get(key)); }

std::vector<double> ExperimentConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get(key));
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!trim(tok).empty()) out.push_back(std::stod(trim(tok)));
  return out;
}

std::vector<int> ExperimentConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get(key));
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!trim(tok).empty()) out.push_back(std::stoi(trim(tok)));
  return out;
}

AblationFlags parse_ablation(const std::string& value) {
  AblationFlags flags;
  if (value.empty() || value == "none") return flags;
  std::stringstream ss(value);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok == "det-critic") flags.deterministic_critic = true;
    else if (tok == "no-div") flags.no_div = true;
    else if (tok == "no-sta") flags.no_sta = true;
    else if (tok == "disjoint") flags.disjoint = true;
    else if (!tok.empty())
      throw std::invalid_argument(
          "ablation: unknown variant '" + tok +
          "' (expected det-critic, no-div, no-sta or disjoint)");
  }
  return flags;
}

EnvConfig ExperimentConfig::env_config() const {
  EnvConfig e;
  e.num_users = get_int("num_users");
  e.num_items = get_int("num_items");
  e.embed_dim = get_int("embed_dim");
  e.static_dim = get_int("static_dim");
  e.heterogeneity = get_double("heterogeneity");
  e.list_size = get_int("list_size");
  e.history_window = get_int("history_window");
  e.max_depth = get_int("max_depth");
  e.initial_temper = get_double("initial_temper");
  e.history_decay = get_double("history_decay");
  e.num_categories = get_int("num_categories");
  e.validate();
  return e;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.total_steps = get_long("steps");
  t.batch_size = get_int("batch_size");
  t.gamma = get_double("gamma");
  t.n_quantiles = get_int("n_quantiles");
  t.n_target_quantiles = get_int("n_target_quantiles");
  t.k_actor = get_int("k_actor");
  t.kappa = get_double("kappa");
  t.actor_lr = get_double("actor_lr");
  t.critic_lr = get_double("critic_lr");
  t.target_update = get_double("target_update");
  t.lambda = get_double("lambda");
  t.noise = get_double("noise");
  t.eval_interval = get_long("eval_interval");
  t.eval_episodes = get_int("eval_episodes");
  t.replay_capacity = static_cast<std::size_t>(get_long("replay_capacity"));
  t.seed = static_cast<std::uint64_t>(get_long("seed"));
  t.pop.m = get_int("m");
  t.pop.alphas = get_double_list("alphas");
  if (static_cast<int>(t.pop.alphas.size()) != t.pop.m) t.pop.alphas.clear();  // {1/m..1}
  t.pop.beta = get_double("beta");
  t.pop.decay_horizon = get_long("decay_horizon");
  t.pop.kernel_scale = get_double("kernel_scale");
  t.pop.jitter = get_double("jitter");
  t.pop.embed_batch = get_int("embed_batch");
  t.actor_hidden = get_int_list("actor_hidden");
  t.critic.trunk_hidden = get_int_list("critic_trunk_hidden");
  t.critic.feature_dim = get_int("critic_feature_dim");
  t.critic.head_hidden = get_int("critic_head_hidden");
  t.ablation = parse_ablation(get("ablation"));
  t.ddpg_baseline = (get("algo") == "ddpg");
  if (!t.ddpg_baseline && get("algo") != "uoep")
    throw std::invalid_argument("config: algo must be 'uoep' or 'ddpg'");
  t.group_alpha = get_double("group_alpha");
  return t;
}

SimEnv ExperimentConfig::build_env() const {
  const std::string env = get("env");
  const auto ecfg = env_config();
  const std::uint64_t env_seed = derive_seed(static_cast<std::uint64_t>(get_long("seed")), 7);
  if (env == "synthetic") {
    if (has("population")) return SimEnv::load_population(get("population"), ecfg);
    return SimEnv::synthetic(ecfg, env_seed);
  }
  if (env.rfind("csv:", 0) == 0) {
    FitOptions opts;
    opts.seed = env_seed;
    return SimEnv::from_interaction_log(env.substr(4), ecfg, opts);
  }
  throw std::invalid_argument("config: env must be 'synthetic' or 'csv:<path>'");
}

std::string ExperimentConfig::snapshot() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace qpop
