#pragma once

#include <map>
#include <string>
#include <vector>

#include "qpop/env.hpp"
#include "qpop/trainer.hpp"

namespace qpop {

// Flat key = value experiment configuration: file values first, command-line
// overrides on top. Unknown keys are rejected; the resolved map is
// snapshotted verbatim into every run directory.
class ExperimentConfig {
 public:
  ExperimentConfig();

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  bool has(const std::string& key) const;
  long get_long(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  EnvConfig env_config() const;
  TrainConfig train_config() const;

  // Builds the environment named by the `env` key (synthetic, csv:<path>)
  // honoring an optional `population` checkpoint.
  SimEnv build_env() const;

  std::string snapshot() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Parses the --ablation flag value ("det-critic", "no-div", "no-sta",
// "disjoint", comma-separable for the removed-both variant).
AblationFlags parse_ablation(const std::string& value);

}  // namespace qpop
