#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace qpop {

struct EnvConfig {
  int num_users = 200;
  int num_items = 300;
  int embed_dim = 16;
  int static_dim = 4;
  double heterogeneity = 1.0;
  int list_size = 10;
  int history_window = 10;
  int max_depth = 20;
  double initial_temper = 10.0;
  double history_decay = 0.8;  // recency weight per step of age
  int num_categories = 10;

  void validate() const;
};

struct UserProfile {
  int user_id = 0;
  std::vector<double> latent;
  double activity_bias = 0.0;
  std::vector<double> statics;
};

struct ItemCatalog {
  int num_items = 0;
  int dim = 0;
  std::vector<double> embeddings;  // row-major num_items x dim
  std::vector<int> category;

  std::span<const double> item(int id) const {
    return {embeddings.data() + static_cast<std::size_t>(id) * dim,
            static_cast<std::size_t>(dim)};
  }
};

struct SessionState {
  int user_id = 0;
  std::vector<int> history;  // clicked item ids, most recent last
  double temper = 0.0;
  int depth = 0;
  bool done = false;
};

struct StepOutcome {
  std::vector<int> exposed;
  std::vector<std::uint8_t> feedback;
  double reward = 0.0;
  SessionState next;
};

// History block: recency-weighted mean of clicked item embeddings, then the
// user's static features, then depth and temper normalized to [0, 1].
std::vector<double> encode_state_vec(const SessionState& state, const ItemCatalog& catalog,
                                     std::span<const double> statics, const EnvConfig& cfg);

// One row of the offline interaction log.
struct LogRecord {
  int user_id = 0;
  int item_id = 0;
  int label = 0;
  long long timestamp = 0;
  std::vector<double> feats;
};

struct InteractionLog {
  std::vector<LogRecord> records;
  int num_feats = 0;
};

InteractionLog parse_interaction_log(const std::string& path, std::size_t min_rows = 50);

// Logistic response model fitted from an interaction log: click probability
// sigmoid(u . v + b_u) with learned user/item embeddings.
struct FittedResponse {
  int embed_dim = 0;
  std::vector<int> user_ids;  // original ids, dense row order
  std::vector<int> item_ids;
  std::vector<double> user_emb;   // num_users x dim
  std::vector<double> item_emb;   // num_items x dim
  std::vector<double> user_bias;  // num_users
  std::vector<std::vector<double>> user_statics;
  double train_log_loss = 0.0;

  double click_logit(std::size_t user_row, std::size_t item_row) const;
};

struct FitOptions {
  int epochs = 40;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

FittedResponse fit_response_model(const InteractionLog& log, int embed_dim,
                                  const FitOptions& opts);

// Session-based recommendation world: a user population with heterogeneous
// activity, a ground-truth (or fitted) click model, and the temper/depth
// session mechanics.
class SimEnv {
 public:
  static SimEnv synthetic(const EnvConfig& cfg, std::uint64_t seed);
  static SimEnv from_interaction_log(const std::string& path, const EnvConfig& cfg,
                                     const FitOptions& opts);
  static SimEnv from_fitted(const FittedResponse& fitted, const EnvConfig& cfg);

  SessionState new_session(int user_id) const;
  int sample_user(std::mt19937_64& rng) const;

  // Samples feedback for a distinct-item list, computes the mean click
  // reward, and advances temper/depth/history. Rejects finished sessions.
  StepOutcome respond(const SessionState& state, std::span<const int> list,
                      std::mt19937_64& rng) const;

  std::vector<double> encode_state(const SessionState& state) const;

  double click_prob(int user_id, int item_id) const;

  int state_dim() const;
  int action_dim() const { return catalog_.dim; }
  int num_users() const { return static_cast<int>(users_.size()); }
  const EnvConfig& config() const { return cfg_; }
  const ItemCatalog& catalog() const { return catalog_; }
  const std::vector<UserProfile>& users() const { return users_; }

  // Users ranked by ground-truth mean click probability; bottom alpha share.
  std::vector<int> bottom_activity_users(double alpha) const;

  // Restricts sample_user to the given subset (evaluation and rollouts).
  void restrict_users(std::vector<int> user_ids);

  void save_population(const std::string& path) const;
  static SimEnv load_population(const std::string& path, const EnvConfig& cfg);

 private:
  EnvConfig cfg_;
  std::vector<UserProfile> users_;
  ItemCatalog catalog_;
  std::vector<int> eligible_users_;
};

}  // namespace qpop
