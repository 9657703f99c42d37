#include "qpop/env.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "qpop/util.hpp"

namespace qpop {

void EnvConfig::validate() const {
  if (num_users < 1 || num_items < 1) throw std::invalid_argument("env: need users and items");
  if (num_items < list_size) throw std::invalid_argument("env: catalog smaller than list size");
  if (embed_dim < 1 || list_size < 1 || history_window < 1 || max_depth < 1)
    throw std::invalid_argument("env: dimensions must be positive");
  if (static_dim < 0 || num_categories < 1)
    throw std::invalid_argument("env: bad static_dim or num_categories");
  if (heterogeneity < 0.0) throw std::invalid_argument("env: heterogeneity must be >= 0");
  if (initial_temper <= 0.0) throw std::invalid_argument("env: initial temper must be positive");
  if (history_decay < 0.0 || history_decay > 1.0)
    throw std::invalid_argument("env: history_decay must lie in [0, 1]");
}

SimEnv SimEnv::synthetic(const EnvConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SimEnv env;
  env.cfg_ = cfg;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  env.catalog_.num_items = cfg.num_items;
  env.catalog_.dim = cfg.embed_dim;
  env.catalog_.embeddings.resize(static_cast<std::size_t>(cfg.num_items) * cfg.embed_dim);
  for (double& x : env.catalog_.embeddings) x = gauss(rng);
  env.catalog_.category.resize(cfg.num_items);
  std::uniform_int_distribution<int> cat(0, cfg.num_categories - 1);
  for (int& c : env.catalog_.category) c = cat(rng);

  // Latent scale chosen so user-item affinities u.v have sd ~= 2: strong
  // per-user item differentiation without saturating the sigmoid everywhere.
  const double latent_sd = 2.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  env.users_.resize(cfg.num_users);
  for (int uid = 0; uid < cfg.num_users; ++uid) {
    UserProfile& u = env.users_[uid];
    u.user_id = uid;
    u.latent.resize(cfg.embed_dim);
    for (double& x : u.latent) x = latent_sd * gauss(rng);
    double e = 0.0;
    if (cfg.heterogeneity > 0.0) {
      std::exponential_distribution<double> expo(1.0 / cfg.heterogeneity);
      e = expo(rng);
    }
    u.activity_bias = -softplus(e);
    // Observable taste proxy: a scaled slice of the latent plus noise.
    u.statics.resize(cfg.static_dim);
    for (int k = 0; k < cfg.static_dim; ++k) {
      const double base = (k < cfg.embed_dim) ? u.latent[k] / latent_sd : 0.0;
      u.statics[k] = base + 0.1 * gauss(rng);
    }
  }
  env.eligible_users_.resize(cfg.num_users);
  std::iota(env.eligible_users_.begin(), env.eligible_users_.end(), 0);
  return env;
}

SessionState SimEnv::new_session(int user_id) const {
  if (user_id < 0 || user_id >= num_users())
    throw std::invalid_argument("new_session: unknown user");
  SessionState s;
  s.user_id = user_id;
  s.temper = cfg_.initial_temper;
  return s;
}

int SimEnv::sample_user(std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, eligible_users_.size() - 1);
  return eligible_users_[pick(rng)];
}

double SimEnv::click_prob(int user_id, int item_id) const {
  const UserProfile& u = users_[static_cast<std::size_t>(user_id)];
  return sigmoid(dot(u.latent, catalog_.item(item_id)) + u.activity_bias);
}

StepOutcome SimEnv::respond(const SessionState& state, std::span<const int> list,
                            std::mt19937_64& rng) const {
  if (state.done) throw std::logic_error("respond: session already finished");
  if (static_cast<int>(list.size()) != cfg_.list_size)
    throw std::invalid_argument("respond: list must have exactly " +
                                std::to_string(cfg_.list_size) + " items");
  std::unordered_set<int> seen;
  for (int id : list) {
    if (id < 0 || id >= catalog_.num_items)
      throw std::invalid_argument("respond: item id out of range");
    if (!seen.insert(id).second) throw std::invalid_argument("respond: duplicate item in list");
  }

  StepOutcome out;
  out.exposed.assign(list.begin(), list.end());
  out.feedback.resize(list.size());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int clicks = 0;
  double reward = 0.0;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const bool clicked = u01(rng) < click_prob(state.user_id, list[k]);
    out.feedback[k] = clicked ? 1 : 0;
    clicks += clicked ? 1 : 0;
    reward += clicked ? 1.0 : -0.2;
  }
  out.reward = reward / static_cast<double>(list.size());

  SessionState next = state;
  for (std::size_t k = 0; k < list.size(); ++k)
    if (out.feedback[k]) next.history.push_back(list[k]);
  const int window = cfg_.history_window;
  if (static_cast<int>(next.history.size()) > window)
    next.history.erase(next.history.begin(),
                       next.history.end() - window);
  const double click_fraction = static_cast<double>(clicks) / static_cast<double>(list.size());
  next.temper -= 0.2 + (1.0 - click_fraction);
  next.depth += 1;
  next.done = (next.temper <= 0.0) || (next.depth >= cfg_.max_depth);
  out.next = std::move(next);
  return out;
}

std::vector<double> encode_state_vec(const SessionState& state, const ItemCatalog& catalog,
                                     std::span<const double> statics, const EnvConfig& cfg) {
  std::vector<double> enc;
  enc.reserve(static_cast<std::size_t>(catalog.dim) + statics.size() + 2);
  std::vector<double> hist(catalog.dim, 0.0);
  if (!state.history.empty()) {
    double wsum = 0.0;
    const std::size_t n = state.history.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double age = static_cast<double>(n - 1 - i);  // newest last
      const double w = std::pow(cfg.history_decay, age);
      auto emb = catalog.item(state.history[i]);
      for (int k = 0; k < catalog.dim; ++k) hist[static_cast<std::size_t>(k)] += w * emb[k];
      wsum += w;
    }
    for (double& x : hist) x /= wsum;
  }
  enc.insert(enc.end(), hist.begin(), hist.end());
  enc.insert(enc.end(), statics.begin(), statics.end());
  enc.push_back(static_cast<double>(state.depth) / static_cast<double>(cfg.max_depth));
  enc.push_back(state.temper / cfg.initial_temper);
  return enc;
}

std::vector<double> SimEnv::encode_state(const SessionState& state) const {
  return encode_state_vec(state, catalog_, users_[static_cast<std::size_t>(state.user_id)].statics,
                          cfg_);
}

int SimEnv::state_dim() const { return catalog_.dim + cfg_.static_dim + 2; }

std::vector<int> SimEnv::bottom_activity_users(double alpha) const {
  if (alpha <= 0.0 || alpha > 1.0)
    throw std::invalid_argument("bottom_activity_users: alpha must lie in (0, 1]");
  std::vector<std::pair<double, int>> ranked;
  ranked.reserve(users_.size());
  for (const auto& u : users_) {
    double mean_p = 0.0;
    for (int i = 0; i < catalog_.num_items; ++i) mean_p += click_prob(u.user_id, i);
    ranked.emplace_back(mean_p / catalog_.num_items, u.user_id);
  }
  std::sort(ranked.begin(), ranked.end());
  const std::size_t k = static_cast<std::size_t>(
      std::ceil(alpha * static_cast<double>(users_.size())));
  std::vector<int> ids;
  ids.reserve(k);
  for (std::size_t i = 0; i < k; ++i) ids.push_back(ranked[i].second);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void SimEnv::restrict_users(std::vector<int> user_ids) {
  if (user_ids.empty()) throw std::invalid_argument("restrict_users: empty subset");
  for (int id : user_ids)
    if (id < 0 || id >= num_users()) throw std::invalid_argument("restrict_users: bad user id");
  eligible_users_ = std::move(user_ids);
}

// ---------------------------------------------------------------------------
// Interaction log ingestion

static std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

InteractionLog parse_interaction_log(const std::string& path, std::size_t min_rows) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("interaction log: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("interaction log: empty file " + path);

  auto header = split_csv_line(line);
  const std::vector<std::string> required = {"user_id", "item_id", "label", "timestamp"};
  if (header.size() < required.size())
    throw std::runtime_error("interaction log: malformed header");
  for (std::size_t i = 0; i < required.size(); ++i)
    if (header[i] != required[i])
      throw std::runtime_error("interaction log: header column " + std::to_string(i) +
                               " must be '" + required[i] + "', got '" + header[i] + "'");
  const int num_feats = static_cast<int>(header.size() - required.size());

  InteractionLog log;
  log.num_feats = num_feats;
  std::vector<std::string> bad_lines;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    try {
      if (fields.size() != header.size()) throw std::runtime_error("field count");
      LogRecord rec;
      rec.user_id = std::stoi(fields[0]);
      rec.item_id = std::stoi(fields[1]);
      rec.label = std::stoi(fields[2]);
      rec.timestamp = std::stoll(fields[3]);
      if (rec.label != 0 && rec.label != 1) throw std::runtime_error("label not in {0,1}");
      rec.feats.resize(static_cast<std::size_t>(num_feats));
      for (int k = 0; k < num_feats; ++k)
        rec.feats[static_cast<std::size_t>(k)] = std::stod(fields[4 + static_cast<std::size_t>(k)]);
      log.records.push_back(std::move(rec));
    } catch (const std::exception&) {
      bad_lines.push_back(std::to_string(line_no));
    }
  }
  if (!bad_lines.empty()) {
    std::string msg = "interaction log: malformed rows at lines ";
    for (std::size_t i = 0; i < bad_lines.size() && i < 20; ++i) {
      if (i) msg += ", ";
      msg += bad_lines[i];
    }
    if (bad_lines.size() > 20) msg += ", ...";
    throw std::runtime_error(msg);
  }
  if (log.records.size() < min_rows)
    throw std::runtime_error("interaction log: only " + std::to_string(log.records.size()) +
                             " rows, need at least " + std::to_string(min_rows));
  std::stable_sort(log.records.begin(), log.records.end(),
                   [](const LogRecord& a, const LogRecord& b) { return a.timestamp < b.timestamp; });
  return log;
}

double FittedResponse::click_logit(std::size_t user_row, std::size_t item_row) const {
  std::span<const double> u(user_emb.data() + user_row * static_cast<std::size_t>(embed_dim),
                            static_cast<std::size_t>(embed_dim));
  std::span<const double> v(item_emb.data() + item_row * static_cast<std::size_t>(embed_dim),
                            static_cast<std::size_t>(embed_dim));
  return dot(u, v) + user_bias[user_row];
}

FittedResponse fit_response_model(const InteractionLog& log, int embed_dim,
                                  const FitOptions& opts) {
  if (log.records.empty()) throw std::invalid_argument("fit_response_model: empty log");
  if (embed_dim < 1) throw std::invalid_argument("fit_response_model: embed_dim must be >= 1");

  FittedResponse model;
  model.embed_dim = embed_dim;
  std::unordered_map<int, std::size_t> user_row, item_row;
  for (const auto& rec : log.records) {
    if (user_row.emplace(rec.user_id, model.user_ids.size()).second)
      model.user_ids.push_back(rec.user_id);
    if (item_row.emplace(rec.item_id, model.item_ids.size()).second)
      model.item_ids.push_back(rec.item_id);
  }
  const std::size_t nu = model.user_ids.size(), ni = model.item_ids.size();
  const std::size_t d = static_cast<std::size_t>(embed_dim);

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 0.1);
  model.user_emb.resize(nu * d);
  model.item_emb.resize(ni * d);
  model.user_bias.assign(nu, 0.0);
  for (double& x : model.user_emb) x = gauss(rng);
  for (double& x : model.item_emb) x = gauss(rng);

  // Plain SGD over shuffled records.
  std::vector<std::size_t> order(log.records.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const auto& rec = log.records[idx];
      const std::size_t ur = user_row[rec.user_id], ir = item_row[rec.item_id];
      double* u = model.user_emb.data() + ur * d;
      double* v = model.item_emb.data() + ir * d;
      double logit = model.user_bias[ur];
      for (std::size_t k = 0; k < d; ++k) logit += u[k] * v[k];
      const double err = sigmoid(logit) - static_cast<double>(rec.label);
      for (std::size_t k = 0; k < d; ++k) {
        const double gu = err * v[k], gv = err * u[k];
        u[k] -= opts.lr * gu;
        v[k] -= opts.lr * gv;
      }
      model.user_bias[ur] -= opts.lr * err;
    }
  }

  double ll = 0.0;
  for (const auto& rec : log.records) {
    const double logit = model.click_logit(user_row[rec.user_id], item_row[rec.item_id]);
    ll += bce_from_logit(logit, static_cast<double>(rec.label));
  }
  model.train_log_loss = ll / static_cast<double>(log.records.size());

  model.user_statics.assign(nu, std::vector<double>(static_cast<std::size_t>(log.num_feats), 0.0));
  std::vector<int> counts(nu, 0);
  for (const auto& rec : log.records) {
    const std::size_t ur = user_row[rec.user_id];
    for (int k = 0; k < log.num_feats; ++k)
      model.user_statics[ur][static_cast<std::size_t>(k)] += rec.feats[static_cast<std::size_t>(k)];
    counts[ur] += 1;
  }
  for (std::size_t u = 0; u < nu; ++u)
    for (double& x : model.user_statics[u]) x /= std::max(1, counts[u]);
  return model;
}

SimEnv SimEnv::from_fitted(const FittedResponse& fitted, const EnvConfig& cfg) {
  EnvConfig adjusted = cfg;
  adjusted.num_users = static_cast<int>(fitted.user_ids.size());
  adjusted.num_items = static_cast<int>(fitted.item_ids.size());
  adjusted.embed_dim = fitted.embed_dim;
  adjusted.static_dim =
      fitted.user_statics.empty() ? 0 : static_cast<int>(fitted.user_statics.front().size());
  adjusted.validate();

  SimEnv env;
  env.cfg_ = adjusted;
  env.catalog_.num_items = adjusted.num_items;
  env.catalog_.dim = adjusted.embed_dim;
  env.catalog_.embeddings = fitted.item_emb;
  env.catalog_.category.resize(adjusted.num_items);
  for (int i = 0; i < adjusted.num_items; ++i)
    env.catalog_.category[static_cast<std::size_t>(i)] =
        fitted.item_ids[static_cast<std::size_t>(i)] % adjusted.num_categories;

  env.users_.resize(adjusted.num_users);
  const std::size_t d = static_cast<std::size_t>(fitted.embed_dim);
  for (int uid = 0; uid < adjusted.num_users; ++uid) {
    UserProfile& u = env.users_[static_cast<std::size_t>(uid)];
    u.user_id = uid;
    u.latent.assign(fitted.user_emb.begin() + static_cast<std::ptrdiff_t>(uid * d),
                    fitted.user_emb.begin() + static_cast<std::ptrdiff_t>((uid + 1) * d));
    u.activity_bias = fitted.user_bias[static_cast<std::size_t>(uid)];
    u.statics = fitted.user_statics[static_cast<std::size_t>(uid)];
  }
  env.eligible_users_.resize(adjusted.num_users);
  std::iota(env.eligible_users_.begin(), env.eligible_users_.end(), 0);
  return env;
}

SimEnv SimEnv::from_interaction_log(const std::string& path, const EnvConfig& cfg,
                                    const FitOptions& opts) {
  auto log = parse_interaction_log(path);
  auto fitted = fit_response_model(log, cfg.embed_dim, opts);
  return from_fitted(fitted, cfg);
}

// ---------------------------------------------------------------------------
// Population checkpoint

static_assert(std::endian::native == std::endian::little);

template <typename T>
static void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
static T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("population checkpoint: truncated");
  return v;
}

void SimEnv::save_population(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_population: cannot open " + path);
  const char magic[8] = {'Q', 'P', 'O', 'P', 'E', 'N', 'V', '1'};
  out.write(magic, 8);
  write_pod<std::int64_t>(out, num_users());
  write_pod<std::int64_t>(out, catalog_.num_items);
  write_pod<std::int64_t>(out, catalog_.dim);
  write_pod<std::int64_t>(out, cfg_.static_dim);
  for (const auto& u : users_) {
    out.write(reinterpret_cast<const char*>(u.latent.data()),
              static_cast<std::streamsize>(u.latent.size() * sizeof(double)));
    write_pod<double>(out, u.activity_bias);
    out.write(reinterpret_cast<const char*>(u.statics.data()),
              static_cast<std::streamsize>(u.statics.size() * sizeof(double)));
  }
  out.write(reinterpret_cast<const char*>(catalog_.embeddings.data()),
            static_cast<std::streamsize>(catalog_.embeddings.size() * sizeof(double)));
  for (int c : catalog_.category) write_pod<std::int32_t>(out, c);
}

SimEnv SimEnv::load_population(const std::string& path, const EnvConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_population: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "QPOPENV1")
    throw std::runtime_error("load_population: bad magic");
  EnvConfig adjusted = cfg;
  adjusted.num_users = static_cast<int>(read_pod<std::int64_t>(in));
  adjusted.num_items = static_cast<int>(read_pod<std::int64_t>(in));
  adjusted.embed_dim = static_cast<int>(read_pod<std::int64_t>(in));
  adjusted.static_dim = static_cast<int>(read_pod<std::int64_t>(in));
  adjusted.validate();

  SimEnv env;
  env.cfg_ = adjusted;
  env.users_.resize(adjusted.num_users);
  for (int uid = 0; uid < adjusted.num_users; ++uid) {
    UserProfile& u = env.users_[static_cast<std::size_t>(uid)];
    u.user_id = uid;
    u.latent.resize(adjusted.embed_dim);
    in.read(reinterpret_cast<char*>(u.latent.data()),
            static_cast<std::streamsize>(u.latent.size() * sizeof(double)));
    u.activity_bias = read_pod<double>(in);
    u.statics.resize(adjusted.static_dim);
    in.read(reinterpret_cast<char*>(u.statics.data()),
            static_cast<std::streamsize>(u.statics.size() * sizeof(double)));
  }
  env.catalog_.num_items = adjusted.num_items;
  env.catalog_.dim = adjusted.embed_dim;
  env.catalog_.embeddings.resize(static_cast<std::size_t>(adjusted.num_items) *
                                 adjusted.embed_dim);
  in.read(reinterpret_cast<char*>(env.catalog_.embeddings.data()),
          static_cast<std::streamsize>(env.catalog_.embeddings.size() * sizeof(double)));
  env.catalog_.category.resize(adjusted.num_items);
  for (int& c : env.catalog_.category) c = read_pod<std::int32_t>(in);
  if (!in) throw std::runtime_error("load_population: truncated");
  env.eligible_users_.resize(adjusted.num_users);
  std::iota(env.eligible_users_.begin(), env.eligible_users_.end(), 0);
  return env;
}

}  // namespace qpop
