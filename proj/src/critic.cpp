#include "qpop/critic.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "qpop/parallel.hpp"
#include "qpop/util.hpp"

namespace qpop {

std::vector<double> td_error_matrix(double r, double gamma, std::span<const double> z_target,
                                    std::span<const double> z_online, bool done) {
  if (gamma < 0.0 || gamma >= 1.0)
    throw std::invalid_argument("td_error_matrix: gamma must lie in [0, 1)");
  const std::size_t n = z_online.size(), np = z_target.size();
  std::vector<double> delta(n * np);
  const double cont = done ? 0.0 : gamma;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < np; ++j) delta[i * np + j] = r + cont * z_target[j] - z_online[i];
  return delta;
}

double quantile_huber(double delta, double tau, double kappa) {
  if (kappa <= 0.0) throw std::invalid_argument("quantile_huber: kappa must be positive");
  if (tau <= 0.0 || tau >= 1.0)
    throw std::invalid_argument("quantile_huber: tau must lie in (0, 1)");
  const double weight = std::abs(tau - (delta < 0.0 ? 1.0 : 0.0));
  const double ad = std::abs(delta);
  const double huber = (ad <= kappa) ? delta * delta / (2.0 * kappa) : ad - kappa / 2.0;
  return weight * huber;
}

double quantile_huber_ddelta(double delta, double tau, double kappa) {
  if (kappa <= 0.0) throw std::invalid_argument("quantile_huber: kappa must be positive");
  const double weight = std::abs(tau - (delta < 0.0 ? 1.0 : 0.0));
  const double ad = std::abs(delta);
  const double dh = (ad <= kappa) ? delta / kappa : (delta > 0.0 ? 1.0 : -1.0);
  return weight * dh;
}

double mc_quantile_mean(const std::function<double(double)>& quantile_fn, double lo, double hi,
                        int K, std::mt19937_64& rng) {
  if (K < 1) throw std::invalid_argument("mc_quantile_mean: K must be >= 1");
  if (!(lo >= 0.0 && hi <= 1.0 && lo < hi))
    throw std::invalid_argument("mc_quantile_mean: need 0 <= lo < hi <= 1");
  double s = 0.0;
  for (int k = 0; k < K; ++k) s += quantile_fn(uniform_open(rng, lo, hi));
  return s / static_cast<double>(K);
}

QuantileCritic::QuantileCritic(int state_dim, int action_dim, const CriticConfig& cfg, double lr,
                               std::uint64_t seed)
    : cfg_(cfg), state_dim_(state_dim), action_dim_(action_dim) {
  if (state_dim < 1 || action_dim < 1)
    throw std::invalid_argument("QuantileCritic: bad input dims");
  if (cfg.feature_dim < 1 || cfg.head_hidden < 1)
    throw std::invalid_argument("QuantileCritic: bad feature/head dims");

  std::vector<int> trunk_dims{state_dim + action_dim};
  trunk_dims.insert(trunk_dims.end(), cfg.trunk_hidden.begin(), cfg.trunk_hidden.end());
  trunk_dims.push_back(cfg.feature_dim);
  trunk_spec_ = MlpSpec::make(trunk_dims, derive_seed(seed, 1));
  embed_spec_ = MlpSpec::make({1, cfg.feature_dim}, derive_seed(seed, 2), Act::relu, Act::relu);
  head_spec_ = MlpSpec::make({cfg.feature_dim, cfg.head_hidden, 1}, derive_seed(seed, 3));

  trunk_ = init_params(trunk_spec_);
  embed_ = init_params(embed_spec_);
  head_ = init_params(head_spec_);
  trunk_t_ = trunk_;
  embed_t_ = embed_;
  head_t_ = head_;

  adam_trunk_ = make_adam(trunk_.size(), lr);
  adam_embed_ = make_adam(embed_.size(), lr);
  adam_head_ = make_adam(head_.size(), lr);
}

std::size_t QuantileCritic::grad_size() const {
  return trunk_.size() + embed_.size() + head_.size();
}

void QuantileCritic::refresh_versions() {
  trunk_.version += 1;
  embed_.version += 1;
  head_.version += 1;
}

static void check_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0))
    throw std::invalid_argument("critic: tau must lie strictly inside (0, 1)");
}

double QuantileCritic::z_one(std::span<const double> x, double tau, bool use_target) const {
  const ParamSet& tp = use_target ? trunk_t_ : trunk_;
  const ParamSet& ep = use_target ? embed_t_ : embed_;
  const ParamSet& hp = use_target ? head_t_ : head_;
  auto feat = mlp_forward(trunk_spec_, tp, x);
  if (cfg_.deterministic) return mlp_forward(head_spec_, hp, feat)[0];
  check_tau(tau);
  const double tau_in[1] = {tau};
  auto e = mlp_forward(embed_spec_, ep, tau_in);
  for (int k = 0; k < cfg_.feature_dim; ++k) feat[static_cast<std::size_t>(k)] *= e[static_cast<std::size_t>(k)];
  return mlp_forward(head_spec_, hp, feat)[0];
}

std::vector<double> QuantileCritic::z_values(std::span<const double> s, std::span<const double> a,
                                             std::span<const double> taus,
                                             bool use_target) const {
  if (static_cast<int>(s.size()) != state_dim_ || static_cast<int>(a.size()) != action_dim_)
    throw std::invalid_argument("critic: state/action dimension mismatch");
  std::vector<double> x;
  x.reserve(s.size() + a.size());
  x.insert(x.end(), s.begin(), s.end());
  x.insert(x.end(), a.begin(), a.end());

  const ParamSet& tp = use_target ? trunk_t_ : trunk_;
  const ParamSet& ep = use_target ? embed_t_ : embed_;
  const ParamSet& hp = use_target ? head_t_ : head_;
  auto feat = mlp_forward(trunk_spec_, tp, x);

  std::vector<double> out(taus.size());
  if (cfg_.deterministic) {
    const double q = mlp_forward(head_spec_, hp, feat)[0];
    for (auto& z : out) z = q;
    return out;
  }
  std::vector<double> mixed(static_cast<std::size_t>(cfg_.feature_dim));
  for (std::size_t i = 0; i < taus.size(); ++i) {
    check_tau(taus[i]);
    const double tau_in[1] = {taus[i]};
    auto e = mlp_forward(embed_spec_, ep, tau_in);
    for (int k = 0; k < cfg_.feature_dim; ++k)
      mixed[static_cast<std::size_t>(k)] = feat[static_cast<std::size_t>(k)] * e[static_cast<std::size_t>(k)];
    out[i] = mlp_forward(head_spec_, hp, mixed)[0];
  }
  return out;
}

double QuantileCritic::z_value(std::span<const double> s, std::span<const double> a, double tau,
                               bool use_target) const {
  const double t[1] = {tau};
  return z_values(s, a, std::span<const double>(t, 1), use_target)[0];
}

namespace {

// Per-sample forward/backward state used inside the batched loss kernels.
struct SampleWork {
  std::vector<double> x, x_next;
  Tape trunk_tape;
  std::vector<double> feat;
  std::vector<Tape> embed_tapes, head_tapes;
  std::vector<std::vector<double>> embeds;
  std::vector<double> z_online, z_target;
};

}  // namespace

QuantileCritic::LossGrad QuantileCritic::loss_on_taus(std::span<const Sample> batch,
                                                      std::span<const double> taus, int N,
                                                      std::span<const double> taus_next,
                                                      int n_target, double kappa,
                                                      double gamma) const {
  if (batch.empty()) throw std::invalid_argument("critic loss: empty batch");
  if (N < 1 || n_target < 1) throw std::invalid_argument("critic loss: N and N' must be >= 1");
  if (gamma < 0.0 || gamma >= 1.0)
    throw std::invalid_argument("critic loss: gamma must lie in [0, 1)");
  const std::size_t B = batch.size();
  if (taus.size() != B * static_cast<std::size_t>(N) ||
      taus_next.size() != B * static_cast<std::size_t>(n_target))
    throw std::invalid_argument("critic loss: tau grid shape mismatch");

  const std::size_t trunk_n = trunk_.size(), embed_n = embed_.size(), head_n = head_.size();
  LossGrad result;
  result.grad.assign(grad_size(), 0.0);

  const double inv_pairs = 1.0 / (static_cast<double>(N) * static_cast<double>(n_target));
  const bool det = cfg_.deterministic;
  const int n_online = det ? 1 : N;
  const int n_tgt = det ? 1 : n_target;
  const int fdim = cfg_.feature_dim;

  double loss_sum = par::chunked_accumulate(
      B, result.grad, [&](std::size_t b, std::span<double> acc) -> double {
        const Sample& smp = batch[b];
        SampleWork w;
        w.x.reserve(smp.s.size() + smp.a.size());
        w.x.insert(w.x.end(), smp.s.begin(), smp.s.end());
        w.x.insert(w.x.end(), smp.a.begin(), smp.a.end());
        w.x_next.reserve(smp.s_next.size() + smp.a_next.size());
        w.x_next.insert(w.x_next.end(), smp.s_next.begin(), smp.s_next.end());
        w.x_next.insert(w.x_next.end(), smp.a_next.begin(), smp.a_next.end());

        // target values (no gradient)
        auto feat_t = mlp_forward(trunk_spec_, trunk_t_, w.x_next);
        w.z_target.resize(static_cast<std::size_t>(n_tgt));
        if (det) {
          w.z_target[0] = mlp_forward(head_spec_, head_t_, feat_t)[0];
        } else {
          std::vector<double> mixed(static_cast<std::size_t>(fdim));
          for (int j = 0; j < n_tgt; ++j) {
            const double tau = taus_next[b * static_cast<std::size_t>(n_target) +
                                         static_cast<std::size_t>(j)];
            check_tau(tau);
            const double tin[1] = {tau};
            auto e = mlp_forward(embed_spec_, embed_t_, tin);
            for (int k = 0; k < fdim; ++k)
              mixed[static_cast<std::size_t>(k)] =
                  feat_t[static_cast<std::size_t>(k)] * e[static_cast<std::size_t>(k)];
            w.z_target[static_cast<std::size_t>(j)] = mlp_forward(head_spec_, head_t_, mixed)[0];
          }
        }

        // online values with tapes
        mlp_forward_into(trunk_spec_, trunk_, w.x, w.trunk_tape);
        w.feat = w.trunk_tape.post.back();
        w.z_online.resize(static_cast<std::size_t>(n_online));
        w.embed_tapes.resize(static_cast<std::size_t>(n_online));
        w.head_tapes.resize(static_cast<std::size_t>(n_online));
        w.embeds.resize(static_cast<std::size_t>(n_online));
        std::vector<double> mixed(static_cast<std::size_t>(fdim));
        for (int i = 0; i < n_online; ++i) {
          if (det) {
            mlp_forward_into(head_spec_, head_, w.feat, w.head_tapes[0]);
            w.z_online[0] = w.head_tapes[0].output()[0];
          } else {
            const double tau =
                taus[b * static_cast<std::size_t>(N) + static_cast<std::size_t>(i)];
            check_tau(tau);
            const double tin[1] = {tau};
            mlp_forward_into(embed_spec_, embed_, tin, w.embed_tapes[static_cast<std::size_t>(i)]);
            w.embeds[static_cast<std::size_t>(i)].assign(
                w.embed_tapes[static_cast<std::size_t>(i)].output().begin(),
                w.embed_tapes[static_cast<std::size_t>(i)].output().end());
            for (int k = 0; k < fdim; ++k)
              mixed[static_cast<std::size_t>(k)] = w.feat[static_cast<std::size_t>(k)] *
                                                   w.embeds[static_cast<std::size_t>(i)]
                                                           [static_cast<std::size_t>(k)];
            mlp_forward_into(head_spec_, head_, mixed, w.head_tapes[static_cast<std::size_t>(i)]);
            w.z_online[static_cast<std::size_t>(i)] =
                w.head_tapes[static_cast<std::size_t>(i)].output()[0];
          }
        }

        const double cont = smp.done ? 0.0 : gamma;
        double sample_loss = 0.0;
        std::span<double> trunk_acc = acc.subspan(0, trunk_n);
        std::span<double> embed_acc = acc.subspan(trunk_n, embed_n);
        std::span<double> head_acc = acc.subspan(trunk_n + embed_n, head_n);
        std::vector<double> dfeat(static_cast<std::size_t>(fdim), 0.0);

        if (det) {
          // squared TD error against the mean target
          const double delta = smp.r + cont * w.z_target[0] - w.z_online[0];
          sample_loss = delta * delta;
          const double wgt = -2.0 * delta;  // dloss/dz
          const double out_g[1] = {wgt};
          std::vector<double> dmix(static_cast<std::size_t>(fdim), 0.0);
          mlp_backward_acc(head_spec_, head_, w.head_tapes[0], out_g, head_acc, dmix);
          for (int k = 0; k < fdim; ++k) dfeat[static_cast<std::size_t>(k)] += dmix[static_cast<std::size_t>(k)];
        } else {
          std::vector<double> dmix(static_cast<std::size_t>(fdim));
          for (int i = 0; i < N; ++i) {
            const double tau =
                taus[b * static_cast<std::size_t>(N) + static_cast<std::size_t>(i)];
            double weight_i = 0.0;
            for (int j = 0; j < n_target; ++j) {
              const double delta =
                  smp.r + cont * w.z_target[static_cast<std::size_t>(j)] -
                  w.z_online[static_cast<std::size_t>(i)];
              sample_loss += quantile_huber(delta, tau, kappa) * inv_pairs;
              weight_i -= quantile_huber_ddelta(delta, tau, kappa) * inv_pairs;
            }
            const double out_g[1] = {weight_i};
            std::fill(dmix.begin(), dmix.end(), 0.0);
            mlp_backward_acc(head_spec_, head_, w.head_tapes[static_cast<std::size_t>(i)], out_g,
                             head_acc, dmix);
            // chain through the elementwise product
            std::vector<double> de(static_cast<std::size_t>(fdim));
            for (int k = 0; k < fdim; ++k) {
              dfeat[static_cast<std::size_t>(k)] +=
                  dmix[static_cast<std::size_t>(k)] *
                  w.embeds[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
              de[static_cast<std::size_t>(k)] =
                  dmix[static_cast<std::size_t>(k)] * w.feat[static_cast<std::size_t>(k)];
            }
            mlp_backward_acc(embed_spec_, embed_, w.embed_tapes[static_cast<std::size_t>(i)], de,
                             embed_acc, {});
          }
        }
        mlp_backward_acc(trunk_spec_, trunk_, w.trunk_tape, dfeat, trunk_acc, {});
        return sample_loss;
      });

  const double inv_b = 1.0 / static_cast<double>(B);
  result.loss = loss_sum * inv_b;
  for (double& g : result.grad) g *= inv_b;
  return result;
}

double QuantileCritic::loss_on_taus_ref(std::span<const Sample> batch,
                                        std::span<const double> taus, int N,
                                        std::span<const double> taus_next, int n_target,
                                        double kappa, double gamma) const {
  // Textbook form: per sample, evaluate every z through the public forward
  // path and accumulate the double sum in loop order.
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Sample& smp = batch[b];
    double sample_loss = 0.0;
    if (cfg_.deterministic) {
      const double z = z_value(smp.s, smp.a, 0.5, false);
      const double zt = z_value(smp.s_next, smp.a_next, 0.5, true);
      const double delta = smp.r + (smp.done ? 0.0 : gamma) * zt - z;
      sample_loss = delta * delta;
    } else {
      for (int i = 0; i < N; ++i) {
        const double tau = taus[b * static_cast<std::size_t>(N) + static_cast<std::size_t>(i)];
        const double z = z_value(smp.s, smp.a, tau, false);
        for (int j = 0; j < n_target; ++j) {
          const double tau_next =
              taus_next[b * static_cast<std::size_t>(n_target) + static_cast<std::size_t>(j)];
          const double zt = z_value(smp.s_next, smp.a_next, tau_next, true);
          const double delta = smp.r + (smp.done ? 0.0 : gamma) * zt - z;
          sample_loss += quantile_huber(delta, tau, kappa);
        }
      }
      sample_loss /= static_cast<double>(N) * static_cast<double>(n_target);
    }
    total += sample_loss;
  }
  return total / static_cast<double>(batch.size());
}

QuantileCritic::LossGrad QuantileCritic::sampled_loss(std::span<const Sample> batch, int N,
                                                      int n_target, double kappa, double gamma,
                                                      std::mt19937_64& rng) const {
  const std::size_t B = batch.size();
  std::vector<double> taus(B * static_cast<std::size_t>(N));
  std::vector<double> taus_next(B * static_cast<std::size_t>(n_target));
  for (double& t : taus) t = uniform_open(rng, 0.0, 1.0);
  for (double& t : taus_next) t = uniform_open(rng, 0.0, 1.0);
  return loss_on_taus(batch, taus, N, taus_next, n_target, kappa, gamma);
}

double QuantileCritic::mean_z_with_action_grad(std::span<const double> s,
                                               std::span<const double> a,
                                               std::span<const double> taus,
                                               std::span<double> da_acc) const {
  if (static_cast<int>(da_acc.size()) != action_dim_)
    throw std::invalid_argument("critic: action gradient buffer mismatch");
  std::vector<double> x;
  x.reserve(s.size() + a.size());
  x.insert(x.end(), s.begin(), s.end());
  x.insert(x.end(), a.begin(), a.end());

  Tape trunk_tape;
  mlp_forward_into(trunk_spec_, trunk_, x, trunk_tape);
  const auto feat = trunk_tape.post.back();
  const int fdim = cfg_.feature_dim;
  const std::size_t K = cfg_.deterministic ? 1 : taus.size();
  const double invK = 1.0 / static_cast<double>(K);

  double mean = 0.0;
  std::vector<double> dfeat(static_cast<std::size_t>(fdim), 0.0);
  std::vector<double> mixed(static_cast<std::size_t>(fdim));
  Tape head_tape;
  for (std::size_t i = 0; i < K; ++i) {
    if (cfg_.deterministic) {
      mlp_forward_into(head_spec_, head_, feat, head_tape);
      mean += head_tape.output()[0] * invK;
      const double out_g[1] = {invK};
      std::vector<double> dmix(static_cast<std::size_t>(fdim), 0.0);
      mlp_backward_input(head_spec_, head_, head_tape, out_g, dmix);
      for (int k = 0; k < fdim; ++k) dfeat[static_cast<std::size_t>(k)] += dmix[static_cast<std::size_t>(k)];
    } else {
      check_tau(taus[i]);
      const double tin[1] = {taus[i]};
      auto e = mlp_forward(embed_spec_, embed_, tin);
      for (int k = 0; k < fdim; ++k)
        mixed[static_cast<std::size_t>(k)] =
            feat[static_cast<std::size_t>(k)] * e[static_cast<std::size_t>(k)];
      mlp_forward_into(head_spec_, head_, mixed, head_tape);
      mean += head_tape.output()[0] * invK;
      const double out_g[1] = {invK};
      std::vector<double> dmix(static_cast<std::size_t>(fdim), 0.0);
      mlp_backward_input(head_spec_, head_, head_tape, out_g, dmix);
      for (int k = 0; k < fdim; ++k)
        dfeat[static_cast<std::size_t>(k)] +=
            dmix[static_cast<std::size_t>(k)] * e[static_cast<std::size_t>(k)];
    }
  }
  std::vector<double> dx(x.size(), 0.0);
  mlp_backward_input(trunk_spec_, trunk_, trunk_tape, dfeat, dx);
  for (int k = 0; k < action_dim_; ++k)
    da_acc[static_cast<std::size_t>(k)] += dx[static_cast<std::size_t>(state_dim_ + k)];
  return mean;
}

void QuantileCritic::apply_update(const LossGrad& g) {
  if (g.grad.size() != grad_size())
    throw std::invalid_argument("critic update: gradient size mismatch");
  const std::size_t tn = trunk_.size(), en = embed_.size();
  adam_step(adam_trunk_, trunk_, std::span<const double>(g.grad.data(), tn));
  adam_step(adam_embed_, embed_, std::span<const double>(g.grad.data() + tn, en));
  adam_step(adam_head_, head_,
            std::span<const double>(g.grad.data() + tn + en, head_.size()));
}

void QuantileCritic::soft_update_targets(double mu) {
  soft_update_inplace(trunk_t_, trunk_, mu);
  soft_update_inplace(embed_t_, embed_, mu);
  soft_update_inplace(head_t_, head_, mu);
}

void QuantileCritic::save(std::ostream& out) const {
  const char magic[8] = {'Q', 'P', 'O', 'P', 'C', 'R', 'T', '1'};
  out.write(magic, 8);
  auto write_i64 = [&](std::int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  write_i64(cfg_.deterministic ? 1 : 0);
  write_i64(state_dim_);
  write_i64(action_dim_);
  write_i64(cfg_.feature_dim);
  write_i64(static_cast<std::int64_t>(cfg_.trunk_hidden.size()));
  for (int h : cfg_.trunk_hidden) write_i64(h);
  write_i64(cfg_.head_hidden);
  for (const ParamSet* p : {&trunk_, &embed_, &head_, &trunk_t_, &embed_t_, &head_t_})
    save_params(out, *p);
}

QuantileCritic QuantileCritic::load(std::istream& in, double lr) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "QPOPCRT1")
    throw std::runtime_error("critic checkpoint: bad magic");
  auto read_i64 = [&]() {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw std::runtime_error("critic checkpoint: truncated");
    return v;
  };
  CriticConfig cfg;
  cfg.deterministic = read_i64() != 0;
  const int state_dim = static_cast<int>(read_i64());
  const int action_dim = static_cast<int>(read_i64());
  cfg.feature_dim = static_cast<int>(read_i64());
  const std::int64_t nh = read_i64();
  cfg.trunk_hidden.clear();
  for (std::int64_t i = 0; i < nh; ++i) cfg.trunk_hidden.push_back(static_cast<int>(read_i64()));
  cfg.head_hidden = static_cast<int>(read_i64());

  QuantileCritic critic(state_dim, action_dim, cfg, lr, 0);
  for (ParamSet* p : {&critic.trunk_, &critic.embed_, &critic.head_, &critic.trunk_t_,
                      &critic.embed_t_, &critic.head_t_}) {
    ParamSet loaded = load_params(in);
    if (loaded.size() != p->size())
      throw std::runtime_error("critic checkpoint: parameter size mismatch");
    p->data = std::move(loaded.data);
    p->version += 1;
  }
  return critic;
}

double cvar_estimate(const QuantileCritic& critic, std::span<const double> s,
                     std::span<const double> a, double alpha, int K, std::mt19937_64& rng) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("cvar_estimate: alpha must lie in (0, 1]");
  if (K < 1) throw std::invalid_argument("cvar_estimate: K must be >= 1");
  std::vector<double> taus(static_cast<std::size_t>(K));
  for (double& t : taus) t = uniform_open(rng, 0.0, alpha);
  auto z = critic.z_values(s, a, taus);
  return mean_of(z);
}

double interval_cvar_estimate(const QuantileCritic& critic, std::span<const double> s,
                              std::span<const double> a, double alpha_lo, double alpha_hi, int K,
                              std::mt19937_64& rng) {
  if (!(alpha_lo >= 0.0 && alpha_lo < alpha_hi && alpha_hi <= 1.0))
    throw std::invalid_argument("interval_cvar_estimate: need 0 <= lo < hi <= 1");
  if (K < 1) throw std::invalid_argument("interval_cvar_estimate: K must be >= 1");
  std::vector<double> taus(static_cast<std::size_t>(K));
  for (double& t : taus) t = uniform_open(rng, alpha_lo, alpha_hi);
  auto z = critic.z_values(s, a, taus);
  return mean_of(z);
}

double q_expectation(const QuantileCritic& critic, std::span<const double> s,
                     std::span<const double> a, int K, std::mt19937_64& rng) {
  if (K < 1) throw std::invalid_argument("q_expectation: K must be >= 1");
  std::vector<double> taus(static_cast<std::size_t>(K));
  for (double& t : taus) t = uniform_open(rng, 0.0, 1.0);
  auto z = critic.z_values(s, a, taus);
  return mean_of(z);
}

}  // namespace qpop
