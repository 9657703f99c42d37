#include "qpop/mlp.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>

#include "qpop/util.hpp"

namespace qpop {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

MlpSpec MlpSpec::make(std::vector<int> dims, std::uint64_t seed, Act hidden, Act output) {
  MlpSpec spec;
  spec.dims = std::move(dims);
  spec.seed = seed;
  if (spec.dims.size() >= 2) {
    spec.acts.assign(spec.dims.size() - 1, hidden);
    spec.acts.back() = output;
  }
  spec.validate();
  return spec;
}

void MlpSpec::validate() const {
  if (dims.size() < 2) throw std::invalid_argument("MlpSpec: need at least 2 layer dims");
  for (int d : dims)
    if (d < 1) throw std::invalid_argument("MlpSpec: all layer dims must be >= 1");
  if (acts.size() != dims.size() - 1)
    throw std::invalid_argument("MlpSpec: one activation per non-input layer required");
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    n += static_cast<std::size_t>(dims[l + 1]) * dims[l] + dims[l + 1];
  return n;
}

static std::vector<Segment> build_index(const MlpSpec& spec) {
  std::vector<Segment> index;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
    std::size_t extent =
        static_cast<std::size_t>(spec.dims[l + 1]) * spec.dims[l] + spec.dims[l + 1];
    index.push_back({offset, extent});
    offset += extent;
  }
  return index;
}

double* ParamSet::layer_weights(const MlpSpec&, std::size_t layer) {
  return data.data() + index[layer].offset;
}
const double* ParamSet::layer_weights(const MlpSpec&, std::size_t layer) const {
  return data.data() + index[layer].offset;
}
double* ParamSet::layer_biases(const MlpSpec& spec, std::size_t layer) {
  return data.data() + index[layer].offset +
         static_cast<std::size_t>(spec.dims[layer + 1]) * spec.dims[layer];
}
const double* ParamSet::layer_biases(const MlpSpec& spec, std::size_t layer) const {
  return data.data() + index[layer].offset +
         static_cast<std::size_t>(spec.dims[layer + 1]) * spec.dims[layer];
}

ParamSet zero_params(const MlpSpec& spec) {
  spec.validate();
  ParamSet p;
  p.index = build_index(spec);
  p.data.assign(spec.param_count(), 0.0);
  return p;
}

ParamSet init_params(const MlpSpec& spec) {
  ParamSet p = zero_params(spec);
  std::mt19937_64 rng(spec.seed);
  for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
    const int rows = spec.dims[l + 1], cols = spec.dims[l];
    const double lim = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> u(-lim, lim);
    double* w = p.layer_weights(spec, l);
    for (int i = 0; i < rows * cols; ++i) w[i] = u(rng);
    // biases stay zero
  }
  return p;
}

static double apply_act(Act a, double z) {
  switch (a) {
    case Act::relu: return z > 0.0 ? z : 0.0;
    case Act::tanh: return std::tanh(z);
    case Act::identity: return z;
  }
  return z;
}

static double act_grad(Act a, double pre, double post) {
  switch (a) {
    case Act::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Act::tanh: return 1.0 - post * post;
    case Act::identity: return 1.0;
  }
  return 1.0;
}

void mlp_forward_into(const MlpSpec& spec, const ParamSet& params,
                      std::span<const double> input, Tape& tape) {
  if (static_cast<int>(input.size()) != spec.in_dim())
    throw std::invalid_argument("mlp_forward: input length " + std::to_string(input.size()) +
                                " does not match first layer dim " +
                                std::to_string(spec.in_dim()));
  if (params.size() != spec.param_count())
    throw std::invalid_argument("mlp_forward: parameter count mismatch");

  const std::size_t L = spec.layer_count();
  tape.input.assign(input.begin(), input.end());
  tape.pre.resize(L);
  tape.post.resize(L);
  tape.dims = spec.dims;
  tape.params_version = params.version;

  const std::vector<double>* x = &tape.input;
  for (std::size_t l = 0; l < L; ++l) {
    const int rows = spec.dims[l + 1], cols = spec.dims[l];
    const double* w = params.layer_weights(spec, l);
    const double* b = params.layer_biases(spec, l);
    auto& z = tape.pre[l];
    auto& y = tape.post[l];
    z.resize(rows);
    y.resize(rows);
    const double* xv = x->data();
    for (int r = 0; r < rows; ++r) {
      const double* wr = w + static_cast<std::size_t>(r) * cols;
      double s = b[r];
      for (int c = 0; c < cols; ++c) s += wr[c] * xv[c];
      z[r] = s;
      y[r] = apply_act(spec.acts[l], s);
    }
    x = &y;
  }
}

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamSet& params,
                                std::span<const double> input, Tape* tape) {
  Tape local;
  Tape& t = tape ? *tape : local;
  mlp_forward_into(spec, params, input, t);
  return t.post.back();
}

static void check_tape(const MlpSpec& spec, const ParamSet& params, const Tape& tape) {
  if (tape.dims != spec.dims)
    throw std::invalid_argument("mlp_backward: tape topology does not match spec");
  if (tape.params_version != params.version)
    throw std::invalid_argument("mlp_backward: stale tape (parameters changed since forward)");
}

void mlp_backward_acc(const MlpSpec& spec, const ParamSet& params, const Tape& tape,
                      std::span<const double> out_grad, std::span<double> param_grad_acc,
                      std::span<double> input_grad_acc) {
  check_tape(spec, params, tape);
  if (static_cast<int>(out_grad.size()) != spec.out_dim())
    throw std::invalid_argument("mlp_backward: output gradient length mismatch");
  if (param_grad_acc.size() != params.size())
    throw std::invalid_argument("mlp_backward: parameter gradient buffer mismatch");

  const std::size_t L = spec.layer_count();
  std::vector<double> g(out_grad.begin(), out_grad.end());
  std::vector<double> g_prev;
  for (std::size_t li = L; li-- > 0;) {
    const int rows = spec.dims[li + 1], cols = spec.dims[li];
    const auto& pre = tape.pre[li];
    const auto& post = tape.post[li];
    const double* x = (li == 0) ? tape.input.data() : tape.post[li - 1].data();
    const double* w = params.layer_weights(spec, li);
    double* gw = param_grad_acc.data() + params.index[li].offset;
    double* gb = gw + static_cast<std::size_t>(rows) * cols;

    g_prev.assign(cols, 0.0);
    for (int r = 0; r < rows; ++r) {
      const double dz = g[r] * act_grad(spec.acts[li], pre[r], post[r]);
      if (dz == 0.0) continue;
      double* gwr = gw + static_cast<std::size_t>(r) * cols;
      const double* wr = w + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) {
        gwr[c] += dz * x[c];
        g_prev[c] += dz * wr[c];
      }
      gb[r] += dz;
    }
    g.swap(g_prev);
  }
  if (!input_grad_acc.empty()) {
    if (static_cast<int>(input_grad_acc.size()) != spec.in_dim())
      throw std::invalid_argument("mlp_backward: input gradient buffer mismatch");
    for (int c = 0; c < spec.in_dim(); ++c) input_grad_acc[c] += g[c];
  }
}

void mlp_backward_input(const MlpSpec& spec, const ParamSet& params, const Tape& tape,
                        std::span<const double> out_grad, std::span<double> input_grad_acc) {
  check_tape(spec, params, tape);
  if (static_cast<int>(out_grad.size()) != spec.out_dim())
    throw std::invalid_argument("mlp_backward: output gradient length mismatch");
  if (static_cast<int>(input_grad_acc.size()) != spec.in_dim())
    throw std::invalid_argument("mlp_backward: input gradient buffer mismatch");

  const std::size_t L = spec.layer_count();
  std::vector<double> g(out_grad.begin(), out_grad.end());
  std::vector<double> g_prev;
  for (std::size_t li = L; li-- > 0;) {
    const int rows = spec.dims[li + 1], cols = spec.dims[li];
    const auto& pre = tape.pre[li];
    const auto& post = tape.post[li];
    const double* w = params.layer_weights(spec, li);
    g_prev.assign(cols, 0.0);
    for (int r = 0; r < rows; ++r) {
      const double dz = g[r] * act_grad(spec.acts[li], pre[r], post[r]);
      if (dz == 0.0) continue;
      const double* wr = w + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) g_prev[c] += dz * wr[c];
    }
    g.swap(g_prev);
  }
  for (int c = 0; c < spec.in_dim(); ++c) input_grad_acc[c] += g[c];
}

BackwardResult mlp_backward(const MlpSpec& spec, const ParamSet& params, const Tape& tape,
                            std::span<const double> out_grad) {
  BackwardResult r;
  r.param_grad.assign(params.size(), 0.0);
  r.input_grad.assign(spec.in_dim(), 0.0);
  mlp_backward_acc(spec, params, tape, out_grad, r.param_grad, r.input_grad);
  return r;
}

AdamState make_adam(std::size_t n, double lr) {
  if (lr <= 0.0) throw std::invalid_argument("make_adam: learning rate must be positive");
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, ParamSet& params, std::span<const double> grad) {
  if (grad.size() != params.size())
    throw std::invalid_argument("adam_step: gradient length mismatch");
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state length mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i]))
      throw std::invalid_argument("adam_step: non-finite gradient at index " +
                                  std::to_string(i) + " (" + std::to_string(grad[i]) + ")");
  }
  state.step += 1;
  const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / b1t;
    const double vhat = state.v[i] / b2t;
    params.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
  params.version += 1;
}

void soft_update_inplace(ParamSet& target, const ParamSet& online, double mu) {
  if (mu <= 0.0 || mu > 1.0)
    throw std::invalid_argument("soft_update: mu must lie in (0, 1]");
  if (target.size() != online.size())
    throw std::invalid_argument("soft_update: parameter length mismatch");
  for (std::size_t i = 0; i < target.data.size(); ++i)
    target.data[i] = mu * online.data[i] + (1.0 - mu) * target.data[i];
  target.version += 1;
}

ParamSet soft_update(const ParamSet& target, const ParamSet& online, double mu) {
  ParamSet out = target;
  soft_update_inplace(out, online, mu);
  return out;
}

void save_params(std::ostream& out, const ParamSet& params) {
  std::uint64_t layers = params.index.size();
  out.write(reinterpret_cast<const char*>(&layers), sizeof(layers));
  for (const auto& seg : params.index) {
    std::uint64_t off = seg.offset, ext = seg.extent;
    out.write(reinterpret_cast<const char*>(&off), sizeof(off));
    out.write(reinterpret_cast<const char*>(&ext), sizeof(ext));
  }
  std::uint64_t n = params.data.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(params.data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
}

ParamSet load_params(std::istream& in) {
  ParamSet p;
  std::uint64_t layers = 0;
  in.read(reinterpret_cast<char*>(&layers), sizeof(layers));
  if (!in) throw std::runtime_error("load_params: truncated header");
  p.index.resize(layers);
  for (auto& seg : p.index) {
    std::uint64_t off = 0, ext = 0;
    in.read(reinterpret_cast<char*>(&off), sizeof(off));
    in.read(reinterpret_cast<char*>(&ext), sizeof(ext));
    seg.offset = off;
    seg.extent = ext;
  }
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in) throw std::runtime_error("load_params: truncated index");
  p.data.resize(n);
  in.read(reinterpret_cast<char*>(p.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("load_params: truncated data");
  if (!all_finite(p.data)) throw std::runtime_error("load_params: non-finite parameters");
  return p;
}

}  // namespace qpop
