#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace qpop {

enum class Act { relu, tanh, identity };

// Fixed-topology fully connected network description. One activation per
// non-input layer; the output layer defaults to identity.
struct MlpSpec {
  std::vector<int> dims;
  std::vector<Act> acts;
  std::uint64_t seed = 0;

  static MlpSpec make(std::vector<int> dims, std::uint64_t seed,
                      Act hidden = Act::relu, Act output = Act::identity);

  int in_dim() const { return dims.front(); }
  int out_dim() const { return dims.back(); }
  std::size_t layer_count() const { return acts.size(); }
  std::size_t param_count() const;
  void validate() const;
};

struct Segment {
  std::size_t offset = 0;
  std::size_t extent = 0;
};

// Flat parameter vector plus the per-layer (offset, extent) index. The
// version stamp ties tapes to the parameter values they were produced with.
struct ParamSet {
  std::vector<double> data;
  std::vector<Segment> index;
  std::uint64_t version = 0;

  std::size_t size() const { return data.size(); }
  double* layer_weights(const MlpSpec& spec, std::size_t layer);
  const double* layer_weights(const MlpSpec& spec, std::size_t layer) const;
  double* layer_biases(const MlpSpec& spec, std::size_t layer);
  const double* layer_biases(const MlpSpec& spec, std::size_t layer) const;
};

// Uniform(-sqrt(6/(fan_in+fan_out)), +...) weights, zero biases, drawn from
// spec.seed.
ParamSet init_params(const MlpSpec& spec);
ParamSet zero_params(const MlpSpec& spec);

// Forward-pass record sufficient for an exact reverse sweep.
struct Tape {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;   // pre-activation per layer
  std::vector<std::vector<double>> post;  // activation output per layer
  std::vector<int> dims;
  std::uint64_t params_version = ~0ull;

  std::span<const double> output() const { return post.back(); }
};

// Runs the network; fills `tape` if given. Rejects inputs whose length does
// not match the first layer.
std::vector<double> mlp_forward(const MlpSpec& spec, const ParamSet& params,
                                std::span<const double> input, Tape* tape = nullptr);
void mlp_forward_into(const MlpSpec& spec, const ParamSet& params,
                      std::span<const double> input, Tape& tape);

struct BackwardResult {
  std::vector<double> param_grad;
  std::vector<double> input_grad;
};

// Reverse sweep from a matching tape. Rejects tapes produced by a different
// topology or an older parameter version.
BackwardResult mlp_backward(const MlpSpec& spec, const ParamSet& params,
                            const Tape& tape, std::span<const double> out_grad);

// Accumulating variant: adds into param_grad_acc (length param_count) and,
// when nonempty, input_grad_acc (length in_dim).
void mlp_backward_acc(const MlpSpec& spec, const ParamSet& params, const Tape& tape,
                      std::span<const double> out_grad, std::span<double> param_grad_acc,
                      std::span<double> input_grad_acc);

// Input gradient only, parameters treated as constants. Adds into
// input_grad_acc.
void mlp_backward_input(const MlpSpec& spec, const ParamSet& params, const Tape& tape,
                        std::span<const double> out_grad, std::span<double> input_grad_acc);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam(std::size_t n, double lr);

// Standard bias-corrected Adam update. Non-finite gradient entries are
// rejected with the offending index in the message.
void adam_step(AdamState& state, ParamSet& params, std::span<const double> grad);

// target <- mu*online + (1-mu)*target, mu in (0, 1].
ParamSet soft_update(const ParamSet& target, const ParamSet& online, double mu);
void soft_update_inplace(ParamSet& target, const ParamSet& online, double mu);

// Checkpoint format: shape index (count + offset/extent pairs) followed by
// the flat little-endian 64-bit real array.
void save_params(std::ostream& out, const ParamSet& params);
ParamSet load_params(std::istream& in);

}  // namespace qpop
