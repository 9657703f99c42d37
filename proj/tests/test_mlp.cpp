#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "qpop/mlp.hpp"
#include "qpop/util.hpp"

using namespace qpop;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central-difference check of d(g . output)/dparam and /dinput.
double max_fd_error(const MlpSpec& spec, const ParamSet& params, std::vector<double> input,
                    std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> out_grad(static_cast<std::size_t>(spec.out_dim()));
  for (double& g : out_grad) g = u(rng);

  Tape tape;
  mlp_forward_into(spec, params, input, tape);
  auto grads = mlp_backward(spec, params, tape, out_grad);

  auto loss_at = [&](const ParamSet& p, std::span<const double> x) {
    auto y = mlp_forward(spec, p, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += out_grad[i] * y[i];
    return s;
  };

  const double h = 1e-5;
  double worst = 0.0;
  ParamSet probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    probe.data[i] = params.data[i] + h;
    const double up = loss_at(probe, input);
    probe.data[i] = params.data[i] - h;
    const double dn = loss_at(probe, input);
    probe.data[i] = params.data[i];
    worst = std::max(worst, rel_err(grads.param_grad[i], (up - dn) / (2 * h)));
  }
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double orig = input[i];
    input[i] = orig + h;
    const double up = loss_at(params, input);
    input[i] = orig - h;
    const double dn = loss_at(params, input);
    input[i] = orig;
    worst = std::max(worst, rel_err(grads.input_grad[i], (up - dn) / (2 * h)));
  }
  return worst;
}

}  // namespace

TEST_SUITE("mlp") {

TEST_CASE("forward zero parameters give zero output") {
  auto spec = MlpSpec::make({3, 4, 2}, 0);
  auto params = zero_params(spec);
  auto y = mlp_forward(spec, params, std::vector<double>{0.3, -1.0, 2.0});
  for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("forward identity layer passes input through") {
  auto spec = MlpSpec::make({3, 3}, 0);
  auto params = zero_params(spec);
  for (int i = 0; i < 3; ++i) params.data[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  std::vector<double> x{0.5, -2.0, 7.25};
  auto y = mlp_forward(spec, params, x);
  for (int i = 0; i < 3; ++i) CHECK(y[static_cast<std::size_t>(i)] == x[static_cast<std::size_t>(i)]);
}

TEST_CASE("forward 2-3-1 relu net matches hand evaluation") {
  auto spec = MlpSpec::make({2, 3, 1}, 0);
  auto params = zero_params(spec);
  // layer 0: W = [[1, .5], [-1, 2], [.25, .25]], b = [.1, -.2, 0]
  const double w0[] = {1.0, 0.5, -1.0, 2.0, 0.25, 0.25};
  for (int i = 0; i < 6; ++i) params.data[static_cast<std::size_t>(i)] = w0[i];
  params.data[6] = 0.1;
  params.data[7] = -0.2;
  params.data[8] = 0.0;
  // layer 1: W = [[2, -1, 3]], b = [.5]
  params.data[9] = 2.0;
  params.data[10] = -1.0;
  params.data[11] = 3.0;
  params.data[12] = 0.5;
  auto y = mlp_forward(spec, params, std::vector<double>{1.0, -1.0});
  // pre = (0.6, -3.2, 0) -> relu (0.6, 0, 0) -> 2*0.6 + 0.5
  CHECK(y[0] == doctest::Approx(1.7).epsilon(1e-12));
}

TEST_CASE("forward rejects dimension mismatch") {
  auto spec = MlpSpec::make({3, 2}, 0);
  auto params = zero_params(spec);
  CHECK_THROWS_AS(mlp_forward(spec, params, std::vector<double>{1.0, 2.0}),
                  std::invalid_argument);
}

TEST_CASE("forward is deterministic") {
  auto spec = MlpSpec::make({4, 8, 3}, 99);
  auto params = init_params(spec);
  std::vector<double> x{0.1, -0.7, 2.0, 0.0};
  auto y1 = mlp_forward(spec, params, x);
  auto y2 = mlp_forward(spec, params, x);
  CHECK(y1 == y2);
}

TEST_CASE("backward linear layer gradient equals input") {
  auto spec = MlpSpec::make({3, 2}, 0);
  auto params = zero_params(spec);
  std::vector<double> x{0.4, -1.5, 2.25};
  Tape tape;
  mlp_forward_into(spec, params, x, tape);
  auto g = mlp_backward(spec, params, tape, std::vector<double>{1.0, 0.0});
  // dy_0/dW_0k = x_k
  CHECK(g.param_grad[0] == x[0]);
  CHECK(g.param_grad[1] == x[1]);
  CHECK(g.param_grad[2] == x[2]);
  // row 1 untouched
  CHECK(g.param_grad[3] == 0.0);
  CHECK(g.param_grad[6] == 1.0);  // bias of row 0
  CHECK(g.param_grad[7] == 0.0);
}

TEST_CASE("backward zero output gradient gives zero parameter gradient") {
  auto spec = MlpSpec::make({4, 8, 3}, 5);
  auto params = init_params(spec);
  std::vector<double> x{1.0, 2.0, -0.5, 0.25};
  Tape tape;
  mlp_forward_into(spec, params, x, tape);
  auto g = mlp_backward(spec, params, tape, std::vector<double>{0.0, 0.0, 0.0});
  for (double v : g.param_grad) CHECK(v == 0.0);
  for (double v : g.input_grad) CHECK(v == 0.0);
}

TEST_CASE("backward matches central finite differences on random 4-8-3 nets") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    auto spec = MlpSpec::make({4, 8, 3}, derive_seed(7, static_cast<std::uint64_t>(draw)));
    auto params = init_params(spec);
    std::vector<double> x(4);
    for (double& v : x) v = u(rng);
    worst = std::max(worst, max_fd_error(spec, params, x, rng));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("backward matches finite differences with tanh output") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    auto spec = MlpSpec::make({5, 6, 4}, derive_seed(13, static_cast<std::uint64_t>(draw)),
                              Act::relu, Act::tanh);
    auto params = init_params(spec);
    std::vector<double> x(5);
    for (double& v : x) v = u(rng);
    worst = std::max(worst, max_fd_error(spec, params, x, rng));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("backward rejects stale tapes") {
  auto spec = MlpSpec::make({2, 2}, 3);
  auto params = init_params(spec);
  Tape tape;
  mlp_forward_into(spec, params, std::vector<double>{1.0, 1.0}, tape);
  auto adam = make_adam(params.size(), 0.01);
  std::vector<double> grad(params.size(), 0.1);
  adam_step(adam, params, grad);
  CHECK_THROWS_AS(mlp_backward(spec, params, tape, std::vector<double>{1.0, 1.0}),
                  std::invalid_argument);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  auto spec = MlpSpec::make({2, 2}, 1);
  auto params = init_params(spec);
  const auto before = params.data;
  auto adam = make_adam(params.size(), 0.1);
  std::vector<double> zero(params.size(), 0.0);
  adam_step(adam, params, zero);
  CHECK(params.data == before);
  CHECK(adam.step == 1);
}

TEST_CASE("adam single step matches the hand-evaluated update") {
  auto spec = MlpSpec::make({1, 1}, 0);
  auto params = zero_params(spec);
  params.data = {1.0, 0.0};  // weight 1, bias 0
  auto adam = make_adam(2, 0.1);
  adam_step(adam, params, std::vector<double>{1.0, 0.0});
  // mhat = vhat = 1 -> delta = 0.1 / (1 + eps)
  const double expected = 1.0 - 0.1 / (1.0 + 1e-8);
  CHECK(params.data[0] == doctest::Approx(expected).epsilon(1e-14));
  CHECK(params.data[1] == 0.0);
}

TEST_CASE("adam moments follow the closed-form accumulation over two steps") {
  auto spec = MlpSpec::make({1, 1}, 0);
  auto params = zero_params(spec);
  auto adam = make_adam(2, 0.01);
  std::vector<double> g{1.0, 1.0};
  adam_step(adam, params, g);
  adam_step(adam, params, g);
  CHECK(adam.step == 2);
  // m_2 = 1 - beta1^2, v_2 = 1 - beta2^2 for constant unit gradients
  CHECK(adam.m[0] == doctest::Approx(1.0 - 0.9 * 0.9).epsilon(1e-12));
  CHECK(adam.v[0] == doctest::Approx(1.0 - 0.999 * 0.999).epsilon(1e-12));
}

TEST_CASE("adam rejects non-finite gradients") {
  auto spec = MlpSpec::make({1, 1}, 0);
  auto params = zero_params(spec);
  auto adam = make_adam(2, 0.01);
  std::vector<double> g{std::nan(""), 0.0};
  CHECK_THROWS_WITH_AS(adam_step(adam, params, g),
                       doctest::Contains("non-finite gradient at index 0"),
                       std::invalid_argument);
}

TEST_CASE("soft update blends exactly and hits the documented endpoints") {
  auto spec = MlpSpec::make({1, 2}, 0);
  auto target = zero_params(spec);
  auto online = zero_params(spec);
  for (double& v : online.data) v = 1.0;

  SUBCASE("mu=1 copies the online net") {
    auto out = soft_update(target, online, 1.0);
    for (double v : out.data) CHECK(v == 1.0);
  }
  SUBCASE("fixed point when target equals online") {
    auto out = soft_update(online, online, 0.37);
    for (double v : out.data) CHECK(v == 1.0);
  }
  SUBCASE("table default 0.01 moves zero to 0.01") {
    auto out = soft_update(target, online, 0.01);
    for (double v : out.data) CHECK(v == doctest::Approx(0.01).epsilon(1e-15));
  }
  SUBCASE("mu outside (0,1] rejected") {
    CHECK_THROWS_AS(soft_update(target, online, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(soft_update(target, online, 1.5), std::invalid_argument);
  }
}

TEST_CASE("soft update is affine per entry") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  auto spec = MlpSpec::make({3, 3}, 0);
  auto target = zero_params(spec);
  auto online = zero_params(spec);
  for (double& v : target.data) v = u(rng);
  for (double& v : online.data) v = u(rng);
  const double mu = 0.3;
  auto out = soft_update(target, online, mu);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    CHECK(out.data[i] == doctest::Approx(mu * online.data[i] + (1 - mu) * target.data[i])
                             .epsilon(1e-15));
}

TEST_CASE("initialization is uniform within the fan bound with zero biases") {
  auto spec = MlpSpec::make({10, 20, 5}, 123);
  auto params = init_params(spec);
  const double lim0 = std::sqrt(6.0 / (10 + 20));
  for (int i = 0; i < 200; ++i) {
    CHECK(std::abs(params.data[static_cast<std::size_t>(i)]) <= lim0);
  }
  const double* b0 = params.layer_biases(spec, 0);
  for (int i = 0; i < 20; ++i) CHECK(b0[i] == 0.0);
}

TEST_CASE("parameter serialization round-trips") {
  auto spec = MlpSpec::make({4, 6, 2}, 77);
  auto params = init_params(spec);
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  save_params(ss, params);
  auto loaded = load_params(ss);
  CHECK(loaded.data == params.data);
  REQUIRE(loaded.index.size() == params.index.size());
  for (std::size_t i = 0; i < loaded.index.size(); ++i) {
    CHECK(loaded.index[i].offset == params.index[i].offset);
    CHECK(loaded.index[i].extent == params.index[i].extent);
  }
}

TEST_CASE("spec validation rejects bad topologies") {
  CHECK_THROWS_AS(MlpSpec::make({4}, 0), std::invalid_argument);
  CHECK_THROWS_AS(MlpSpec::make({4, 0}, 0), std::invalid_argument);
}

}  // TEST_SUITE
