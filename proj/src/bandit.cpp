#include "qpop/bandit.hpp"

#include <stdexcept>

namespace qpop {

static double beta_draw(std::mt19937_64& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

ArmChoice select_arm(BanditState& state, std::mt19937_64& rng) {
  const double theta0 = beta_draw(rng, static_cast<double>(state.a[0]),
                                  static_cast<double>(state.b[0]));
  const double theta1 = beta_draw(rng, static_cast<double>(state.a[1]),
                                  static_cast<double>(state.b[1]));
  ArmChoice choice;
  choice.arm = (theta1 > theta0) ? kArmDiversity : kArmStability;
  if (choice.arm == kArmStability) {
    choice.lambda1 = state.lambda;
    choice.lambda2 = 0.0;
  } else {
    choice.lambda1 = 0.0;
    choice.lambda2 = state.lambda;
  }
  state.last_arm = choice.arm;
  state.pending = true;
  return choice;
}

void observe(BanditState& state, double next_return) {
  if (!state.pending)
    throw std::logic_error("bandit observe: no arm selected since last observation");
  if (state.has_baseline && next_return > state.last_return)
    state.a[static_cast<std::size_t>(state.last_arm)] += 1;
  state.last_return = next_return;
  state.has_baseline = true;
  state.pending = false;
}

}  // namespace qpop
