#pragma once

#include <array>
#include <cstdint>
#include <random>

namespace qpop {

// Two-armed Thompson arbitration between the stability and diversity
// regularizers. Posteriors only sharpen on observed improvement; a worse
// outcome leaves both arms untouched.
struct BanditState {
  std::array<long, 2> a{1, 1};  // Beta alpha per arm
  std::array<long, 2> b{1, 1};  // Beta beta per arm
  double lambda = 16.0;
  int last_arm = -1;
  bool pending = false;       // an arm was selected and awaits an observation
  bool has_baseline = false;  // a previous return exists to compare against
  double last_return = 0.0;
};

inline constexpr int kArmStability = 0;
inline constexpr int kArmDiversity = 1;

struct ArmChoice {
  int arm = kArmStability;
  double lambda1 = 0.0;  // stability coefficient
  double lambda2 = 0.0;  // diversity coefficient
};

// Draws theta_k ~ Beta(a_k, b_k) per arm and picks the argmax (tie goes to
// the stability arm). Stability arm -> (lambda, 0); diversity -> (0, lambda).
ArmChoice select_arm(BanditState& state, std::mt19937_64& rng);

// Compares the new return against the previous one; on improvement the
// selected arm's alpha increments, otherwise nothing changes. The first
// observation only records the baseline.
void observe(BanditState& state, double next_return);

}  // namespace qpop
