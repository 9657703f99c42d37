#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace qpop {

// One environment step as stored in the shared buffer.
struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  std::vector<int> exposed;
  std::vector<std::uint8_t> feedback;
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;
  int actor_id = 0;
};

// Fixed-capacity FIFO ring shared by the whole actor population. Sampling is
// uniform with replacement over live contents.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);

  // Pointers stay valid until the next push.
  std::vector<const Transition*> sample_minibatch(std::size_t batch, std::mt19937_64& rng) const;
  std::vector<std::vector<double>> sample_states(std::size_t batch, std::mt19937_64& rng) const;

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t insertions() const { return insertions_; }

  // Live transition by age, 0 = oldest.
  const Transition& at_live(std::size_t i) const;

 private:
  std::size_t live_index(std::size_t i) const;

  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t head_ = 0;  // next write slot
  std::size_t size_ = 0;
  std::uint64_t insertions_ = 0;
};

}  // namespace qpop
