#include "qpop/replay.hpp"

#include <stdexcept>

namespace qpop {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  storage_.reserve(capacity);
}

void ReplayBuffer::push(Transition t) {
  if (size_ < capacity_) {
    storage_.push_back(std::move(t));
    ++size_;
  } else {
    storage_[head_] = std::move(t);  // overwrite oldest
  }
  head_ = (head_ + 1) % capacity_;
  ++insertions_;
}

std::size_t ReplayBuffer::live_index(std::size_t i) const {
  if (size_ < capacity_) return i;
  return (head_ + i) % capacity_;
}

const Transition& ReplayBuffer::at_live(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("ReplayBuffer: live index out of range");
  return storage_[live_index(i)];
}

std::vector<const Transition*> ReplayBuffer::sample_minibatch(std::size_t batch,
                                                              std::mt19937_64& rng) const {
  if (size_ < batch)
    throw std::runtime_error("ReplayBuffer: underfilled (" + std::to_string(size_) +
                             " < batch " + std::to_string(batch) + ")");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<const Transition*> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(&storage_[pick(rng)]);
  return out;
}

std::vector<std::vector<double>> ReplayBuffer::sample_states(std::size_t batch,
                                                             std::mt19937_64& rng) const {
  auto picks = sample_minibatch(batch, rng);
  std::vector<std::vector<double>> states;
  states.reserve(batch);
  for (const Transition* t : picks) states.push_back(t->s);
  return states;
}

}  // namespace qpop
