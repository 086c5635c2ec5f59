#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mesa/rng.hpp"

namespace mesa {

enum class RolloutSource : std::uint8_t { kLearner, kExploration, kWarmup, kPrefill };

struct Transition {
  std::vector<double> state;
  std::vector<std::vector<double>> obs;  // empty: every agent observes `state`
  std::vector<double> action;
  double reward = 0.0;
  double shaped = 0.0;
  std::vector<double> next_state;
  std::vector<std::vector<double>> next_obs;
  bool done = false;
  RolloutSource source = RolloutSource::kLearner;
};

// Fixed-capacity FIFO ring.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return data_.empty(); }
  void clear();

  // i-th oldest transition still held.
  const Transition& at(std::size_t i) const;
  std::uint64_t total_pushed() const { return pushed_; }

  // Uniform sampling with replacement.
  std::vector<const Transition*> sample(std::size_t batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> data_;
  std::size_t head_ = 0;  // index of the oldest element once full
  std::uint64_t pushed_ = 0;
};

// Line-oriented text form, reals at full precision.
void write_transitions(std::ostream& out, std::span<const Transition> ts);
std::vector<Transition> read_transitions(std::istream& in);

}  // namespace mesa
