#include "mesa/replay.hpp"

#include <istream>
#include <ostream>
#include <string>

#include "mesa/errors.hpp"
#include "mesa/kvconfig.hpp"

namespace mesa {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  require(capacity > 0, ErrorKind::kInvalidArgument, "replay buffer capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  ++pushed_;
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
    return;
  }
  data_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

void ReplayBuffer::clear() {
  data_.clear();
  head_ = 0;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  require(i < data_.size(), ErrorKind::kInvalidArgument, "replay buffer index out of range");
  return data_[(head_ + i) % data_.size()];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  require(!data_.empty(), ErrorKind::kInvalidState, "sampling from an empty replay buffer");
  std::vector<const Transition*> out(batch);
  for (auto& p : out) p = &data_[uniform_index(rng, data_.size())];
  return out;
}

namespace {

void write_vec(std::ostream& out, const std::vector<double>& v) {
  out << v.size();
  for (double x : v) out << ' ' << format_real(x);
  out << '\n';
}

std::vector<double> read_vec(std::istream& in) {
  std::size_t n = 0;
  require(static_cast<bool>(in >> n), ErrorKind::kIo, "transitions: bad vector length");
  std::vector<double> v(n);
  for (double& x : v) {
    std::string tok;
    require(static_cast<bool>(in >> tok), ErrorKind::kIo, "transitions: truncated vector");
    try {
      x = std::stod(tok);
    } catch (const std::exception&) {
      fail(ErrorKind::kIo, "transitions: bad number '" + tok + "'");
    }
  }
  return v;
}

void write_obs(std::ostream& out, const std::vector<std::vector<double>>& obs) {
  out << obs.size() << '\n';
  for (const auto& o : obs) write_vec(out, o);
}

std::vector<std::vector<double>> read_obs(std::istream& in) {
  std::size_t n = 0;
  require(static_cast<bool>(in >> n), ErrorKind::kIo, "transitions: bad observation count");
  std::vector<std::vector<double>> obs(n);
  for (auto& o : obs) o = read_vec(in);
  return obs;
}

}  // namespace

void write_transitions(std::ostream& out, std::span<const Transition> ts) {
  out << "transitions " << ts.size() << '\n';
  for (const Transition& t : ts) {
    out << "t " << format_real(t.reward) << ' ' << format_real(t.shaped) << ' ' << (t.done ? 1 : 0) << ' '
        << static_cast<int>(t.source) << '\n';
    write_vec(out, t.state);
    write_obs(out, t.obs);
    write_vec(out, t.action);
    write_vec(out, t.next_state);
    write_obs(out, t.next_obs);
  }
}

std::vector<Transition> read_transitions(std::istream& in) {
  std::string tag;
  std::size_t n = 0;
  require(static_cast<bool>(in >> tag >> n) && tag == "transitions", ErrorKind::kIo,
          "transitions: bad header");
  std::vector<Transition> ts(n);
  for (Transition& t : ts) {
    int done = 0, source = 0;
    require(static_cast<bool>(in >> tag >> t.reward >> t.shaped >> done >> source) && tag == "t",
            ErrorKind::kIo, "transitions: bad record");
    require(source >= 0 && source <= 3, ErrorKind::kIo, "transitions: bad source");
    t.done = done != 0;
    t.source = static_cast<RolloutSource>(source);
    t.state = read_vec(in);
    t.obs = read_obs(in);
    t.action = read_vec(in);
    t.next_state = read_vec(in);
    t.next_obs = read_obs(in);
  }
  return ts;
}

}  // namespace mesa
