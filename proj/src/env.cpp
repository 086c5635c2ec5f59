#include "mesa/env.hpp"

#include <algorithm>
#include <cmath>

#include "mesa/errors.hpp"

namespace mesa {

namespace {

double to_unit(double v, double lo, double hi) {
  return std::clamp(2.0 * (v - lo) / (hi - lo) - 1.0, -1.0, 1.0);
}

}  // namespace

ClimbEnv::ClimbEnv(climb::ClimbTaskSpec spec) : spec_(std::move(spec)) {
  require(spec_.variant != climb::Variant::kParticle, ErrorKind::kInvalidArgument,
          "ClimbEnv: particle tasks need ParticleEnv");
  spec_.validate();
}

EnvView ClimbEnv::reset(Rng&) {
  state_ = {};
  return {climb::observe(spec_, state_), {}};
}

EnvStep ClimbEnv::step(std::span<const double> action) {
  std::vector<int> a(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) a[i] = static_cast<int>(std::lround(action[i]));
  auto st = climb::multi_stage_step(spec_, state_, a);
  state_ = st.next;
  EnvStep out;
  out.reward = st.reward;
  out.done = st.done;
  out.next.state = std::move(st.obs[0]);
  return out;
}

std::vector<double> ClimbEnv::embed(std::span<const double> action) const {
  require(static_cast<int>(action.size()) == spec_.n, ErrorKind::kInvalidArgument,
          "ClimbEnv::embed: action size mismatch");
  std::vector<double> e = climb::observe(spec_, state_);
  for (double& v : e) v = 2.0 * v - 1.0;
  for (int i = 0; i < spec_.n; ++i) {
    const int a = static_cast<int>(std::lround(action[i]));
    for (int u = 0; u < spec_.U; ++u) e.push_back(u == a ? 1.0 : -1.0);
  }
  return e;
}

std::size_t ClimbEnv::embed_size() const {
  return state_size() + static_cast<std::size_t>(spec_.n) * spec_.U;
}

std::unique_ptr<Environment> ClimbEnv::clone() const { return std::make_unique<ClimbEnv>(*this); }

ParticleEnv::ParticleEnv(climb::ClimbTaskSpec spec, particle::Physics physics) {
  require(spec.variant == climb::Variant::kParticle, ErrorKind::kInvalidArgument,
          "ParticleEnv needs a particle task");
  spec.validate(physics.min_landmark_sep() - 1e-12);
  world_.spec = std::move(spec);
  world_.physics = physics;
  world_.positions.assign(world_.spec.n, Vec2{});
  world_.velocities.assign(world_.spec.n, Vec2{});
}

EnvView ParticleEnv::view() const {
  EnvView v;
  for (int i = 0; i < world_.spec.n; ++i) {
    v.obs.push_back(particle::observe(world_, i));
    v.state.insert(v.state.end(), v.obs.back().begin(), v.obs.back().end());
  }
  return v;
}

EnvView ParticleEnv::reset(Rng& rng) {
  world_ = particle::spawn(world_.spec, world_.physics, rng);
  return view();
}

EnvStep ParticleEnv::step(std::span<const double> action) {
  const int n = world_.spec.n;
  require(static_cast<int>(action.size()) == 2 * n, ErrorKind::kInvalidArgument,
          "ParticleEnv::step: expected two force components per agent");
  std::vector<Vec2> forces(n);
  for (int i = 0; i < n; ++i) forces[i] = {action[2 * i], action[2 * i + 1]};
  auto st = particle::particle_step(world_, forces);
  world_ = std::move(st.next);
  EnvStep out;
  out.reward = st.reward;
  out.done = st.done;
  out.next = view();
  return out;
}

std::vector<double> ParticleEnv::embed(std::span<const double> action) const {
  const int n = world_.spec.n;
  require(static_cast<int>(action.size()) == 2 * n, ErrorKind::kInvalidArgument,
          "ParticleEnv::embed: action size mismatch");
  const double span = 2.0 * std::sqrt(2.0) * world_.physics.arena_halfwidth;
  // sqrt warp: resolution concentrates near contact
  auto proximity = [&](double d) { return 2.0 * std::sqrt(std::min(d / span, 1.0)) - 1.0; };
  std::vector<double> e;
  e.reserve(embed_size());
  for (int i = 0; i < n; ++i) {
    double best = span;
    for (Vec2 l : world_.spec.landmarks) best = std::min(best, distance(world_.positions[i], l));
    e.push_back(proximity(best));
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) e.push_back(proximity(distance(world_.positions[i], world_.positions[j])));
  }
  for (double f : action) e.push_back(std::clamp(f, -1.0, 1.0));
  return e;
}

std::size_t ParticleEnv::embed_size() const {
  const auto n = static_cast<std::size_t>(world_.spec.n);
  return n + n * (n - 1) / 2 + 2 * n;
}

std::unique_ptr<Environment> ParticleEnv::clone() const {
  return std::make_unique<ParticleEnv>(*this);
}

std::unique_ptr<Environment> make_env(const climb::ClimbTaskSpec& spec,
                                      const particle::Physics& physics) {
  if (spec.variant == climb::Variant::kParticle) return std::make_unique<ParticleEnv>(spec, physics);
  return std::make_unique<ClimbEnv>(spec);
}

}  // namespace mesa
