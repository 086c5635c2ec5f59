#pragma once

// Uniform episodic interface over the discrete climb games and the particle
// climb game, as consumed by the learners and the meta-training loops.
// Joint actions travel as flat real vectors: one action index per agent for
// discrete games, (fx, fy) per agent for the particle game.

#include <memory>
#include <span>
#include <vector>

#include "mesa/climb.hpp"
#include "mesa/particle.hpp"
#include "mesa/rng.hpp"

namespace mesa {

struct ActionSpace {
  bool discrete = true;
  int n = 2;
  int U = 2;            // discrete: actions per agent
  int dim_per_agent = 1;

  int joint_dim() const { return n * dim_per_agent; }
};

struct EnvView {
  std::vector<double> state;                 // centralized state embedding
  std::vector<std::vector<double>> obs;      // per agent; empty when every agent sees `state`
};

struct EnvStep {
  EnvView next;
  double reward = 0.0;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual const climb::ClimbTaskSpec& spec() const = 0;
  virtual ActionSpace action_space() const = 0;
  virtual std::size_t state_size() const = 0;
  virtual std::size_t obs_size() const = 0;
  virtual int horizon() const = 0;

  virtual EnvView reset(Rng& rng) = 0;
  virtual EnvStep step(std::span<const double> action) = 0;

  // Embedding of the current state together with `action`, every feature
  // scaled to [-1, 1].
  virtual std::vector<double> embed(std::span<const double> action) const = 0;
  virtual std::size_t embed_size() const = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;
};

class ClimbEnv final : public Environment {
 public:
  explicit ClimbEnv(climb::ClimbTaskSpec spec);

  const climb::ClimbTaskSpec& spec() const override { return spec_; }
  ActionSpace action_space() const override { return {true, spec_.n, spec_.U, 1}; }
  std::size_t state_size() const override { return climb::observation_size(spec_); }
  std::size_t obs_size() const override { return state_size(); }
  int horizon() const override { return spec_.num_stages(); }

  EnvView reset(Rng& rng) override;
  EnvStep step(std::span<const double> action) override;
  std::vector<double> embed(std::span<const double> action) const override;
  std::size_t embed_size() const override;
  std::unique_ptr<Environment> clone() const override;

  const climb::GameState& state() const { return state_; }

 private:
  climb::ClimbTaskSpec spec_;
  climb::GameState state_;
};

class ParticleEnv final : public Environment {
 public:
  ParticleEnv(climb::ClimbTaskSpec spec, particle::Physics physics);

  const climb::ClimbTaskSpec& spec() const override { return world_.spec; }
  ActionSpace action_space() const override { return {false, world_.spec.n, world_.spec.U, 2}; }
  std::size_t state_size() const override { return world_.spec.n * obs_size(); }
  std::size_t obs_size() const override { return particle::observation_size(world_.spec); }
  int horizon() const override { return world_.physics.horizon; }

  EnvView reset(Rng& rng) override;
  EnvStep step(std::span<const double> action) override;
  // Layout-free features: per-agent distance to the nearest landmark and
  // pairwise agent distances (square-root warped over the arena diagonal),
  // then the forces.
  std::vector<double> embed(std::span<const double> action) const override;
  std::size_t embed_size() const override;
  std::unique_ptr<Environment> clone() const override;

  const particle::ParticleWorld& world() const { return world_; }
  void set_world(particle::ParticleWorld w) { world_ = std::move(w); }

 private:
  EnvView view() const;

  particle::ParticleWorld world_;
};

std::unique_ptr<Environment> make_env(const climb::ClimbTaskSpec& spec,
                                      const particle::Physics& physics = {});

}  // namespace mesa
