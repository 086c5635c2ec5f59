#pragma once

// Continuous 2-D particle climb game: point masses with damped
// double-integrator dynamics, U landmarks, reward determined by how many
// agents sit on the target landmark.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mesa/climb.hpp"
#include "mesa/geometry.hpp"
#include "mesa/rng.hpp"

namespace mesa::particle {

struct Physics {
  double dt = 0.1;
  double damping = 0.25;
  double v_max = 1.0;
  double arena_halfwidth = 1.0;
  double landmark_radius = 0.1;
  int horizon = 60;

  double min_landmark_sep() const { return 3.0 * landmark_radius; }
};

// Uniform rejection sampling of U landmarks in [-h, h]^2 with every pairwise
// distance >= min_sep. Throws kInfeasibleGeometry when the budget runs out.
std::vector<Vec2> sample_landmarks(int U, double arena_halfwidth, double min_sep,
                                   std::uint64_t seed);

struct ParticleWorld {
  climb::ClimbTaskSpec spec;
  Physics physics;
  std::vector<Vec2> positions;
  std::vector<Vec2> velocities;
  int t = 0;
};

// Agents spawn uniformly in the arena at rest.
ParticleWorld spawn(const climb::ClimbTaskSpec& spec, const Physics& physics, Rng& rng);

// Index of the landmark agent i occupies (nearest landmark strictly inside
// landmark_radius), or -1.
int occupied_landmark(const ParticleWorld& w, int agent);

double reward_particle(const ParticleWorld& w);

// [own velocity (2), landmark offsets (2U), other-agent offsets (2(n-1))].
std::size_t observation_size(const climb::ClimbTaskSpec& spec);
std::vector<double> observe(const ParticleWorld& w, int agent);

struct ParticleStep {
  ParticleWorld next;
  double reward = 0.0;
  bool done = false;
  std::vector<std::vector<double>> obs;
};

ParticleStep particle_step(const ParticleWorld& w, std::span<const Vec2> forces);

// One row per agent per step: t, agent, x, y, vx, vy, fx, fy, reward.
struct TrajectoryRow {
  int t = 0;
  int agent = 0;
  Vec2 position;
  Vec2 velocity;
  Vec2 force;
  double reward = 0.0;
};

void write_trajectory_csv(std::ostream& out, std::span<const TrajectoryRow> rows);

}  // namespace mesa::particle
