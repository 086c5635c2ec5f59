#include "mesa/particle.hpp"

#include <algorithm>
#include <numbers>
#include <ostream>

#include "mesa/errors.hpp"
#include "mesa/kvconfig.hpp"

namespace mesa::particle {

std::vector<Vec2> sample_landmarks(int U, double arena_halfwidth, double min_sep,
                                   std::uint64_t seed) {
  require(U >= 1, ErrorKind::kInvalidArgument, "sample_landmarks: U must be >= 1");
  require(arena_halfwidth > 0.0 && min_sep >= 0.0, ErrorKind::kInvalidArgument,
          "sample_landmarks: bad arena or separation");
  // Disks of radius min_sep/2 centred in [-h, h]^2 must fit in the inflated square.
  const double side = 2.0 * arena_halfwidth + min_sep;
  const double disk = std::numbers::pi * 0.25 * min_sep * min_sep;
  if (U > 1 && U * disk > side * side) {
    fail(ErrorKind::kInfeasibleGeometry, "sample_landmarks: " + std::to_string(U) +
                                             " landmarks cannot be packed at separation " +
                                             format_real(min_sep));
  }

  constexpr int kRestarts = 200;
  constexpr int kTriesPerLandmark = 2000;
  Rng rng(seed);
  for (int restart = 0; restart < kRestarts; ++restart) {
    std::vector<Vec2> out;
    out.reserve(U);
    bool ok = true;
    for (int j = 0; j < U && ok; ++j) {
      ok = false;
      for (int attempt = 0; attempt < kTriesPerLandmark; ++attempt) {
        Vec2 c{uniform(rng, -arena_halfwidth, arena_halfwidth),
               uniform(rng, -arena_halfwidth, arena_halfwidth)};
        const bool clear = std::all_of(out.begin(), out.end(),
                                       [&](Vec2 o) { return distance(o, c) >= min_sep; });
        if (clear) {
          out.push_back(c);
          ok = true;
          break;
        }
      }
    }
    if (ok) return out;
  }
  fail(ErrorKind::kInfeasibleGeometry, "sample_landmarks: rejection budget exhausted");
}

ParticleWorld spawn(const climb::ClimbTaskSpec& spec, const Physics& physics, Rng& rng) {
  require(spec.variant == climb::Variant::kParticle, ErrorKind::kInvalidArgument,
          "spawn needs a particle task");
  ParticleWorld w;
  w.spec = spec;
  w.physics = physics;
  w.positions.resize(spec.n);
  w.velocities.assign(spec.n, Vec2{});
  for (auto& p : w.positions) {
    p = {uniform(rng, -physics.arena_halfwidth, physics.arena_halfwidth),
         uniform(rng, -physics.arena_halfwidth, physics.arena_halfwidth)};
  }
  return w;
}

int occupied_landmark(const ParticleWorld& w, int agent) {
  int best = -1;
  double best_d = w.physics.landmark_radius;
  for (int j = 0; j < static_cast<int>(w.spec.landmarks.size()); ++j) {
    const double d = distance(w.positions[agent], w.spec.landmarks[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

double reward_particle(const ParticleWorld& w) {
  const climb::Stage& stage = w.spec.stages.at(0);
  int on_any = 0;
  int on_target = 0;
  for (int i = 0; i < w.spec.n; ++i) {
    const int j = occupied_landmark(w, i);
    if (j >= 0) ++on_any;
    if (j == stage.u) ++on_target;
  }
  if (on_any != w.spec.n) return 0.0;
  if (on_target == stage.k) return 1.0;
  if (on_target == 0) return 1.0 - w.spec.delta;
  return 0.0;
}

std::size_t observation_size(const climb::ClimbTaskSpec& spec) {
  return 2 + 2 * static_cast<std::size_t>(spec.U) + 2 * static_cast<std::size_t>(spec.n - 1);
}

std::vector<double> observe(const ParticleWorld& w, int agent) {
  std::vector<double> obs;
  obs.reserve(particle::observation_size(w.spec));
  const Vec2 me = w.positions[agent];
  obs.push_back(w.velocities[agent].x);
  obs.push_back(w.velocities[agent].y);
  for (Vec2 l : w.spec.landmarks) {
    obs.push_back(l.x - me.x);
    obs.push_back(l.y - me.y);
  }
  for (int j = 0; j < w.spec.n; ++j) {
    if (j == agent) continue;
    obs.push_back(w.positions[j].x - me.x);
    obs.push_back(w.positions[j].y - me.y);
  }
  return obs;
}

ParticleStep particle_step(const ParticleWorld& w, std::span<const Vec2> forces) {
  require(static_cast<int>(forces.size()) == w.spec.n, ErrorKind::kInvalidArgument,
          "particle_step: one force per agent expected");
  require(w.t < w.physics.horizon, ErrorKind::kInvalidState, "particle_step: episode finished");
  for (Vec2 f : forces) {
    require(f.x >= -1.0 && f.x <= 1.0 && f.y >= -1.0 && f.y <= 1.0,
            ErrorKind::kInvalidArgument, "particle_step: force component outside [-1, 1]");
  }
  const Physics& ph = w.physics;
  ParticleStep out;
  out.next = w;
  for (int i = 0; i < w.spec.n; ++i) {
    Vec2 v = w.velocities[i] * (1.0 - ph.damping) + forces[i] * ph.dt;
    const double speed = v.norm();
    if (speed > ph.v_max) v = v * (ph.v_max / speed);
    out.next.velocities[i] = v;
    out.next.positions[i] = w.positions[i] + v * ph.dt;
  }
  out.next.t = w.t + 1;
  out.reward = reward_particle(out.next);
  out.done = out.next.t == ph.horizon;
  out.obs.reserve(w.spec.n);
  for (int i = 0; i < w.spec.n; ++i) out.obs.push_back(particle::observe(out.next, i));
  return out;
}

void write_trajectory_csv(std::ostream& out, std::span<const TrajectoryRow> rows) {
  out << "t,agent,x,y,vx,vy,fx,fy,reward\n";
  for (const auto& r : rows) {
    out << r.t << ',' << r.agent << ',' << format_real(r.position.x) << ','
        << format_real(r.position.y) << ',' << format_real(r.velocity.x) << ','
        << format_real(r.velocity.y) << ',' << format_real(r.force.x) << ','
        << format_real(r.force.y) << ',' << format_real(r.reward) << '\n';
  }
}

}  // namespace mesa::particle
