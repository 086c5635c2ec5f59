#pragma once

// Discrete climb games: one-step and multi-stage matrix games with a single
// Pareto-optimal joint action per stage and a large block of safer
// sub-optimal equilibria.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mesa/geometry.hpp"

namespace mesa::climb {

enum class Variant { kOneStep, kMultiStage, kParticle };

const char* to_string(Variant v);
Variant variant_from_string(std::string_view s);

// One climb sub-game: reward 1 when exactly k agents play u, 1 - delta when
// nobody plays u, 0 otherwise.
struct Stage {
  int k = 1;
  int u = 0;
  friend bool operator==(const Stage&, const Stage&) = default;
};

struct ClimbTaskSpec {
  Variant variant = Variant::kOneStep;
  int n = 2;
  int U = 2;
  double delta = 0.5;
  std::vector<Stage> stages;
  std::vector<Vec2> landmarks;  // particle variant only

  int num_stages() const { return static_cast<int>(stages.size()); }

  // Throws kInvalidArgument naming the violated invariant. min_landmark_sep
  // only applies to the particle variant.
  void validate(double min_landmark_sep = 0.0) const;

  friend bool operator==(const ClimbTaskSpec&, const ClimbTaskSpec&) = default;
};

using JointAction = std::vector<int>;

// Reward of one climb sub-game for a joint action.
double stage_reward(int n, const Stage& stage, double delta,
                    std::span<const int> actions);

double reward_one_step(const ClimbTaskSpec& spec, std::span<const int> actions);

struct GameState {
  int stage = 0;
  std::vector<JointAction> history;
  friend bool operator==(const GameState&, const GameState&) = default;
};

// Fixed observation length S*n*U + 1: [t/S, one-hot history zero-padded].
std::size_t observation_size(const ClimbTaskSpec& spec);
std::vector<double> observe(const ClimbTaskSpec& spec, const GameState& state);

struct StageStep {
  GameState next;
  double reward = 0.0;
  bool done = false;
  std::vector<std::vector<double>> obs;  // one entry per agent
};

StageStep multi_stage_step(const ClimbTaskSpec& spec, const GameState& state,
                           std::span<const int> actions);

// Task spaces. Discrete spaces enumerate every (k, u) assignment per stage;
// the particle space fixes k and draws landmark layouts by rejection.
struct TaskSpace {
  Variant variant = Variant::kOneStep;
  int n = 2;
  int U = 10;
  int S = 1;
  double delta = 0.5;
  int particle_k = 2;
  double arena_halfwidth = 1.0;
  double min_landmark_sep = 0.3;
};

// Number of distinct tasks; saturates at UINT64_MAX for huge spaces and is
// UINT64_MAX for the (continuous) particle space.
std::uint64_t task_space_size(const TaskSpace& space);

// Decodes the index-th task of a discrete space (mixed radix over stages).
ClimbTaskSpec task_at(const TaskSpace& space, std::uint64_t index);

struct TaskSplit {
  std::vector<ClimbTaskSpec> train;
  std::vector<ClimbTaskSpec> test;
};

TaskSplit sample_tasks(const TaskSpace& space, int count_train, int count_test,
                       std::uint64_t seed);

struct EquilibriumClasses {
  std::vector<JointAction> optimal;
  std::vector<JointAction> suboptimal_ne;
  std::vector<JointAction> zero_ne;
};

// Exhaustive pure-strategy classification of a one-step game.
EquilibriumClasses classify_equilibria(const ClimbTaskSpec& spec);

// Key-value text form; round-trips bit-exactly (%.17g for reals).
std::string to_config(const ClimbTaskSpec& spec, std::string_view prefix = "task.");
ClimbTaskSpec spec_from_config(std::string_view text, std::string_view prefix = "task.");

}  // namespace mesa::climb
