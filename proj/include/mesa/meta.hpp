#pragma once

// Meta-training of exploration policies over a set of training tasks and
// meta-testing with annealed mixing of those policies into an off-policy
// learner's rollouts.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mesa/climb.hpp"
#include "mesa/env.hpp"
#include "mesa/kvconfig.hpp"
#include "mesa/learner.hpp"
#include "mesa/particle.hpp"
#include "mesa/replay.hpp"
#include "mesa/subspace.hpp"

namespace mesa::meta {

enum class AnnealShape { kLinear, kStep };

struct AnnealSchedule {
  double p_start = 0.5;
  long long t_end = 0;
  AnnealShape shape = AnnealShape::kLinear;

  void validate() const;
};

double anneal_probability(const AnnealSchedule& s, long long t);

// (phase, step, metric, value)
using MetricFn = std::function<void(const std::string&, long long, const std::string&, double)>;

struct MetaTrainConfig {
  int E = 4;
  double r_star = 1.0;
  double relabel_gamma = 0.05;
  long long collection_steps = 10000;  // per training task
  long long training_steps = 10000;    // budget per exploration policy
  long long min_training_steps = 4000; // no convergence check before this
  int conv_window = 50;
  double conv_tol = 0.02;
  int clusters = 16;
  double dist_eps = 0.1;
  double fd_exponent = 5.0;
  std::size_t max_valuable = 5000;
  int max_attempts = 3;
  // Uniform harvest actions are held for this many steps (1 = i.i.d.).
  int harvest_action_hold = 1;
  LearnerConfig collect_learner;
  LearnerConfig explore_learner;
  particle::Physics physics;

  void validate() const;
};

struct HarvestStats {
  int task = 0;
  long long episodes = 0;
  double max_reward = 0.0;
  long long hits = 0;  // steps with reward >= R*
};

struct ExplorationPolicy {
  std::shared_ptr<Learner> learner;
  std::vector<long long> histogram;  // gated visits per cluster during training
  std::vector<long long> last_visits;  // same, final training trajectory only; feeds the global counts
  long long steps = 0;
  long long episodes = 0;
  bool converged = false;
  int attempts = 1;
  std::vector<double> returns;  // shaped return per episode

  int clusters_covered() const;
};

struct MetaTrainResult {
  std::vector<climb::ClimbTaskSpec> tasks;
  std::vector<ExplorationPolicy> policies;
  subspace::ValuableSet mstar;
  std::vector<Transition> mstar_transitions;  // raw transitions behind stored points
  subspace::ClusterHash hash;
  subspace::PseudoCounts global;
  std::vector<HarvestStats> harvest;
};

// Relative change of the mean over the last `window` entries versus the
// `window` before; converged when below tol. Needs 2*window entries.
bool moving_average_converged(std::span<const double> returns, int window, double tol);

std::vector<std::unique_ptr<Environment>> make_envs(const std::vector<climb::ClimbTaskSpec>& tasks,
                                                     const particle::Physics& physics);

// Phase (a): throwaway learners per task, logged and relabeled into M*.
void harvest(const std::vector<climb::ClimbTaskSpec>& tasks, const MetaTrainConfig& cfg, std::uint64_t seed,
             MetaTrainResult& out, const MetricFn& metric = {});

ExplorationPolicy train_exploration_policy(const subspace::ValuableSet& mstar, const subspace::ClusterHash& hash,
                                           const subspace::PseudoCounts& global,
                                           const std::vector<std::unique_ptr<Environment>>& envs,
                                           const MetaTrainConfig& cfg, std::uint64_t seed,
                                           const MetricFn& metric = {});

MetaTrainResult meta_train(const std::vector<climb::ClimbTaskSpec>& tasks, const MetaTrainConfig& cfg,
                           std::uint64_t seed, const MetricFn& metric = {});

struct MetaTestConfig {
  long long steps = 50000;
  long long eval_interval = 1000;
  int eval_episodes = 1;
  AnnealSchedule schedule;  // t_end is replaced by t_end_fraction * steps
  double t_end_fraction = 0.4;
  LearnerConfig learner;
  bool prefill_valuable = false;  // seed the buffer with M* transitions
  particle::Physics physics;

  void validate() const;
};

struct CurvePoint {
  long long step = 0;
  double value = 0.0;  // mean greedy episode return
};

struct EpisodeRecord {
  long long end_step = 0;
  double ret = 0.0;
  bool hit = false;  // some step reached reward >= 1
  RolloutSource source = RolloutSource::kLearner;
};

struct MetaTestResult {
  std::shared_ptr<Learner> learner;
  std::vector<CurvePoint> curve;
  std::vector<EpisodeRecord> episodes;
  long long from_exploration = 0;  // transitions by source
  long long from_learner = 0;
  long long from_warmup = 0;
  long long prefilled = 0;
  ReplayBuffer buffer{1};

  double final_return() const { return curve.empty() ? 0.0 : curve.back().value; }
  // Fraction of episodes ending in the last `fraction` of training with a hit.
  double hit_rate(double fraction, long long total_steps) const;
};

// With an empty policy set (or p_e = 0) this is the plain learner baseline.
MetaTestResult meta_test(const climb::ClimbTaskSpec& task, const std::vector<ExplorationPolicy>& policies,
                         const std::vector<Transition>& prefill, const MetaTestConfig& cfg, std::uint64_t seed,
                         const MetricFn& metric = {});

// Mean greedy return over `episodes` fresh episodes.
double evaluate_greedy(const Learner& learner, Environment& env, int episodes, Rng& rng);

// Average per-episode count of gated visits (distance to M* below eps) for
// a policy on the given environments; `policy` may be null for uniform actions.
double gated_visit_rate(const Learner* policy, const std::vector<std::unique_ptr<Environment>>& envs,
                        const subspace::RadiusIndex& index, int episodes, std::uint64_t seed);

// Directory form: manifest.conf, tasks.conf, mstar.csv, centroids.csv,
// prefill.txt and one checkpoint per policy.
void save_manifest(const std::string& dir, const MetaTrainResult& r, const std::string& config_fingerprint);
MetaTrainResult load_manifest(const std::string& dir, const particle::Physics& physics,
                              std::string* config_fingerprint = nullptr);

void write_physics(KvDoc& doc, const std::string& prefix, const particle::Physics& p);
particle::Physics read_physics(const KvDoc& doc, const std::string& prefix, const particle::Physics& d = {});

void write_meta_train_config(KvDoc& doc, const std::string& prefix, const MetaTrainConfig& c);
MetaTrainConfig read_meta_train_config(const KvDoc& doc, const std::string& prefix, const MetaTrainConfig& d = {});
void write_meta_test_config(KvDoc& doc, const std::string& prefix, const MetaTestConfig& c);
MetaTestConfig read_meta_test_config(const KvDoc& doc, const std::string& prefix, const MetaTestConfig& d = {});

}  // namespace mesa::meta
