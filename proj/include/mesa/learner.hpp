#pragma once

// Off-policy cooperative learners: a centralized Q learner for the discrete
// climb games (joint head for small joint action spaces, additive per-agent
// head otherwise) and a MADDPG-style deterministic actor-critic for the
// particle game.

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mesa/env.hpp"
#include "mesa/kvconfig.hpp"
#include "mesa/nn.hpp"
#include "mesa/replay.hpp"
#include "mesa/rng.hpp"

namespace mesa {

enum class HeadKind { kAuto, kJoint, kFactored };

const char* to_string(HeadKind h);
HeadKind head_from_string(std::string_view s);

struct LearnerConfig {
  double lr_actor = 1e-4;
  double lr_critic = 5e-3;
  double gamma = 0.95;
  double tau = 0.01;
  int batch_size = 32;
  double clip_norm = 10.0;
  nn::OptimizerKind optimizer = nn::OptimizerKind::kSgd;
  std::vector<int> hidden{64, 64};
  HeadKind head = HeadKind::kAuto;

  // Behaviour-policy exploration, annealed linearly over explore_decay_steps.
  double eps_start = 1.0;
  double eps_end = 0.05;
  double noise_start = 0.5;
  double noise_end = 0.1;
  long long explore_decay_steps = 10000;

  long long warmup_steps = 3000;       // uniform-random steps before any update
  std::size_t buffer_capacity = 100000;
  int train_every = 1;                 // env steps between update rounds
  int updates_per_round = 1;
  bool train_on_shaped = false;        // learn from Transition::shaped instead of reward

  void validate() const;
};

void write_learner_config(KvDoc& doc, const std::string& prefix, const LearnerConfig& cfg);
LearnerConfig read_learner_config(const KvDoc& doc, const std::string& prefix,
                                  const LearnerConfig& defaults = {});
// Keys understood by read_learner_config (without prefix).
const std::vector<std::string>& learner_config_keys();

enum class ActKind { kGreedy, kEpsGreedy, kUniform, kNoisyDeterministic };

struct ActMode {
  ActKind kind = ActKind::kGreedy;
  double param = 0.0;  // epsilon or noise sigma

  static ActMode greedy() { return {}; }
  static ActMode eps_greedy(double eps) { return {ActKind::kEpsGreedy, eps}; }
  static ActMode uniform() { return {ActKind::kUniform, 0.0}; }
  static ActMode noisy(double sigma) { return {ActKind::kNoisyDeterministic, sigma}; }
};

// Resolved Q head: joint (U^n outputs) or factored (n*U outputs, Q = sum_i Q_i).
struct QHead {
  HeadKind kind = HeadKind::kJoint;
  int n = 2;
  int U = 2;

  static QHead resolve(HeadKind requested, int n, int U);
  int output_size() const;
  double value(const Eigen::Ref<const Eigen::VectorXd>& out, std::span<const double> action) const;
  double max_value(const Eigen::Ref<const Eigen::VectorXd>& out) const;
  std::vector<double> argmax(const Eigen::Ref<const Eigen::VectorXd>& out) const;
  // d value / d out for the given action, written into grad (zeroed first).
  void value_grad(std::span<const double> action, Eigen::Ref<Eigen::VectorXd> grad) const;
};

struct QUpdateResult {
  nn::MlpParams q;
  double loss = 0.0;  // mean squared TD error before the step
};

// One gradient step on the mean squared TD error with target
// r + gamma (1 - done) max_a' q_target(s', a').
QUpdateResult q_update(const nn::MlpParams& q, const nn::MlpParams& q_target,
                       std::span<const Transition* const> batch, const LearnerConfig& cfg,
                       const QHead& head, nn::Optimizer* optimizer = nullptr);

// Deterministic actor: tanh(mlp(obs)), one column per sample.
Eigen::MatrixXd actor_forward(const nn::MlpParams& actor, const Eigen::MatrixXd& obs,
                              nn::MlpTape* tape = nullptr);

// One deterministic-policy-gradient ascent step. dq_da maps a batch of
// actions (columns) to dQ/da; returns the mean |gradient| norm before clipping.
double actor_ascent_step(nn::MlpParams& actor, nn::Optimizer& opt, const Eigen::MatrixXd& obs,
                         const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& dq_da,
                         double clip_norm);

struct ActorCriticState {
  std::vector<nn::MlpParams> actors;
  std::vector<nn::MlpParams> actor_targets;
  nn::MlpParams critic;
  nn::MlpParams critic_target;
  std::vector<nn::Optimizer> actor_opts;
  nn::Optimizer critic_opt;
};

struct ActorCriticLosses {
  double critic = 0.0;
  std::vector<double> actor;  // mean -Q per agent after the critic step
};

// Critic TD step (target actions from target actors), one DPG step per
// actor, then soft target updates. Throws kTrainingDiverged on NaN.
ActorCriticLosses actor_critic_update(ActorCriticState& s, std::span<const Transition* const> batch,
                                      const LearnerConfig& cfg, int n, int action_dim);

class Learner {
 public:
  virtual ~Learner() = default;

  virtual std::vector<double> act(const EnvView& view, const ActMode& mode, Rng& rng) const = 0;
  // One gradient step; returns the critic loss.
  virtual double update(std::span<const Transition* const> batch) = 0;
  virtual std::unique_ptr<Learner> clone() const = 0;
  virtual std::string kind() const = 0;

  virtual void save(std::ostream& out) const = 0;
  virtual void load(std::istream& in) = 0;

  const LearnerConfig& config() const { return cfg_; }
  const ActionSpace& action_space() const { return space_; }

  // Annealed behaviour mode at a given environment step.
  ActMode behaviour_mode(long long step) const;

 protected:
  Learner(LearnerConfig cfg, ActionSpace space) : cfg_(std::move(cfg)), space_(space) {}

  LearnerConfig cfg_;
  ActionSpace space_;
};

std::vector<double> uniform_action(const ActionSpace& space, Rng& rng);

class QLearner final : public Learner {
 public:
  QLearner(const LearnerConfig& cfg, ActionSpace space, std::size_t state_size, Rng& rng);

  std::vector<double> act(const EnvView& view, const ActMode& mode, Rng& rng) const override;
  double update(std::span<const Transition* const> batch) override;
  std::unique_ptr<Learner> clone() const override { return std::make_unique<QLearner>(*this); }
  std::string kind() const override { return "q"; }
  void save(std::ostream& out) const override;
  void load(std::istream& in) override;

  const QHead& head() const { return head_; }
  const nn::MlpParams& params() const { return q_; }
  Eigen::VectorXd outputs(const std::vector<double>& state) const;

 private:
  QHead head_;
  nn::MlpParams q_, q_target_;
  nn::Optimizer opt_;
};

class MaddpgLearner final : public Learner {
 public:
  MaddpgLearner(const LearnerConfig& cfg, ActionSpace space, std::size_t state_size,
                std::size_t obs_size, Rng& rng);

  std::vector<double> act(const EnvView& view, const ActMode& mode, Rng& rng) const override;
  double update(std::span<const Transition* const> batch) override;
  std::unique_ptr<Learner> clone() const override { return std::make_unique<MaddpgLearner>(*this); }
  std::string kind() const override { return "maddpg"; }
  void save(std::ostream& out) const override;
  void load(std::istream& in) override;

  const ActorCriticState& state() const { return s_; }
  ActorCriticState& mutable_state() { return s_; }

 private:
  ActorCriticState s_;
};

std::unique_ptr<Learner> make_learner(const LearnerConfig& cfg, const Environment& env, Rng& rng);

// Checkpoint: learner kind, config, parameters and (optionally) an RNG state.
void save_checkpoint(std::ostream& out, const Learner& learner, const Rng* rng = nullptr);
std::unique_ptr<Learner> load_checkpoint(std::istream& in, const Environment& env, Rng* rng = nullptr);

}  // namespace mesa
