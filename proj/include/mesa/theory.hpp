#pragma once

// Exploration-efficiency analysis of the 2-agent climb game G_f(2, 0, U)
// under a quadratic joint-Q model q(x, y) = x'Wy + b'x + c'y + d with a
// Gaussian prior on W. Two independent routes to the MAP estimate are
// provided: the symmetric six-parameter closed form (solve_mle_reduced) and
// the full normal-equation solve (solve_mle_oracle).

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mesa::theory {

enum class StrategyKind { kUniform, kStructured, kEpsGreedyFixed, kEpsGreedyDecay };

struct Strategy {
  StrategyKind kind = StrategyKind::kUniform;
  double epsilon = 0.0;             // kEpsGreedyFixed only
  std::array<int, 2> greedy{1, 1};  // ε-greedy variants: the sub-optimal greedy cell

  static Strategy uniform() { return {}; }
  static Strategy structured() { return {StrategyKind::kStructured}; }
  static Strategy eps_greedy(double eps, std::array<int, 2> cell = {1, 1}) {
    return {StrategyKind::kEpsGreedyFixed, eps, cell};
  }
  static Strategy eps_decay(std::array<int, 2> cell = {1, 1}) {
    return {StrategyKind::kEpsGreedyDecay, 0.0, cell};
  }
};

// Step-averaged visit frequencies of the optimal cell (f0), the 2m cross
// cells (f1) and the m^2 block cells (f2), with lambda = T sigma_w^2 / sigma_e^2.
struct ExplorationProfile {
  double f0 = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  int m = 1;
  double lambda = 1.0;
  int U = 2;
  long long T = 1;
  double sigma_w = 1.0;
  double sigma_e = 1.0;

  bool degenerate() const { return f0 <= 0.0 || f1 <= 0.0 || f2 <= 0.0; }
};

ExplorationProfile exploration_profile(const Strategy& strategy, int U, long long T,
                                       double sigma_w, double sigma_e);

// A symmetric profile with the given masses (normalized) and lambda.
ExplorationProfile make_profile(double f0, double f1, double f2, int U, double lambda);

// Per-step visit matrix p_e^{(t)} (t is 1-based) of a strategy.
Eigen::MatrixXd strategy_matrix(const Strategy& strategy, int U, long long t);

// U x U matrix spreading f0/f1/f2 uniformly over their cells.
Eigen::MatrixXd profile_matrix(const ExplorationProfile& profile);

Eigen::MatrixXd climb_reward_matrix(int U, double r, double delta);

struct ReducedQParams {
  double W0 = 0, W1 = 0, W2 = 0;
  double B = 0, C = 0, D = 0;
  double K0 = 0, K1 = 0, K2 = 0;

  double q_optimal() const { return W0 + 2 * B + D; }
  double q_cross() const { return W1 + B + C + D; }
  double q_block() const { return W2 + 2 * C + D; }
  Eigen::MatrixXd q_matrix(int U) const;
};

ReducedQParams solve_mle_reduced(const ExplorationProfile& profile, double r, double delta);

struct FullQParams {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
  double d = 0.0;
  int rank = 0;
  // False when the normal system leaves some q(e_i, e_j) undetermined; the
  // returned parameters are then the minimum-norm maximizer.
  bool q_unique = true;

  Eigen::MatrixXd q_matrix() const;
};

FullQParams solve_mle_oracle(std::span<const Eigen::MatrixXd> pe, double r, double delta,
                             double sigma_w, double sigma_e);

// Same estimator given the step-averaged visit matrix and the step count.
FullQParams solve_mle_oracle_mean(const Eigen::MatrixXd& mean_pe, long long T, double r,
                                  double delta, double sigma_w, double sigma_e);

// q(e0, e0) attains the maximum (ties within tol count as optimal).
bool is_equivalently_optimal(const Eigen::MatrixXd& q, double tol = 1e-9);

// r*delta minus the right-hand side of the equivalent-optimality criterion.
double criterion_margin(const ExplorationProfile& profile, double r, double delta);
bool criterion_holds(const ExplorationProfile& profile, double r, double delta);

struct ThresholdResult {
  long long steps = 0;
  bool unbounded = false;
};

// Smallest T whose profile satisfies the criterion (r = 1).
ThresholdResult min_exploration_steps(const Strategy& strategy, int U, double delta,
                                      double sigma_w, double sigma_e,
                                      long long max_steps = 1'000'000'000LL);

// Real-valued lambda at which uniform exploration meets the criterion.
double uniform_lambda_threshold(int U, double delta);

// Piecewise-constant density on a 1-D grid: values integrate to one with
// the given cell width.
struct DiscretizedDensity {
  std::vector<double> values;
  double cell_width = 1.0;
};

struct PfailEstimate {
  double mc = 0.0;
  double integral = 0.0;
  double bound = 0.0;
};

PfailEstimate pfail_estimate(const DiscretizedDensity& goal, const DiscretizedDensity& sample,
                             double epsilon, long long N, long long mc_samples,
                             std::uint64_t seed);

// Right-hand side minus left-hand side of the scalar lemma
// exp(-kx) <= log(1/x)/(log(k)/2) + x/(log(k)/2) + x/k.
double lemma_slack(double k, double x);

double harmonic_number(long long T);

}  // namespace mesa::theory
