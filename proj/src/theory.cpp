#include "mesa/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "mesa/errors.hpp"
#include "mesa/rng.hpp"

namespace mesa::theory {

double harmonic_number(long long T) {
  if (T <= 0) return 0.0;
  if (T <= 100000) {
    double h = 0.0;
    for (long long t = T; t >= 1; --t) h += 1.0 / static_cast<double>(t);
    return h;
  }
  const double x = static_cast<double>(T);
  constexpr double kEulerGamma = 0.57721566490153286061;
  return std::log(x) + kEulerGamma + 1.0 / (2 * x) - 1.0 / (12 * x * x) + 1.0 / (120 * x * x * x * x);
}

namespace {

void check_greedy(const Strategy& s, int U) {
  require(s.greedy[0] > 0 && s.greedy[0] < U && s.greedy[1] > 0 && s.greedy[1] < U,
          ErrorKind::kInvalidArgument,
          "epsilon-greedy exploration needs a greedy cell inside the sub-optimal block");
}

}  // namespace

ExplorationProfile exploration_profile(const Strategy& strategy, int U, long long T,
                                       double sigma_w, double sigma_e) {
  require(U >= 2 && T >= 1, ErrorKind::kInvalidArgument, "exploration_profile: need U >= 2, T >= 1");
  require(sigma_w > 0 && sigma_e > 0, ErrorKind::kInvalidArgument,
          "exploration_profile: variances must be positive");
  ExplorationProfile p;
  p.U = U;
  p.m = U - 1;
  p.T = T;
  p.sigma_w = sigma_w;
  p.sigma_e = sigma_e;
  p.lambda = static_cast<double>(T) * sigma_w * sigma_w / (sigma_e * sigma_e);
  const double u2 = static_cast<double>(U) * U;
  const double m = p.m;
  const double Td = static_cast<double>(T);

  // Total uniform mass spent over T steps; the remainder goes to the greedy cell.
  double uniform_mass = 0.0;
  switch (strategy.kind) {
    case StrategyKind::kUniform:
      p.f0 = 1.0 / u2;
      p.f1 = 2.0 * m / u2;
      p.f2 = m * m / u2;
      return p;
    case StrategyKind::kStructured:
      p.f0 = 1.0 / U;
      p.f1 = 0.0;
      p.f2 = m / U;
      return p;
    case StrategyKind::kEpsGreedyFixed:
      check_greedy(strategy, U);
      require(strategy.epsilon >= 0.0 && strategy.epsilon <= 1.0, ErrorKind::kInvalidArgument,
              "exploration_profile: epsilon outside [0, 1]");
      uniform_mass = 1.0 + (Td - 1.0) * strategy.epsilon;
      break;
    case StrategyKind::kEpsGreedyDecay:
      check_greedy(strategy, U);
      uniform_mass = harmonic_number(T);
      break;
  }
  p.f0 = uniform_mass / (Td * u2);
  p.f1 = uniform_mass * 2.0 * m / (Td * u2);
  p.f2 = (uniform_mass * m * m / u2 + (Td - uniform_mass)) / Td;
  return p;
}

ExplorationProfile make_profile(double f0, double f1, double f2, int U, double lambda) {
  require(U >= 2 && lambda > 0, ErrorKind::kInvalidArgument, "make_profile: need U >= 2, lambda > 0");
  require(f0 >= 0 && f1 >= 0 && f2 >= 0 && f0 + f1 + f2 > 0, ErrorKind::kInvalidArgument,
          "make_profile: masses must be non-negative");
  const double s = f0 + f1 + f2;
  ExplorationProfile p;
  p.f0 = f0 / s;
  p.f1 = f1 / s;
  p.f2 = f2 / s;
  p.U = U;
  p.m = U - 1;
  p.lambda = lambda;
  p.T = std::max<long long>(1, std::llround(lambda));
  return p;
}

Eigen::MatrixXd strategy_matrix(const Strategy& strategy, int U, long long t) {
  require(U >= 2 && t >= 1, ErrorKind::kInvalidArgument, "strategy_matrix: need U >= 2, t >= 1");
  const double u2 = static_cast<double>(U) * U;
  switch (strategy.kind) {
    case StrategyKind::kUniform:
      return Eigen::MatrixXd::Constant(U, U, 1.0 / u2);
    case StrategyKind::kStructured:
      return Eigen::MatrixXd::Identity(U, U) / U;
    case StrategyKind::kEpsGreedyFixed:
    case StrategyKind::kEpsGreedyDecay: {
      check_greedy(strategy, U);
      double eps = strategy.kind == StrategyKind::kEpsGreedyFixed ? strategy.epsilon
                                                                  : 1.0 / static_cast<double>(t);
      if (t == 1) eps = 1.0;
      Eigen::MatrixXd m = Eigen::MatrixXd::Constant(U, U, eps / u2);
      m(strategy.greedy[0], strategy.greedy[1]) += 1.0 - eps;
      return m;
    }
  }
  return {};
}

Eigen::MatrixXd profile_matrix(const ExplorationProfile& p) {
  const int U = p.U;
  const double m = p.m;
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(U, U, p.f2 / (m * m));
  out(0, 0) = p.f0;
  for (int i = 1; i < U; ++i) {
    out(0, i) = p.f1 / (2 * m);
    out(i, 0) = p.f1 / (2 * m);
  }
  return out;
}

Eigen::MatrixXd climb_reward_matrix(int U, double r, double delta) {
  Eigen::MatrixXd R = Eigen::MatrixXd::Constant(U, U, r * (1.0 - delta));
  R.row(0).setZero();
  R.col(0).setZero();
  R(0, 0) = r;
  return R;
}

Eigen::MatrixXd ReducedQParams::q_matrix(int U) const {
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(U, U, q_block());
  for (int i = 1; i < U; ++i) {
    q(0, i) = q_cross();
    q(i, 0) = q_cross();
  }
  q(0, 0) = q_optimal();
  return q;
}

ReducedQParams solve_mle_reduced(const ExplorationProfile& p, double r, double delta) {
  if (p.degenerate()) {
    fail(ErrorKind::kDegenerateProfile,
         "solve_mle_reduced: every visit frequency must be positive (use solve_mle_oracle)");
  }
  const double m = p.m;
  const double m2 = m * m;
  const double lam = p.lambda;
  const double f0 = p.f0, f1 = p.f1, f2 = p.f2;

  const double den = 1.0 + 2.0 * f2 * (f1 * lam + 2.0 * m) * m / (f1 * (f2 * lam + m2)) +
                     f2 * (f0 * lam + 1.0) * m2 / (f0 * (f2 * lam + m2));

  ReducedQParams q;
  // Block residual; negative because the additive part underfits the block.
  q.K2 = -r * (2.0 - delta) / den;
  q.W2 = -(f2 * lam / (f2 * lam + m2)) * q.K2;
  const double z2 = q.W2 + q.K2;
  const double z1 = -(2.0 * f2 / f1) * z2;
  q.K1 = z1 * (f1 * lam + 2.0 * m) / (2.0 * m);
  q.W1 = z1 - q.K1;
  const double z0 = -(f1 / (2.0 * f0)) * z1;
  q.K0 = z0 * (f0 * lam + 1.0);
  q.W0 = z0 - q.K0;
  // Gauge: D = 0 (b, c, d are only identified up to b+a, c+a, d-2a).
  q.D = 0.0;
  q.B = (q.K0 + r) / 2.0;
  q.C = (q.K2 + r * (1.0 - delta)) / 2.0;
  return q;
}

Eigen::MatrixXd FullQParams::q_matrix() const {
  const auto U = W.rows();
  Eigen::MatrixXd q = W;
  for (Eigen::Index i = 0; i < U; ++i) {
    for (Eigen::Index j = 0; j < U; ++j) q(i, j) += b(i) + c(j) + d;
  }
  return q;
}

FullQParams solve_mle_oracle_mean(const Eigen::MatrixXd& mean_pe, long long T, double r,
                                  double delta, double sigma_w, double sigma_e) {
  const auto U = static_cast<int>(mean_pe.rows());
  require(U >= 2 && mean_pe.cols() == U, ErrorKind::kInvalidArgument,
          "solve_mle_oracle: visit matrix must be square with U >= 2");
  require(T >= 1 && sigma_w > 0 && sigma_e > 0, ErrorKind::kInvalidArgument,
          "solve_mle_oracle: need T >= 1 and positive variances");
  require((mean_pe.array() >= 0.0).all() && std::abs(mean_pe.sum() - 1.0) < 1e-9,
          ErrorKind::kInvalidArgument, "solve_mle_oracle: visit matrix is not a distribution");

  const double lambda = static_cast<double>(T) * sigma_w * sigma_w / (sigma_e * sigma_e);
  const Eigen::MatrixXd R = climb_reward_matrix(U, r, delta);
  const int nw = U * U;
  const int dim = nw + 2 * U + 1;
  auto w_idx = [&](int i, int j) { return i * U + j; };
  auto b_idx = [&](int i) { return nw + i; };
  auto c_idx = [&](int j) { return nw + U + j; };
  const int d_idx = dim - 1;

  // Scaled normal equations of the concave objective:
  // (sum_ij P_ij phi phi' + I_W / lambda) theta = sum_ij P_ij R_ij phi.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  for (int i = 0; i < U; ++i) {
    for (int j = 0; j < U; ++j) {
      const double w = mean_pe(i, j);
      if (w == 0.0) continue;
      const std::array<int, 4> idx{w_idx(i, j), b_idx(i), c_idx(j), d_idx};
      for (int a : idx) {
        rhs(a) += w * R(i, j);
        for (int b : idx) A(a, b) += w;
      }
    }
  }
  for (int k = 0; k < nw; ++k) A(k, k) += 1.0 / lambda;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const Eigen::MatrixXd& V = eig.eigenvectors();
  const double cutoff = 1e-11 * std::max(1.0, ev.cwiseAbs().maxCoeff());

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);
  FullQParams out;
  out.q_unique = true;
  for (int k = 0; k < dim; ++k) {
    if (ev(k) > cutoff) {
      theta += V.col(k) * (V.col(k).dot(rhs) / ev(k));
      ++out.rank;
      continue;
    }
    // Null direction: does it move any prediction q(e_i, e_j)?
    for (int i = 0; i < U && out.q_unique; ++i) {
      for (int j = 0; j < U; ++j) {
        const double dq = V(w_idx(i, j), k) + V(b_idx(i), k) + V(c_idx(j), k) + V(d_idx, k);
        if (std::abs(dq) > 1e-8) {
          out.q_unique = false;
          break;
        }
      }
    }
  }

  out.W.resize(U, U);
  out.b.resize(U);
  out.c.resize(U);
  for (int i = 0; i < U; ++i) {
    for (int j = 0; j < U; ++j) out.W(i, j) = theta(w_idx(i, j));
    out.b(i) = theta(b_idx(i));
    out.c(i) = theta(c_idx(i));
  }
  out.d = theta(d_idx);
  return out;
}

FullQParams solve_mle_oracle(std::span<const Eigen::MatrixXd> pe, double r, double delta,
                             double sigma_w, double sigma_e) {
  require(!pe.empty(), ErrorKind::kInvalidArgument, "solve_mle_oracle: no exploration steps");
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(pe[0].rows(), pe[0].cols());
  for (const auto& m : pe) {
    require(m.rows() == mean.rows() && m.cols() == mean.cols(), ErrorKind::kInvalidArgument,
            "solve_mle_oracle: visit matrices differ in shape");
    require(std::abs(m.sum() - 1.0) < 1e-9 && (m.array() >= 0.0).all(),
            ErrorKind::kInvalidArgument, "solve_mle_oracle: a step matrix is not a distribution");
    mean += m;
  }
  mean /= static_cast<double>(pe.size());
  return solve_mle_oracle_mean(mean, static_cast<long long>(pe.size()), r, delta, sigma_w,
                               sigma_e);
}

bool is_equivalently_optimal(const Eigen::MatrixXd& q, double tol) {
  return q(0, 0) >= q.maxCoeff() - tol;
}

double criterion_margin(const ExplorationProfile& p, double r, double delta) {
  if (p.degenerate()) {
    fail(ErrorKind::kDegenerateProfile, "criterion needs f0, f1, f2 > 0");
  }
  const double m = p.m;
  const double m2 = m * m;
  const double lam = p.lambda;
  const double f0 = p.f0, f1 = p.f1, f2 = p.f2;
  const double den = 1.0 + 2.0 * f2 * (f1 * lam + 2.0 * m) * m / (f1 * (f2 * lam + m2)) +
                     f2 * (f0 * lam + 1.0) * m2 / (f0 * (f2 * lam + m2));
  const double rhs = (f2 / f0 - 1.0) * (m2 / (f2 * lam + m2)) * r * (2.0 - delta) / den;
  return r * delta - rhs;
}

bool criterion_holds(const ExplorationProfile& p, double r, double delta) {
  // Equality counts as holding; a few ulps absorb rounding at exact boundaries.
  const double margin = criterion_margin(p, r, delta);
  return margin >= -64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(r));
}

double uniform_lambda_threshold(int U, double delta) {
  const double m = U - 1;
  return static_cast<double>(U) * U *
         ((m * m - 1.0) * (2.0 - delta) / ((m + 1.0) * (m + 1.0) * delta) - 1.0);
}

ThresholdResult min_exploration_steps(const Strategy& strategy, int U, double delta,
                                      double sigma_w, double sigma_e, long long max_steps) {
  require(max_steps >= 1, ErrorKind::kInvalidArgument, "min_exploration_steps: max_steps < 1");
  auto holds = [&](long long T) {
    return criterion_holds(exploration_profile(strategy, U, T, sigma_w, sigma_e), 1.0, delta);
  };

  // Monotonicity check on a log-spaced grid: once the criterion holds it must keep holding.
  constexpr int kGrid = 256;
  bool seen_true = false;
  long long prev = 0;
  for (int g = 0; g <= kGrid; ++g) {
    const auto T = std::max<long long>(
        1, std::llround(std::exp(std::log(static_cast<double>(max_steps)) * g / kGrid)));
    if (T == prev) continue;
    prev = T;
    const bool h = holds(T);
    if (seen_true && !h) {
      fail(ErrorKind::kInvalidState,
           "min_exploration_steps: criterion is not monotone in the number of steps");
    }
    seen_true = seen_true || h;
  }

  if (holds(1)) return {1, false};
  long long lo = 1;  // fails
  long long hi = 2;
  while (!holds(hi)) {
    lo = hi;
    if (hi >= max_steps) return {max_steps, true};
    hi = std::min(max_steps, hi * 2);
  }
  while (hi - lo > 1) {
    const long long mid = lo + (hi - lo) / 2;
    (holds(mid) ? hi : lo) = mid;
  }
  return {hi, false};
}

namespace {

void check_density(const DiscretizedDensity& d, const char* name) {
  require(!d.values.empty() && d.cell_width > 0, ErrorKind::kInvalidArgument,
          std::string("pfail_estimate: empty density ") + name);
  double mass = 0.0;
  for (double v : d.values) {
    require(v >= 0.0 && std::isfinite(v), ErrorKind::kInvalidArgument,
            std::string("pfail_estimate: negative density ") + name);
    mass += v * d.cell_width;
  }
  require(std::abs(mass - 1.0) < 1e-9, ErrorKind::kInvalidArgument,
          std::string("pfail_estimate: density ") + name + " is not normalized");
}

}  // namespace

PfailEstimate pfail_estimate(const DiscretizedDensity& goal, const DiscretizedDensity& sample,
                             double epsilon, long long N, long long mc_samples,
                             std::uint64_t seed) {
  check_density(goal, "p");
  check_density(sample, "q");
  require(goal.values.size() == sample.values.size() && goal.cell_width == sample.cell_width,
          ErrorKind::kInvalidArgument, "pfail_estimate: densities live on different grids");
  require(epsilon > 0 && N >= 1 && mc_samples >= 1, ErrorKind::kInvalidArgument,
          "pfail_estimate: need epsilon > 0, N >= 1, mc_samples >= 1");
  for (double q : sample.values) {
    require(epsilon * q <= 1.0, ErrorKind::kInvalidArgument,
            "pfail_estimate: epsilon * q(x) exceeds 1");
  }

  const double w = goal.cell_width;
  const double k = epsilon * static_cast<double>(N);
  const bool bound_applies = k > 16.0;
  const double scale = 0.5 * std::log(k);

  PfailEstimate out;
  std::vector<double> cdf;
  cdf.reserve(goal.values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < goal.values.size(); ++i) {
    const double p = goal.values[i];
    const double q = sample.values[i];
    const double miss = std::pow(1.0 - epsilon * q, static_cast<double>(N));
    out.integral += p * w * miss;
    if (p > 0.0) {
      if (!bound_applies || q == 0.0) {
        out.bound = std::numeric_limits<double>::infinity();
      } else {
        out.bound += p * w * (std::log(1.0 / q) + 2.0 * q + 16.0) / scale;
      }
    }
    acc += p * w;
    cdf.push_back(acc);
  }
  if (!bound_applies) out.bound = std::numeric_limits<double>::infinity();

  Rng rng(seed);
  double sum = 0.0;
  for (long long s = 0; s < mc_samples; ++s) {
    const double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto i = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    sum += std::pow(1.0 - epsilon * sample.values[i], static_cast<double>(N));
  }
  out.mc = sum / static_cast<double>(mc_samples);
  return out;
}

double lemma_slack(double k, double x) {
  const double half_log_k = 0.5 * std::log(k);
  return std::log(1.0 / x) / half_log_k + x / half_log_k + x / k - std::exp(-k * x);
}

}  // namespace mesa::theory
