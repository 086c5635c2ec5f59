#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "mesa/errors.hpp"
#include "mesa/nn.hpp"
#include "mesa/rng.hpp"

using namespace mesa;
using namespace mesa::nn;

namespace {

Eigen::VectorXd random_vec(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = uniform(rng, -1.0, 1.0);
  return v;
}

// <f(x), c> evaluated at a flattened parameter vector.
double inner(const MlpParams& shape, const Eigen::VectorXd& theta, const Eigen::VectorXd& x,
             const Eigen::VectorXd& c) {
  MlpParams p = shape;
  p.set_flat(theta);
  return mlp_forward(p, x).col(0).dot(c);
}

void check_fd(const std::vector<int>& sizes, std::uint64_t seed) {
  Rng rng(seed);
  MlpParams p = MlpParams::init(sizes, rng);
  // Perturb biases too so every parameter is exercised away from zero.
  Eigen::VectorXd theta = p.flat();
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += uniform(rng, -0.3, 0.3);
  p.set_flat(theta);
  const Eigen::VectorXd x = random_vec(sizes.front(), rng);
  const Eigen::VectorXd c = random_vec(sizes.back(), rng);

  auto eg = mlp_eval_grad(p, x, c);
  const Eigen::VectorXd g = eg.grad.flat();
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp(i) += h;
    tm(i) -= h;
    const double fd = (inner(p, tp, x, c) - inner(p, tm, x, c)) / (2 * h);
    CHECK(std::abs(fd - g(i)) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

}  // namespace

TEST_CASE("zero network gives zero output and bias gradient = cotangent") {
  const std::vector<int> sizes{3, 5, 2};
  MlpParams p = MlpParams::zeros(sizes);
  Eigen::VectorXd x(3);
  x << 0.4, -2.0, 7.0;
  Eigen::VectorXd c(2);
  c << 1.5, -0.25;
  auto eg = mlp_eval_grad(p, x, c);
  CHECK(eg.output.isZero(0.0));
  CHECK(eg.grad.biases.back().isApprox(c));
  CHECK(eg.grad.biases.front().isZero(0.0));
}

TEST_CASE("finite differences on a 4-8-2 network") { check_fd({4, 8, 2}, 7); }

TEST_CASE("finite differences on randomized shapes") {
  Rng rng(99);
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<int> sizes{1 + static_cast<int>(uniform_index(rng, 5))};
    const int layers = 1 + static_cast<int>(uniform_index(rng, 3));
    for (int l = 0; l < layers; ++l) sizes.push_back(1 + static_cast<int>(uniform_index(rng, 6)));
    CAPTURE(trial);
    check_fd(sizes, 1000 + trial);
  }
}

TEST_CASE("input gradient matches finite differences") {
  Rng rng(3);
  const std::vector<int> sizes{3, 6, 6, 2};
  MlpParams p = MlpParams::init(sizes, rng);
  Eigen::VectorXd x = random_vec(3, rng);
  Eigen::VectorXd c = random_vec(2, rng);
  MlpTape tape;
  mlp_forward(p, x, &tape);
  MlpParams g = MlpParams::zeros(sizes);
  Eigen::MatrixXd dx = mlp_backward(p, tape, c, g);
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += 1e-5;
    xm(i) -= 1e-5;
    const double fd = (mlp_forward(p, xp).col(0).dot(c) - mlp_forward(p, xm).col(0).dot(c)) / 2e-5;
    CHECK(dx(i, 0) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("single linear layer computes Wx + b exactly") {
  const std::vector<int> sizes{2, 2};
  MlpParams p = MlpParams::zeros(sizes);
  p.weights[0] << 1, 0, 0, 1;
  p.biases[0] << 0.5, -3;
  Eigen::VectorXd x(2);
  x << 2, 4;
  const Eigen::VectorXd y = mlp_forward(p, x).col(0);
  CHECK(y(0) == 2.5);
  CHECK(y(1) == 1.0);
}

TEST_CASE("batched forward equals per-column forward") {
  Rng rng(5);
  const std::vector<int> sizes{3, 4, 2};
  MlpParams p = MlpParams::init(sizes, rng);
  Eigen::MatrixXd X(3, 5);
  for (int j = 0; j < 5; ++j) X.col(j) = random_vec(3, rng);
  const Eigen::MatrixXd Y = mlp_forward(p, X);
  for (int j = 0; j < 5; ++j) CHECK((Y.col(j) - mlp_forward(p, X.col(j)).col(0)).norm() < 1e-14);
}

TEST_CASE("dimension mismatch is rejected") {
  Rng rng(1);
  const std::vector<int> sizes{3, 4, 2};
  MlpParams p = MlpParams::init(sizes, rng);
  CHECK_THROWS_AS(mlp_eval_grad(p, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)), Error);
  CHECK_THROWS_AS(mlp_eval_grad(p, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("soft update") {
  const std::vector<int> sizes{2, 3, 1};
  Rng rng(11);
  MlpParams online = MlpParams::init(sizes, rng);
  MlpParams target = MlpParams::init(sizes, rng);

  CHECK(soft_update(online, target, 1.0).flat() == online.flat());

  MlpParams two = MlpParams::zeros(sizes);
  two.set_flat(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(two.num_params()), 2.0));
  MlpParams half = soft_update(two, MlpParams::zeros(sizes), 0.5);
  CHECK(half.flat().isApprox(Eigen::VectorXd::Constant(half.flat().size(), 1.0)));

  // Geometric contraction towards the online parameters.
  double prev = (target.flat() - online.flat()).norm();
  for (int k = 0; k < 50; ++k) {
    target = soft_update(online, target, 0.2);
    const double d = (target.flat() - online.flat()).norm();
    CHECK(d == doctest::Approx(0.8 * prev).epsilon(1e-9));
    prev = d;
  }

  CHECK_THROWS_AS(soft_update(online, MlpParams::zeros(std::vector<int>{2, 1}), 0.5), Error);
  CHECK_THROWS_AS(soft_update(online, target, 0.0), Error);
  CHECK_THROWS_AS(soft_update(online, target, 1.5), Error);
}

TEST_CASE("clip by norm") {
  const std::vector<int> sizes{2, 2};
  MlpParams g = MlpParams::zeros(sizes);
  g.set_flat(Eigen::VectorXd::Constant(6, 3.0));
  clip_by_norm(g, 1.0);
  CHECK(global_norm(g) == doctest::Approx(1.0));
  MlpParams small = MlpParams::zeros(sizes);
  small.set_flat(Eigen::VectorXd::Constant(6, 0.01));
  const Eigen::VectorXd before = small.flat();
  clip_by_norm(small, 1.0);
  CHECK(small.flat() == before);
}

TEST_CASE("sgd and adam descend a quadratic") {
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    const std::vector<int> sizes{1, 1};
    MlpParams p = MlpParams::zeros(sizes);
    p.set_flat(Eigen::Vector2d(3.0, -2.0));
    Optimizer opt(kind, 0.05);
    for (int k = 0; k < 2000; ++k) {
      MlpParams g = p;  // gradient of 0.5 |theta|^2
      opt.step(p, g);
    }
    CHECK(p.flat().norm() < 1e-3);
  }
}

TEST_CASE("text round trip is bit exact") {
  Rng rng(21);
  const std::vector<int> sizes{3, 7, 2};
  MlpParams p = MlpParams::init(sizes, rng);
  std::stringstream ss;
  write_mlp(ss, p);
  MlpParams q = read_mlp(ss);
  CHECK(q.sizes() == p.sizes());
  CHECK(q.flat() == p.flat());
  std::stringstream bad("mlp 2 3\n1 2");
  CHECK_THROWS_AS(read_mlp(bad), Error);
}

TEST_CASE("initialization is seed deterministic") {
  const std::vector<int> sizes{4, 8, 2};
  Rng a(5), b(5), c(6);
  CHECK(MlpParams::init(sizes, a).flat() == MlpParams::init(sizes, b).flat());
  CHECK(MlpParams::init(sizes, a).flat() != MlpParams::init(sizes, c).flat());
}
