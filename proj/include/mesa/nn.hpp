#pragma once

// Small fully-connected networks (tanh hidden layers, linear output) with
// exact reverse-mode gradients. Batches are column-major: one sample per
// column.

#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mesa/rng.hpp"

namespace mesa::nn {

struct MlpParams {
  std::vector<Eigen::MatrixXd> weights;  // layer l: sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> biases;

  static MlpParams zeros(std::span<const int> sizes);
  // Glorot-uniform weights, zero biases.
  static MlpParams init(std::span<const int> sizes, Rng& rng);

  std::vector<int> sizes() const;
  int input_size() const { return static_cast<int>(weights.front().cols()); }
  int output_size() const { return static_cast<int>(weights.back().rows()); }
  std::size_t num_params() const;

  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& v);
  void set_zero();
  bool same_shape(const MlpParams& o) const;
  bool all_finite() const;
};

// Layer inputs recorded by the forward pass for the backward pass.
struct MlpTape {
  std::vector<Eigen::MatrixXd> inputs;  // inputs[l] feeds layer l
};

Eigen::MatrixXd mlp_forward(const MlpParams& p, const Eigen::MatrixXd& x, MlpTape* tape = nullptr);

// Accumulates d<y, dy>/dtheta into grad and returns d<y, dy>/dx.
Eigen::MatrixXd mlp_backward(const MlpParams& p, const MlpTape& tape, const Eigen::MatrixXd& dy,
                             MlpParams& grad);

struct MlpEvalGrad {
  Eigen::VectorXd output;
  MlpParams grad;
};

MlpEvalGrad mlp_eval_grad(const MlpParams& p, const Eigen::VectorXd& input,
                          const Eigen::VectorXd& cotangent);

double global_norm(const MlpParams& g);
void clip_by_norm(MlpParams& g, double max_norm);

enum class OptimizerKind { kSgd, kAdam };

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  // Descends along grad (callers pass the gradient of a loss).
  void step(MlpParams& p, const MlpParams& grad);

  OptimizerKind kind() const { return kind_; }
  double lr() const { return lr_; }

 private:
  OptimizerKind kind_ = OptimizerKind::kSgd;
  double lr_ = 1e-3;
  MlpParams m_, v_;
  long long t_ = 0;
};

// (1 - tau) * target + tau * online, elementwise.
MlpParams soft_update(const MlpParams& online, const MlpParams& target, double tau);

void write_mlp(std::ostream& out, const MlpParams& p);
MlpParams read_mlp(std::istream& in);

}  // namespace mesa::nn
