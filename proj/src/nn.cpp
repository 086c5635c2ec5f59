#include "mesa/nn.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "mesa/errors.hpp"
#include "mesa/kvconfig.hpp"

namespace mesa::nn {

MlpParams MlpParams::zeros(std::span<const int> sizes) {
  require(sizes.size() >= 2, ErrorKind::kInvalidArgument, "mlp needs at least two layer sizes");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    require(sizes[l] > 0 && sizes[l + 1] > 0, ErrorKind::kInvalidArgument,
            "mlp layer sizes must be positive");
    p.weights.push_back(Eigen::MatrixXd::Zero(sizes[l + 1], sizes[l]));
    p.biases.push_back(Eigen::VectorXd::Zero(sizes[l + 1]));
  }
  return p;
}

MlpParams MlpParams::init(std::span<const int> sizes, Rng& rng) {
  MlpParams p = zeros(sizes);
  for (auto& w : p.weights) {
    const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = uniform(rng, -a, a);
    }
  }
  return p;
}

std::vector<int> MlpParams::sizes() const {
  std::vector<int> s;
  if (weights.empty()) return s;
  s.push_back(static_cast<int>(weights.front().cols()));
  for (const auto& w : weights) s.push_back(static_cast<int>(w.rows()));
  return s;
}

std::size_t MlpParams::num_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

Eigen::VectorXd MlpParams::flat() const {
  Eigen::VectorXd v(num_params());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    v.segment(k, weights[l].size()) = weights[l].reshaped();
    k += weights[l].size();
    v.segment(k, biases[l].size()) = biases[l];
    k += biases[l].size();
  }
  return v;
}

void MlpParams::set_flat(const Eigen::VectorXd& v) {
  require(static_cast<std::size_t>(v.size()) == num_params(), ErrorKind::kInvalidArgument,
          "set_flat: parameter count mismatch");
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l].reshaped() = v.segment(k, weights[l].size());
    k += weights[l].size();
    biases[l] = v.segment(k, biases[l].size());
    k += biases[l].size();
  }
}

void MlpParams::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

bool MlpParams::same_shape(const MlpParams& o) const { return sizes() == o.sizes(); }

bool MlpParams::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

Eigen::MatrixXd mlp_forward(const MlpParams& p, const Eigen::MatrixXd& x, MlpTape* tape) {
  require(!p.weights.empty(), ErrorKind::kInvalidArgument, "mlp_forward: empty network");
  require(x.rows() == p.input_size(), ErrorKind::kInvalidArgument,
          "mlp_forward: input has " + std::to_string(x.rows()) + " rows, network expects " +
              std::to_string(p.input_size()));
  if (tape) tape->inputs.clear();
  Eigen::MatrixXd h = x;
  const std::size_t L = p.weights.size();
  for (std::size_t l = 0; l < L; ++l) {
    if (tape) tape->inputs.push_back(h);
    Eigen::MatrixXd z = p.weights[l] * h;
    z.colwise() += p.biases[l];
    if (l + 1 < L) {
      // tanh through the vectorized exp
      const Eigen::ArrayXXd t = (-2.0 * z.array().abs()).exp();
      h = (z.array().sign() * (1.0 - t) / (1.0 + t)).matrix();
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Eigen::MatrixXd mlp_backward(const MlpParams& p, const MlpTape& tape, const Eigen::MatrixXd& dy,
                             MlpParams& grad) {
  const std::size_t L = p.weights.size();
  require(tape.inputs.size() == L, ErrorKind::kInvalidArgument, "mlp_backward: tape mismatch");
  require(dy.rows() == p.output_size() && dy.cols() == tape.inputs[0].cols(),
          ErrorKind::kInvalidArgument, "mlp_backward: cotangent shape mismatch");
  if (!grad.same_shape(p)) grad = MlpParams::zeros(p.sizes());
  Eigen::MatrixXd delta = dy;
  for (std::size_t l = L; l-- > 0;) {
    grad.weights[l].noalias() += delta * tape.inputs[l].transpose();
    grad.biases[l] += delta.rowwise().sum();
    Eigen::MatrixXd dh = p.weights[l].transpose() * delta;
    if (l > 0) {
      // inputs[l] = tanh(z_{l-1}); d tanh = 1 - tanh^2
      delta = dh.array() * (1.0 - tape.inputs[l].array().square());
    } else {
      delta = std::move(dh);
    }
  }
  return delta;
}

MlpEvalGrad mlp_eval_grad(const MlpParams& p, const Eigen::VectorXd& input,
                          const Eigen::VectorXd& cotangent) {
  require(cotangent.size() == p.output_size(), ErrorKind::kInvalidArgument,
          "mlp_eval_grad: cotangent size mismatch");
  MlpTape tape;
  MlpEvalGrad out;
  out.output = mlp_forward(p, input, &tape).col(0);
  out.grad = MlpParams::zeros(p.sizes());
  mlp_backward(p, tape, cotangent, out.grad);
  return out;
}

double global_norm(const MlpParams& g) {
  double s = 0.0;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    s += g.weights[l].squaredNorm() + g.biases[l].squaredNorm();
  }
  return std::sqrt(s);
}

void clip_by_norm(MlpParams& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = global_norm(g);
  if (n <= max_norm || n == 0.0) return;
  const double s = max_norm / n;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    g.weights[l] *= s;
    g.biases[l] *= s;
  }
}

void Optimizer::step(MlpParams& p, const MlpParams& grad) {
  require(p.same_shape(grad), ErrorKind::kInvalidArgument, "optimizer: gradient shape mismatch");
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      p.weights[l] -= lr_ * grad.weights[l];
      p.biases[l] -= lr_ * grad.biases[l];
    }
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (!m_.same_shape(p)) {
    m_ = MlpParams::zeros(p.sizes());
    v_ = MlpParams::zeros(p.sizes());
    t_ = 0;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto upd = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseProduct(g);
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    upd(p.weights[l], m_.weights[l], v_.weights[l], grad.weights[l]);
    upd(p.biases[l], m_.biases[l], v_.biases[l], grad.biases[l]);
  }
}

MlpParams soft_update(const MlpParams& online, const MlpParams& target, double tau) {
  require(online.same_shape(target), ErrorKind::kInvalidArgument, "soft_update: shape mismatch");
  require(tau > 0.0 && tau <= 1.0, ErrorKind::kInvalidArgument, "soft_update: tau outside (0, 1]");
  if (tau == 1.0) return online;
  MlpParams out = target;
  for (std::size_t l = 0; l < out.weights.size(); ++l) {
    out.weights[l] = (1.0 - tau) * target.weights[l] + tau * online.weights[l];
    out.biases[l] = (1.0 - tau) * target.biases[l] + tau * online.biases[l];
  }
  return out;
}

void write_mlp(std::ostream& out, const MlpParams& p) {
  const auto s = p.sizes();
  out << "mlp " << s.size();
  for (int v : s) out << ' ' << v;
  out << '\n';
  const Eigen::VectorXd f = p.flat();
  for (Eigen::Index i = 0; i < f.size(); ++i) out << format_real(f(i)) << (i + 1 == f.size() ? '\n' : ' ');
}

MlpParams read_mlp(std::istream& in) {
  std::string tag;
  std::size_t count = 0;
  require(static_cast<bool>(in >> tag >> count) && tag == "mlp" && count >= 2, ErrorKind::kIo,
          "read_mlp: malformed header");
  std::vector<int> sizes(count);
  for (auto& v : sizes) require(static_cast<bool>(in >> v), ErrorKind::kIo, "read_mlp: bad sizes");
  MlpParams p = MlpParams::zeros(sizes);
  Eigen::VectorXd f(p.num_params());
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    std::string tok;
    require(static_cast<bool>(in >> tok), ErrorKind::kIo, "read_mlp: truncated parameters");
    f(i) = std::stod(tok);
  }
  p.set_flat(f);
  return p;
}

}  // namespace mesa::nn
