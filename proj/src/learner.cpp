#include "mesa/learner.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "mesa/errors.hpp"

namespace mesa {

const char* to_string(HeadKind h) {
  switch (h) {
    case HeadKind::kAuto: return "auto";
    case HeadKind::kJoint: return "joint";
    case HeadKind::kFactored: return "factored";
  }
  return "?";
}

HeadKind head_from_string(std::string_view s) {
  if (s == "auto") return HeadKind::kAuto;
  if (s == "joint") return HeadKind::kJoint;
  if (s == "factored") return HeadKind::kFactored;
  fail(ErrorKind::kInvalidConfig, "unknown Q head '" + std::string(s) + "'");
}

namespace {

void check_key(bool ok, const std::string& key, const std::string& why) {
  require(ok, ErrorKind::kInvalidConfig, "key '" + key + "': " + why);
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      check_key(used == item.size(), key, "expected comma-separated integers");
    } catch (const std::logic_error&) {
      fail(ErrorKind::kInvalidConfig, "key '" + key + "': expected comma-separated integers");
    }
  }
  return out;
}

double lerp_schedule(double start, double end, long long step, long long span) {
  if (span <= 0 || step >= span) return end;
  const double f = static_cast<double>(std::max(0LL, step)) / static_cast<double>(span);
  return start + (end - start) * f;
}

Eigen::MatrixXd stack_states(std::span<const Transition* const> batch, bool next) {
  const auto& first = next ? batch[0]->next_state : batch[0]->state;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(first.size()), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& s = next ? batch[j]->next_state : batch[j]->state;
    require(s.size() == first.size(), ErrorKind::kInvalidArgument, "batch states differ in size");
    m.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
  }
  return m;
}

Eigen::MatrixXd stack_obs(std::span<const Transition* const> batch, int agent, bool next) {
  auto pick = [&](const Transition* t) -> const std::vector<double>& {
    const auto& o = next ? t->next_obs : t->obs;
    if (o.empty()) return next ? t->next_state : t->state;
    return o[static_cast<std::size_t>(agent)];
  };
  const auto rows = static_cast<Eigen::Index>(pick(batch[0]).size());
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& o = pick(batch[j]);
    m.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(o.data(), rows);
  }
  return m;
}

double reward_of(const Transition& t, const LearnerConfig& cfg) {
  return cfg.train_on_shaped ? t.shaped : t.reward;
}

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

void LearnerConfig::validate() const {
  check_key(lr_actor > 0, "lr_actor", "must be > 0");
  check_key(lr_critic > 0, "lr_critic", "must be > 0");
  check_key(gamma > 0 && gamma < 1, "gamma", "must lie in (0, 1)");
  check_key(tau > 0 && tau <= 1, "tau", "must lie in (0, 1]");
  check_key(batch_size > 0, "batch_size", "must be > 0");
  check_key(clip_norm >= 0, "clip_norm", "must be >= 0");
  check_key(!hidden.empty(), "hidden", "needs at least one layer");
  for (int h : hidden) check_key(h > 0, "hidden", "layer sizes must be > 0");
  check_key(eps_start >= 0 && eps_start <= 1, "eps_start", "must lie in [0, 1]");
  check_key(eps_end >= 0 && eps_end <= 1, "eps_end", "must lie in [0, 1]");
  check_key(noise_start >= 0, "noise_start", "must be >= 0");
  check_key(noise_end >= 0, "noise_end", "must be >= 0");
  check_key(explore_decay_steps >= 0, "explore_decay_steps", "must be >= 0");
  check_key(warmup_steps >= 0, "warmup_steps", "must be >= 0");
  check_key(buffer_capacity > 0, "buffer_capacity", "must be > 0");
  check_key(train_every >= 1, "train_every", "must be >= 1");
  check_key(updates_per_round >= 1, "updates_per_round", "must be >= 1");
}

const std::vector<std::string>& learner_config_keys() {
  static const std::vector<std::string> keys{
      "lr_actor",    "lr_critic", "gamma",       "tau",          "batch_size",
      "clip_norm",   "optimizer", "hidden",      "head",         "eps_start",
      "eps_end",     "noise_start", "noise_end", "explore_decay_steps", "warmup_steps",
      "buffer_capacity", "train_every", "updates_per_round", "train_on_shaped"};
  return keys;
}

void write_learner_config(KvDoc& doc, const std::string& p, const LearnerConfig& c) {
  doc.set(p + "lr_actor", format_real(c.lr_actor));
  doc.set(p + "lr_critic", format_real(c.lr_critic));
  doc.set(p + "gamma", format_real(c.gamma));
  doc.set(p + "tau", format_real(c.tau));
  doc.set(p + "batch_size", std::to_string(c.batch_size));
  doc.set(p + "clip_norm", format_real(c.clip_norm));
  doc.set(p + "optimizer", c.optimizer == nn::OptimizerKind::kAdam ? "adam" : "sgd");
  doc.set(p + "hidden", join_ints(c.hidden));
  doc.set(p + "head", to_string(c.head));
  doc.set(p + "eps_start", format_real(c.eps_start));
  doc.set(p + "eps_end", format_real(c.eps_end));
  doc.set(p + "noise_start", format_real(c.noise_start));
  doc.set(p + "noise_end", format_real(c.noise_end));
  doc.set(p + "explore_decay_steps", std::to_string(c.explore_decay_steps));
  doc.set(p + "warmup_steps", std::to_string(c.warmup_steps));
  doc.set(p + "buffer_capacity", std::to_string(c.buffer_capacity));
  doc.set(p + "train_every", std::to_string(c.train_every));
  doc.set(p + "updates_per_round", std::to_string(c.updates_per_round));
  doc.set(p + "train_on_shaped", c.train_on_shaped ? "true" : "false");
}

LearnerConfig read_learner_config(const KvDoc& doc, const std::string& p, const LearnerConfig& d) {
  LearnerConfig c = d;
  c.lr_actor = doc.get_double(p + "lr_actor", d.lr_actor);
  c.lr_critic = doc.get_double(p + "lr_critic", d.lr_critic);
  c.gamma = doc.get_double(p + "gamma", d.gamma);
  c.tau = doc.get_double(p + "tau", d.tau);
  c.batch_size = static_cast<int>(doc.get_int(p + "batch_size", d.batch_size));
  c.clip_norm = doc.get_double(p + "clip_norm", d.clip_norm);
  const std::string opt = doc.get_string(p + "optimizer", d.optimizer == nn::OptimizerKind::kAdam ? "adam" : "sgd");
  check_key(opt == "sgd" || opt == "adam", p + "optimizer", "expected sgd or adam");
  c.optimizer = opt == "adam" ? nn::OptimizerKind::kAdam : nn::OptimizerKind::kSgd;
  if (doc.has(p + "hidden")) c.hidden = parse_ints(p + "hidden", *doc.get(p + "hidden"));
  c.head = head_from_string(doc.get_string(p + "head", to_string(d.head)));
  c.eps_start = doc.get_double(p + "eps_start", d.eps_start);
  c.eps_end = doc.get_double(p + "eps_end", d.eps_end);
  c.noise_start = doc.get_double(p + "noise_start", d.noise_start);
  c.noise_end = doc.get_double(p + "noise_end", d.noise_end);
  c.explore_decay_steps = doc.get_int(p + "explore_decay_steps", d.explore_decay_steps);
  c.warmup_steps = doc.get_int(p + "warmup_steps", d.warmup_steps);
  const long long cap = doc.get_int(p + "buffer_capacity", static_cast<long long>(d.buffer_capacity));
  check_key(cap > 0, p + "buffer_capacity", "must be > 0");
  c.buffer_capacity = static_cast<std::size_t>(cap);
  c.train_every = static_cast<int>(doc.get_int(p + "train_every", d.train_every));
  c.updates_per_round = static_cast<int>(doc.get_int(p + "updates_per_round", d.updates_per_round));
  c.train_on_shaped = doc.get_bool(p + "train_on_shaped", d.train_on_shaped);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kInvalidConfig, (p.empty() ? std::string() : "section '" + p + "' ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------- Q head

QHead QHead::resolve(HeadKind requested, int n, int U) {
  require(n >= 1 && U >= 2, ErrorKind::kInvalidArgument, "QHead: bad action space");
  const bool small = n * U <= 12;
  QHead h;
  h.n = n;
  h.U = U;
  if (requested == HeadKind::kJoint && !small) {
    fail(ErrorKind::kInvalidConfig, "joint Q head needs n*U <= 12 (got " + std::to_string(n * U) +
                                        "); use the factored head");
  }
  h.kind = requested == HeadKind::kAuto ? (small ? HeadKind::kJoint : HeadKind::kFactored) : requested;
  return h;
}

int QHead::output_size() const {
  if (kind == HeadKind::kFactored) return n * U;
  int s = 1;
  for (int i = 0; i < n; ++i) s *= U;
  return s;
}

namespace {

int action_at(std::span<const double> a, int i) { return static_cast<int>(std::lround(a[static_cast<std::size_t>(i)])); }

}  // namespace

double QHead::value(const Eigen::Ref<const Eigen::VectorXd>& out, std::span<const double> a) const {
  if (kind == HeadKind::kFactored) {
    double v = 0.0;
    for (int i = 0; i < n; ++i) v += out(i * U + action_at(a, i));
    return v;
  }
  int idx = 0, mul = 1;
  for (int i = 0; i < n; ++i) {
    idx += action_at(a, i) * mul;
    mul *= U;
  }
  return out(idx);
}

double QHead::max_value(const Eigen::Ref<const Eigen::VectorXd>& out) const {
  if (kind == HeadKind::kFactored) {
    double v = 0.0;
    for (int i = 0; i < n; ++i) v += out.segment(i * U, U).maxCoeff();
    return v;
  }
  return out.maxCoeff();
}

std::vector<double> QHead::argmax(const Eigen::Ref<const Eigen::VectorXd>& out) const {
  std::vector<double> a(static_cast<std::size_t>(n));
  if (kind == HeadKind::kFactored) {
    for (int i = 0; i < n; ++i) {
      Eigen::Index k;
      out.segment(i * U, U).maxCoeff(&k);
      a[static_cast<std::size_t>(i)] = static_cast<double>(k);
    }
    return a;
  }
  Eigen::Index k;
  out.maxCoeff(&k);
  auto idx = static_cast<int>(k);
  for (int i = 0; i < n; ++i) {
    a[static_cast<std::size_t>(i)] = idx % U;
    idx /= U;
  }
  return a;
}

void QHead::value_grad(std::span<const double> a, Eigen::Ref<Eigen::VectorXd> grad) const {
  grad.setZero();
  if (kind == HeadKind::kFactored) {
    for (int i = 0; i < n; ++i) grad(i * U + action_at(a, i)) = 1.0;
    return;
  }
  int idx = 0, mul = 1;
  for (int i = 0; i < n; ++i) {
    idx += action_at(a, i) * mul;
    mul *= U;
  }
  grad(idx) = 1.0;
}

QUpdateResult q_update(const nn::MlpParams& q, const nn::MlpParams& q_target,
                       std::span<const Transition* const> batch, const LearnerConfig& cfg,
                       const QHead& head, nn::Optimizer* optimizer) {
  require(!batch.empty(), ErrorKind::kInvalidArgument, "q_update: empty batch");
  require(q.output_size() == head.output_size() && q_target.same_shape(q),
          ErrorKind::kInvalidArgument, "q_update: network does not match the Q head");
  const auto B = static_cast<Eigen::Index>(batch.size());
  const Eigen::MatrixXd S = stack_states(batch, false);
  const Eigen::MatrixXd S2 = stack_states(batch, true);
  nn::MlpTape tape;
  const Eigen::MatrixXd out = nn::mlp_forward(q, S, &tape);
  const Eigen::MatrixXd out2 = nn::mlp_forward(q_target, S2);

  Eigen::MatrixXd dout(out.rows(), B);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const Transition& t = *batch[static_cast<std::size_t>(j)];
    const double boot = t.done ? 0.0 : cfg.gamma * head.max_value(out2.col(j));
    const double err = head.value(out.col(j), t.action) - (reward_of(t, cfg) + boot);
    loss += err * err;
    head.value_grad(t.action, dout.col(j));
    dout.col(j) *= 2.0 * err / static_cast<double>(B);
  }
  loss /= static_cast<double>(B);

  QUpdateResult res{q, loss};
  nn::MlpParams grad = nn::MlpParams::zeros(q.sizes());
  nn::mlp_backward(q, tape, dout, grad);
  nn::clip_by_norm(grad, cfg.clip_norm);
  if (optimizer) {
    optimizer->step(res.q, grad);
  } else {
    nn::Optimizer sgd(nn::OptimizerKind::kSgd, cfg.lr_critic);
    sgd.step(res.q, grad);
  }
  return res;
}

// ---------------------------------------------------------------- actor-critic

Eigen::MatrixXd actor_forward(const nn::MlpParams& actor, const Eigen::MatrixXd& obs, nn::MlpTape* tape) {
  return nn::mlp_forward(actor, obs, tape).array().tanh().matrix();
}

double actor_ascent_step(nn::MlpParams& actor, nn::Optimizer& opt, const Eigen::MatrixXd& obs,
                         const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& dq_da,
                         double clip_norm) {
  nn::MlpTape tape;
  const Eigen::MatrixXd a = actor_forward(actor, obs, &tape);
  const Eigen::MatrixXd g = dq_da(a);
  require(g.rows() == a.rows() && g.cols() == a.cols(), ErrorKind::kInvalidArgument,
          "actor_ascent_step: dq/da shape mismatch");
  const double B = static_cast<double>(a.cols());
  // loss = -mean Q; chain through tanh.
  const Eigen::MatrixXd dz = (-(g.array()) * (1.0 - a.array().square()) / B).matrix();
  nn::MlpParams grad = nn::MlpParams::zeros(actor.sizes());
  nn::mlp_backward(actor, tape, dz, grad);
  const double norm = nn::global_norm(grad);
  nn::clip_by_norm(grad, clip_norm);
  opt.step(actor, grad);
  return norm;
}

ActorCriticLosses actor_critic_update(ActorCriticState& s, std::span<const Transition* const> batch,
                                      const LearnerConfig& cfg, int n, int action_dim) {
  require(!batch.empty(), ErrorKind::kInvalidArgument, "actor_critic_update: empty batch");
  require(static_cast<int>(s.actors.size()) == n, ErrorKind::kInvalidArgument,
          "actor_critic_update: one actor per agent expected");
  const auto B = static_cast<Eigen::Index>(batch.size());
  const Eigen::MatrixXd S = stack_states(batch, false);
  const Eigen::MatrixXd S2 = stack_states(batch, true);
  const Eigen::Index ds = S.rows();
  const Eigen::Index da = action_dim;

  std::vector<Eigen::MatrixXd> obs(n), obs2(n);
  for (int i = 0; i < n; ++i) {
    obs[i] = stack_obs(batch, i, false);
    obs2[i] = stack_obs(batch, i, true);
  }

  // Critic.
  Eigen::MatrixXd X(ds + n * da, B), X2(ds + n * da, B);
  X.topRows(ds) = S;
  X2.topRows(ds) = S2;
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto& a = batch[static_cast<std::size_t>(j)]->action;
    require(static_cast<Eigen::Index>(a.size()) == n * da, ErrorKind::kInvalidArgument,
            "actor_critic_update: action size mismatch");
    X.col(j).bottomRows(n * da) = Eigen::Map<const Eigen::VectorXd>(a.data(), n * da);
  }
  for (int i = 0; i < n; ++i) X2.middleRows(ds + i * da, da) = actor_forward(s.actor_targets[i], obs2[i]);
  const Eigen::MatrixXd q2 = nn::mlp_forward(s.critic_target, X2);

  nn::MlpTape tape;
  const Eigen::MatrixXd q = nn::mlp_forward(s.critic, X, &tape);
  Eigen::MatrixXd dq(1, B);
  ActorCriticLosses losses;
  for (Eigen::Index j = 0; j < B; ++j) {
    const Transition& t = *batch[static_cast<std::size_t>(j)];
    const double y = reward_of(t, cfg) + (t.done ? 0.0 : cfg.gamma * q2(0, j));
    const double err = q(0, j) - y;
    losses.critic += err * err;
    dq(0, j) = 2.0 * err / static_cast<double>(B);
  }
  losses.critic /= static_cast<double>(B);
  if (!std::isfinite(losses.critic)) fail(ErrorKind::kTrainingDiverged, "critic loss is not finite");
  nn::MlpParams cgrad = nn::MlpParams::zeros(s.critic.sizes());
  nn::mlp_backward(s.critic, tape, dq, cgrad);
  nn::clip_by_norm(cgrad, cfg.clip_norm);
  s.critic_opt.step(s.critic, cgrad);

  // Actors: ascend the updated critic in their own action block.
  losses.actor.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double mean_q = 0.0;
    auto dq_da = [&](const Eigen::MatrixXd& ai) {
      Eigen::MatrixXd Xi = X;
      Xi.middleRows(ds + i * da, da) = ai;
      nn::MlpTape t2;
      const Eigen::MatrixXd qi = nn::mlp_forward(s.critic, Xi, &t2);
      mean_q = qi.mean();
      nn::MlpParams scratch = nn::MlpParams::zeros(s.critic.sizes());
      const Eigen::MatrixXd dx = nn::mlp_backward(s.critic, t2, Eigen::MatrixXd::Ones(1, B), scratch);
      return Eigen::MatrixXd(dx.middleRows(ds + i * da, da));
    };
    actor_ascent_step(s.actors[i], s.actor_opts[i], obs[i], dq_da, cfg.clip_norm);
    losses.actor[i] = -mean_q;
    if (!s.actors[i].all_finite()) fail(ErrorKind::kTrainingDiverged, "actor parameters diverged");
  }
  if (!s.critic.all_finite()) fail(ErrorKind::kTrainingDiverged, "critic parameters diverged");

  s.critic_target = nn::soft_update(s.critic, s.critic_target, cfg.tau);
  for (int i = 0; i < n; ++i) s.actor_targets[i] = nn::soft_update(s.actors[i], s.actor_targets[i], cfg.tau);
  return losses;
}

// ---------------------------------------------------------------- learners

ActMode Learner::behaviour_mode(long long step) const {
  if (space_.discrete) {
    return ActMode::eps_greedy(lerp_schedule(cfg_.eps_start, cfg_.eps_end, step, cfg_.explore_decay_steps));
  }
  return ActMode::noisy(lerp_schedule(cfg_.noise_start, cfg_.noise_end, step, cfg_.explore_decay_steps));
}

std::vector<double> uniform_action(const ActionSpace& space, Rng& rng) {
  std::vector<double> a(static_cast<std::size_t>(space.joint_dim()));
  for (auto& v : a) {
    v = space.discrete ? static_cast<double>(uniform_index(rng, static_cast<std::uint64_t>(space.U)))
                       : uniform(rng, -1.0, 1.0);
  }
  return a;
}

QLearner::QLearner(const LearnerConfig& cfg, ActionSpace space, std::size_t state_size, Rng& rng)
    : Learner(cfg, space) {
  require(space.discrete, ErrorKind::kInvalidArgument, "QLearner needs a discrete action space");
  cfg_.validate();
  head_ = QHead::resolve(cfg.head, space.n, space.U);
  const auto sizes = layer_sizes(static_cast<int>(state_size), cfg.hidden, head_.output_size());
  q_ = nn::MlpParams::init(sizes, rng);
  q_target_ = q_;
  opt_ = nn::Optimizer(cfg.optimizer, cfg.lr_critic);
}

Eigen::VectorXd QLearner::outputs(const std::vector<double>& state) const {
  return nn::mlp_forward(q_, Eigen::Map<const Eigen::VectorXd>(state.data(), static_cast<Eigen::Index>(state.size())))
      .col(0);
}

std::vector<double> QLearner::act(const EnvView& view, const ActMode& mode, Rng& rng) const {
  require(mode.kind != ActKind::kNoisyDeterministic, ErrorKind::kInvalidArgument,
          "Gaussian action noise needs a continuous action space");
  if (mode.kind == ActKind::kUniform) return uniform_action(space_, rng);
  std::vector<double> a = head_.argmax(outputs(view.state));
  if (mode.kind == ActKind::kEpsGreedy) {
    for (auto& v : a) {
      if (bernoulli(rng, mode.param)) v = static_cast<double>(uniform_index(rng, static_cast<std::uint64_t>(space_.U)));
    }
  }
  return a;
}

double QLearner::update(std::span<const Transition* const> batch) {
  auto res = q_update(q_, q_target_, batch, cfg_, head_, &opt_);
  if (!std::isfinite(res.loss) || !res.q.all_finite()) {
    fail(ErrorKind::kTrainingDiverged, "Q update diverged");
  }
  q_ = std::move(res.q);
  q_target_ = nn::soft_update(q_, q_target_, cfg_.tau);
  return res.loss;
}

void QLearner::save(std::ostream& out) const {
  out << "head " << to_string(head_.kind) << '\n';
  nn::write_mlp(out, q_);
  nn::write_mlp(out, q_target_);
}

void QLearner::load(std::istream& in) {
  std::string tag, head;
  require(static_cast<bool>(in >> tag >> head) && tag == "head", ErrorKind::kIo, "checkpoint: missing head");
  require(head_from_string(head) == head_.kind, ErrorKind::kIo, "checkpoint: head kind mismatch");
  auto q = nn::read_mlp(in);
  auto qt = nn::read_mlp(in);
  require(q.same_shape(q_) && qt.same_shape(q_), ErrorKind::kIo, "checkpoint: network shape mismatch");
  q_ = std::move(q);
  q_target_ = std::move(qt);
}

MaddpgLearner::MaddpgLearner(const LearnerConfig& cfg, ActionSpace space, std::size_t state_size,
                             std::size_t obs_size, Rng& rng)
    : Learner(cfg, space) {
  require(!space.discrete, ErrorKind::kInvalidArgument, "MaddpgLearner needs continuous actions");
  cfg_.validate();
  const auto actor_sizes = layer_sizes(static_cast<int>(obs_size), cfg.hidden, space.dim_per_agent);
  const auto critic_sizes =
      layer_sizes(static_cast<int>(state_size) + space.joint_dim(), cfg.hidden, 1);
  for (int i = 0; i < space.n; ++i) {
    s_.actors.push_back(nn::MlpParams::init(actor_sizes, rng));
    s_.actor_opts.emplace_back(cfg.optimizer, cfg.lr_actor);
  }
  s_.actor_targets = s_.actors;
  s_.critic = nn::MlpParams::init(critic_sizes, rng);
  s_.critic_target = s_.critic;
  s_.critic_opt = nn::Optimizer(cfg.optimizer, cfg.lr_critic);
}

std::vector<double> MaddpgLearner::act(const EnvView& view, const ActMode& mode, Rng& rng) const {
  if (mode.kind == ActKind::kUniform) return uniform_action(space_, rng);
  const int d = space_.dim_per_agent;
  std::vector<double> a(static_cast<std::size_t>(space_.joint_dim()));
  for (int i = 0; i < space_.n; ++i) {
    const auto& o = view.obs.empty() ? view.state : view.obs[static_cast<std::size_t>(i)];
    const Eigen::VectorXd ai =
        actor_forward(s_.actors[static_cast<std::size_t>(i)],
                      Eigen::Map<const Eigen::VectorXd>(o.data(), static_cast<Eigen::Index>(o.size())))
            .col(0);
    const bool random_agent = mode.kind == ActKind::kEpsGreedy && bernoulli(rng, mode.param);
    for (int k = 0; k < d; ++k) {
      double v = ai(k);
      if (random_agent) v = uniform(rng, -1.0, 1.0);
      if (mode.kind == ActKind::kNoisyDeterministic && mode.param > 0) v += mode.param * standard_normal(rng);
      a[static_cast<std::size_t>(i * d + k)] = std::clamp(v, -1.0, 1.0);
    }
  }
  return a;
}

double MaddpgLearner::update(std::span<const Transition* const> batch) {
  return actor_critic_update(s_, batch, cfg_, space_.n, space_.dim_per_agent).critic;
}

void MaddpgLearner::save(std::ostream& out) const {
  out << "agents " << s_.actors.size() << '\n';
  for (std::size_t i = 0; i < s_.actors.size(); ++i) {
    nn::write_mlp(out, s_.actors[i]);
    nn::write_mlp(out, s_.actor_targets[i]);
  }
  nn::write_mlp(out, s_.critic);
  nn::write_mlp(out, s_.critic_target);
}

void MaddpgLearner::load(std::istream& in) {
  std::string tag;
  std::size_t count = 0;
  require(static_cast<bool>(in >> tag >> count) && tag == "agents" && count == s_.actors.size(),
          ErrorKind::kIo, "checkpoint: agent count mismatch");
  for (std::size_t i = 0; i < count; ++i) {
    auto a = nn::read_mlp(in);
    auto at = nn::read_mlp(in);
    require(a.same_shape(s_.actors[i]) && at.same_shape(s_.actors[i]), ErrorKind::kIo,
            "checkpoint: actor shape mismatch");
    s_.actors[i] = std::move(a);
    s_.actor_targets[i] = std::move(at);
  }
  auto c = nn::read_mlp(in);
  auto ct = nn::read_mlp(in);
  require(c.same_shape(s_.critic) && ct.same_shape(s_.critic), ErrorKind::kIo,
          "checkpoint: critic shape mismatch");
  s_.critic = std::move(c);
  s_.critic_target = std::move(ct);
}

std::unique_ptr<Learner> make_learner(const LearnerConfig& cfg, const Environment& env, Rng& rng) {
  const ActionSpace space = env.action_space();
  if (space.discrete) return std::make_unique<QLearner>(cfg, space, env.state_size(), rng);
  return std::make_unique<MaddpgLearner>(cfg, space, env.state_size(), env.obs_size(), rng);
}

void save_checkpoint(std::ostream& out, const Learner& learner, const Rng* rng) {
  KvDoc cfg;
  write_learner_config(cfg, "", learner.config());
  const std::string text = cfg.serialize();
  out << "mesa-checkpoint 1\n";
  out << "kind " << learner.kind() << '\n';
  out << "config " << std::count(text.begin(), text.end(), '\n') << '\n' << text;
  learner.save(out);
  if (rng) {
    out << "rng " << *rng << '\n';
  } else {
    out << "rng none\n";
  }
}

std::unique_ptr<Learner> load_checkpoint(std::istream& in, const Environment& env, Rng* rng) {
  std::string tag, kind;
  int version = 0;
  require(static_cast<bool>(in >> tag >> version) && tag == "mesa-checkpoint" && version == 1,
          ErrorKind::kIo, "not a mesa checkpoint");
  require(static_cast<bool>(in >> tag >> kind) && tag == "kind", ErrorKind::kIo, "checkpoint: missing kind");
  std::size_t lines = 0;
  require(static_cast<bool>(in >> tag >> lines) && tag == "config", ErrorKind::kIo,
          "checkpoint: missing config");
  std::string line, text;
  std::getline(in, line);
  for (std::size_t i = 0; i < lines; ++i) {
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::kIo, "checkpoint: truncated config");
    text += line + '\n';
  }
  const LearnerConfig cfg = read_learner_config(KvDoc::parse(text), "");
  Rng scratch(0);
  auto learner = make_learner(cfg, env, scratch);
  require(learner->kind() == kind, ErrorKind::kIo, "checkpoint: learner kind does not fit environment");
  learner->load(in);
  require(static_cast<bool>(in >> tag) && tag == "rng", ErrorKind::kIo, "checkpoint: missing rng");
  std::getline(in, line);
  if (rng && line.find("none") == std::string::npos) {
    std::istringstream rs(line);
    rs >> *rng;
  }
  return learner;
}

}  // namespace mesa
