#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "mesa/env.hpp"
#include "mesa/errors.hpp"
#include "mesa/learner.hpp"
#include "mesa/replay.hpp"

using namespace mesa;

namespace {

climb::ClimbTaskSpec one_step(int n, int U, int k, int u, double delta = 0.5) {
  climb::ClimbTaskSpec s;
  s.variant = climb::Variant::kOneStep;
  s.n = n;
  s.U = U;
  s.delta = delta;
  s.stages = {{k, u}};
  return s;
}

Transition terminal(std::vector<double> state, std::vector<double> action, double reward) {
  Transition t;
  t.state = state;
  t.next_state = std::move(state);
  t.action = std::move(action);
  t.reward = reward;
  t.done = true;
  return t;
}

std::vector<const Transition*> ptrs(const std::vector<Transition>& v) {
  std::vector<const Transition*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

LearnerConfig quick_config() {
  LearnerConfig c;
  c.lr_critic = 0.05;
  c.lr_actor = 0.05;
  c.hidden = {16};
  c.tau = 0.1;
  return c;
}

}  // namespace

TEST_CASE("replay buffer keeps FIFO order within capacity") {
  ReplayBuffer buf(3);
  for (int i = 0; i < 7; ++i) {
    Transition t;
    t.reward = i;
    buf.push(t);
    CHECK(buf.size() <= 3);
  }
  CHECK(buf.size() == 3);
  CHECK(buf.total_pushed() == 7);
  CHECK(buf.at(0).reward == 4);
  CHECK(buf.at(1).reward == 5);
  CHECK(buf.at(2).reward == 6);
  CHECK_THROWS_AS(buf.at(3), Error);
  CHECK_THROWS_AS(ReplayBuffer(0), Error);

  Rng a(4), b(4);
  auto sa = buf.sample(10, a);
  auto sb = buf.sample(10, b);
  CHECK(sa == sb);
  buf.clear();
  CHECK(buf.empty());
  CHECK_THROWS_AS(buf.sample(1, a), Error);
}

TEST_CASE("Q head resolution and indexing") {
  CHECK(QHead::resolve(HeadKind::kAuto, 2, 6).kind == HeadKind::kJoint);
  CHECK(QHead::resolve(HeadKind::kAuto, 2, 10).kind == HeadKind::kFactored);
  CHECK(QHead::resolve(HeadKind::kFactored, 2, 3).kind == HeadKind::kFactored);
  try {
    QHead::resolve(HeadKind::kJoint, 3, 5);
    FAIL("expected invalid-config");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidConfig);
  }

  QHead joint = QHead::resolve(HeadKind::kJoint, 2, 3);
  CHECK(joint.output_size() == 9);
  Eigen::VectorXd out = Eigen::VectorXd::LinSpaced(9, 0, 8);
  const std::vector<double> a{2, 1};
  CHECK(joint.value(out, a) == 5);  // 2 + 3*1
  CHECK(joint.argmax(out) == std::vector<double>{2, 2});
  CHECK(joint.max_value(out) == 8);

  QHead fac = QHead::resolve(HeadKind::kFactored, 2, 3);
  CHECK(fac.output_size() == 6);
  Eigen::VectorXd f(6);
  f << 0.1, 0.7, 0.2, 0.5, 0.5, -1;
  CHECK(fac.value(f, a) == doctest::Approx(0.2 + 0.5));
  CHECK(fac.argmax(f) == std::vector<double>{1, 0});  // tie broken to lowest index
  CHECK(fac.max_value(f) == doctest::Approx(1.2));
}

TEST_CASE("q_update loss on terminal reward 1 with zero network is 1") {
  const std::vector<int> sizes{2, 4, 4};
  nn::MlpParams q = nn::MlpParams::zeros(sizes);
  std::vector<Transition> batch{terminal({0, 1}, {0, 1}, 1.0), terminal({1, 0}, {1, 1}, 1.0)};
  auto res = q_update(q, q, ptrs(batch), LearnerConfig{}, QHead::resolve(HeadKind::kJoint, 2, 2));
  CHECK(res.loss == 1.0);
  CHECK_FALSE(res.q.flat() == q.flat());
  CHECK_THROWS_AS(q_update(q, q, {}, LearnerConfig{}, QHead::resolve(HeadKind::kJoint, 2, 2)), Error);
}

TEST_CASE("q_update with gamma 0 regresses on the raw reward") {
  Rng rng(8);
  const std::vector<int> sizes{2, 5, 4};
  nn::MlpParams q = nn::MlpParams::init(sizes, rng);
  nn::MlpParams qt = nn::MlpParams::init(sizes, rng);
  QHead head = QHead::resolve(HeadKind::kJoint, 2, 2);
  std::vector<Transition> batch;
  for (int i = 0; i < 6; ++i) {
    Transition t = terminal({uniform(rng, -1, 1), uniform(rng, -1, 1)}, {double(i % 2), double(i / 3)}, i * 0.25);
    t.done = false;
    t.next_state = {uniform(rng, -1, 1), uniform(rng, -1, 1)};
    batch.push_back(t);
  }
  LearnerConfig cfg;
  cfg.gamma = 1e-300;  // validated range is open; the target still collapses onto r
  double expect = 0;
  for (const auto& t : batch) {
    const Eigen::VectorXd out = nn::mlp_forward(q, Eigen::Map<const Eigen::VectorXd>(t.state.data(), 2)).col(0);
    const double e = head.value(out, t.action) - t.reward;
    expect += e * e;
  }
  expect /= batch.size();
  CHECK(q_update(q, qt, ptrs(batch), cfg, head).loss == doctest::Approx(expect).epsilon(1e-12));

  // Shaped slot is used when requested.
  for (auto& t : batch) t.shaped = t.reward + 1;
  cfg.train_on_shaped = true;
  CHECK(q_update(q, qt, ptrs(batch), cfg, head).loss != doctest::Approx(expect));
}

TEST_CASE("q learning on a fixed 2x2 game recovers the reward argmax") {
  const double R[2][2] = {{0.2, 0.9}, {0.1, 0.5}};
  std::vector<Transition> batch;
  for (int a0 = 0; a0 < 2; ++a0)
    for (int a1 = 0; a1 < 2; ++a1) batch.push_back(terminal({1.0}, {double(a0), double(a1)}, R[a0][a1]));
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    LearnerConfig cfg = quick_config();
    QLearner learner(cfg, {true, 2, 2, 1}, 1, rng);
    for (int k = 0; k < 3000; ++k) learner.update(ptrs(batch));
    EnvView v{{1.0}, {}};
    CHECK(learner.act(v, ActMode::greedy(), rng) == std::vector<double>{0, 1});
    const Eigen::VectorXd out = learner.outputs({1.0});
    for (int a0 = 0; a0 < 2; ++a0)
      for (int a1 = 0; a1 < 2; ++a1) CHECK(out(a0 + 2 * a1) == doctest::Approx(R[a0][a1]).epsilon(0.02));
  }
}

TEST_CASE("exhaustive climb batches find the optimum iff it is covered") {
  auto spec = one_step(2, 3, 2, 0);
  ClimbEnv env(spec);
  Rng rng(0);
  const std::vector<double> s = env.reset(rng).state;
  for (bool include_opt : {true, false}) {
    std::vector<Transition> batch;
    for (int a0 = 0; a0 < 3; ++a0)
      for (int a1 = 0; a1 < 3; ++a1) {
        if (!include_opt && a0 == 0 && a1 == 0) continue;
        const std::vector<int> a{a0, a1};
        batch.push_back(terminal(s, {double(a0), double(a1)}, climb::reward_one_step(spec, a)));
      }
    for (std::uint64_t seed : {11u, 12u, 13u}) {
      Rng r(seed);
      QLearner learner(quick_config(), env.action_space(), env.state_size(), r);
      for (int k = 0; k < 2000; ++k) learner.update(ptrs(batch));
      const bool found = learner.act({s, {}}, ActMode::greedy(), r) == std::vector<double>{0, 0};
      CAPTURE(include_opt);
      CHECK(found == include_opt);
    }
  }
}

TEST_CASE("epsilon 1 is uniform over joint actions") {
  Rng rng(17);
  QLearner learner(LearnerConfig{}, {true, 2, 3, 1}, 4, rng);
  EnvView v{{0.1, 0.2, 0.3, 0.4}, {}};
  std::map<std::vector<double>, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[learner.act(v, ActMode::eps_greedy(1.0), rng)];
  CHECK(counts.size() == 9);
  double chi2 = 0;
  for (const auto& [a, c] : counts) chi2 += (c - draws / 9.0) * (c - draws / 9.0) / (draws / 9.0);
  CHECK(chi2 < 20.09);  // chi-square 8 dof, p = 0.01
}

TEST_CASE("epsilon 0 and sigma 0 reproduce the greedy action") {
  Rng rng(2);
  QLearner q(LearnerConfig{}, {true, 2, 4, 1}, 3, rng);
  EnvView v{{0.5, -0.5, 0.25}, {}};
  for (int i = 0; i < 20; ++i) CHECK(q.act(v, ActMode::eps_greedy(0.0), rng) == q.act(v, ActMode::greedy(), rng));
  CHECK_THROWS_AS(q.act(v, ActMode::noisy(0.1), rng), Error);

  MaddpgLearner m(LearnerConfig{}, {false, 2, 3, 2}, 6, 3, rng);
  EnvView pv{{0.1, 0.2, 0.3, -0.1, -0.2, -0.3}, {{0.1, 0.2, 0.3}, {-0.1, -0.2, -0.3}}};
  const auto g = m.act(pv, ActMode::greedy(), rng);
  CHECK(g.size() == 4);
  for (double x : g) CHECK(std::abs(x) <= 1.0);
  CHECK(m.act(pv, ActMode::noisy(0.0), rng) == g);
  CHECK(m.act(pv, ActMode::eps_greedy(0.0), rng) == g);
  CHECK(m.act(pv, ActMode::noisy(0.5), rng) != g);
  for (int i = 0; i < 50; ++i)
    for (double x : m.act(pv, ActMode::noisy(5.0), rng)) CHECK(std::abs(x) <= 1.0);
}

TEST_CASE("constant critic gives zero actor gradient") {
  Rng rng(3);
  nn::MlpParams actor = nn::MlpParams::init(std::vector<int>{2, 8, 1}, rng);
  nn::MlpParams critic = nn::MlpParams::zeros(std::vector<int>{3, 8, 1});
  critic.biases.back()(0) = 0.7;
  const nn::MlpParams before = actor;
  nn::Optimizer opt(nn::OptimizerKind::kSgd, 0.1);
  Eigen::MatrixXd obs = Eigen::MatrixXd::Random(2, 5);
  auto dq_da = [&](const Eigen::MatrixXd& a) {
    Eigen::MatrixXd X(3, a.cols());
    X.topRows(2) = obs;
    X.row(2) = a.row(0);
    nn::MlpTape tape;
    nn::mlp_forward(critic, X, &tape);
    nn::MlpParams scratch = nn::MlpParams::zeros(critic.sizes());
    return Eigen::MatrixXd(nn::mlp_backward(critic, tape, Eigen::MatrixXd::Ones(1, a.cols()), scratch).bottomRows(1));
  };
  CHECK(actor_ascent_step(actor, opt, obs, dq_da, 10.0) == 0.0);
  CHECK(actor.flat() == before.flat());
}

TEST_CASE("actor ascends a quadratic critic to its maximizer") {
  for (auto kind : {nn::OptimizerKind::kSgd, nn::OptimizerKind::kAdam}) {
    Rng rng(9);
    nn::MlpParams actor = nn::MlpParams::init(std::vector<int>{1, 8, 1}, rng);
    nn::Optimizer opt(kind, 0.05);
    const Eigen::MatrixXd obs = Eigen::MatrixXd::Ones(1, 1);
    auto dq_da = [](const Eigen::MatrixXd& a) { return Eigen::MatrixXd((-2.0 * (a.array() - 0.3)).matrix()); };
    for (int k = 0; k < 3000; ++k) actor_ascent_step(actor, opt, obs, dq_da, 10.0);
    CHECK(actor_forward(actor, obs)(0, 0) == doctest::Approx(0.3).epsilon(0.01 / 0.3));
  }
}

TEST_CASE("actor-critic update soft-updates every target") {
  Rng rng(21);
  climb::ClimbTaskSpec spec;
  spec.variant = climb::Variant::kParticle;
  spec.n = 2;
  spec.U = 3;
  spec.delta = 0.5;
  spec.stages = {{2, 0}};
  spec.landmarks = particle::sample_landmarks(3, 1.0, 0.3, 4);
  ParticleEnv env(spec, particle::Physics{});
  LearnerConfig cfg;
  cfg.tau = 0.3;
  MaddpgLearner m(cfg, env.action_space(), env.state_size(), env.obs_size(), rng);

  std::vector<Transition> batch;
  EnvView v = env.reset(rng);
  for (int t = 0; t < 16; ++t) {
    auto a = uniform_action(env.action_space(), rng);
    auto st = env.step(a);
    Transition tr;
    tr.state = v.state;
    tr.obs = v.obs;
    tr.action = a;
    tr.reward = st.reward;
    tr.next_state = st.next.state;
    tr.next_obs = st.next.obs;
    tr.done = st.done;
    batch.push_back(tr);
    v = st.next;
  }
  const ActorCriticState before = m.state();
  m.update(ptrs(batch));
  const ActorCriticState& after = m.state();
  auto expect = [&](const nn::MlpParams& online, const nn::MlpParams& old_target) {
    return ((1 - cfg.tau) * old_target.flat() + cfg.tau * online.flat()).eval();
  };
  CHECK(after.critic_target.flat().isApprox(expect(after.critic, before.critic_target), 1e-14));
  for (int i = 0; i < 2; ++i) {
    CHECK(after.actor_targets[i].flat().isApprox(expect(after.actors[i], before.actor_targets[i]), 1e-14));
    CHECK_FALSE(after.actors[i].flat() == before.actors[i].flat());
  }

  // NaN rewards surface as a divergence signal.
  batch[0].reward = std::nan("");
  try {
    m.update(ptrs(batch));
    FAIL("expected training-diverged");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTrainingDiverged);
  }
}

TEST_CASE("learner config round trip and validation") {
  LearnerConfig c;
  c.lr_actor = 3e-4;
  c.hidden = {32, 16, 8};
  c.head = HeadKind::kFactored;
  c.optimizer = nn::OptimizerKind::kAdam;
  c.train_on_shaped = true;
  KvDoc doc;
  write_learner_config(doc, "learner.", c);
  LearnerConfig r = read_learner_config(doc, "learner.");
  CHECK(r.lr_actor == c.lr_actor);
  CHECK(r.hidden == c.hidden);
  CHECK(r.head == c.head);
  CHECK(r.optimizer == c.optimizer);
  CHECK(r.train_on_shaped);
  CHECK(doc.keys().size() == learner_config_keys().size());

  for (const char* bad : {"gamma = 1", "tau = 0", "lr_critic = -1", "hidden = 4,x", "head = mixed",
                          "optimizer = rmsprop", "batch_size = 0"}) {
    CAPTURE(bad);
    try {
      read_learner_config(KvDoc::parse(bad), "");
      FAIL("expected invalid-config");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kInvalidConfig);
    }
  }
}

TEST_CASE("behaviour schedule anneals linearly") {
  LearnerConfig c;
  c.eps_start = 1.0;
  c.eps_end = 0.2;
  c.explore_decay_steps = 100;
  Rng rng(1);
  QLearner q(c, {true, 2, 2, 1}, 1, rng);
  CHECK(q.behaviour_mode(0).param == 1.0);
  CHECK(q.behaviour_mode(50).param == doctest::Approx(0.6));
  CHECK(q.behaviour_mode(1000).param == 0.2);
  CHECK(q.behaviour_mode(0).kind == ActKind::kEpsGreedy);
}

TEST_CASE("checkpoints restore parameters, config and rng") {
  Rng rng(31);
  ClimbEnv env(one_step(2, 3, 1, 2));
  LearnerConfig cfg = quick_config();
  auto learner = make_learner(cfg, env, rng);
  CHECK(learner->kind() == "q");
  std::stringstream ss;
  save_checkpoint(ss, *learner, &rng);
  const auto expected_draw = rng();

  Rng restored(0);
  auto loaded = load_checkpoint(ss, env, &restored);
  CHECK(restored() == expected_draw);
  auto& a = dynamic_cast<QLearner&>(*learner);
  auto& b = dynamic_cast<QLearner&>(*loaded);
  CHECK(a.params().flat() == b.params().flat());
  CHECK(b.config().hidden == cfg.hidden);

  climb::ClimbTaskSpec ps;
  ps.variant = climb::Variant::kParticle;
  ps.n = 2;
  ps.U = 2;
  ps.stages = {{1, 1}};
  ps.landmarks = {{-0.5, 0}, {0.5, 0}};
  ParticleEnv penv(ps, particle::Physics{});
  auto m = make_learner(cfg, penv, rng);
  CHECK(m->kind() == "maddpg");
  std::stringstream ms;
  save_checkpoint(ms, *m);
  auto m2 = load_checkpoint(ms, penv);
  EnvView v = penv.reset(rng);
  CHECK(m->act(v, ActMode::greedy(), rng) == m2->act(v, ActMode::greedy(), rng));

  std::stringstream wrong;
  save_checkpoint(wrong, *m);
  CHECK_THROWS_AS(load_checkpoint(wrong, env), Error);
  std::stringstream junk("hello");
  CHECK_THROWS_AS(load_checkpoint(junk, env), Error);
}
