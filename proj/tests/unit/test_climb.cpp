#include <algorithm>
#include <set>

#include "doctest.h"
#include "mesa/climb.hpp"
#include "mesa/errors.hpp"
#include "mesa/rng.hpp"

using namespace mesa;
using namespace mesa::climb;

namespace {

ClimbTaskSpec one_step(int n, int k, int u, int U, double delta = 0.5) {
  ClimbTaskSpec s;
  s.variant = Variant::kOneStep;
  s.n = n;
  s.U = U;
  s.delta = delta;
  s.stages = {{k, u}};
  return s;
}

std::vector<JointAction> all_actions(int n, int U) {
  std::vector<JointAction> out;
  JointAction a(n, 0);
  while (true) {
    out.push_back(a);
    int i = 0;
    while (i < n && ++a[i] == U) a[i++] = 0;
    if (i == n) break;
  }
  return out;
}

// Independent best-response oracle: a is an NE iff no agent's best response
// strictly improves the payoff.
bool brute_force_ne(const ClimbTaskSpec& s, const JointAction& a) {
  const double r = reward_one_step(s, a);
  for (int i = 0; i < s.n; ++i) {
    double best = -1;
    for (int alt = 0; alt < s.U; ++alt) {
      JointAction d = a;
      d[i] = alt;
      best = std::max(best, reward_one_step(s, d));
    }
    if (best > r) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("one-step reward matches the climb payoff matrix") {
  auto s = one_step(2, 2, 0, 3);
  CHECK(reward_one_step(s, std::vector{0, 0}) == 1.0);
  CHECK(reward_one_step(s, std::vector{1, 2}) == 0.5);
  CHECK(reward_one_step(s, std::vector{0, 1}) == 0.0);
}

TEST_CASE("one-step reward rejects malformed actions") {
  auto s = one_step(2, 2, 0, 3);
  try {
    reward_one_step(s, std::vector{0});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidArgument);
  }
  CHECK_THROWS_AS(reward_one_step(s, std::vector{0, 3}), Error);
}

TEST_CASE("reward range and permutation symmetry") {
  for (int n = 2; n <= 3; ++n) {
    for (int k = 1; k <= n; ++k) {
      auto s = one_step(n, k, 1, 4, 0.3);
      for (auto a : all_actions(n, 4)) {
        const double r = reward_one_step(s, a);
        CHECK((r == 0.0 || r == 1.0 || r == 1.0 - 0.3));
        std::sort(a.begin(), a.end());
        do {
          CHECK(reward_one_step(s, a) == r);
        } while (std::next_permutation(a.begin(), a.end()));
      }
    }
  }
}

TEST_CASE("multi-stage stepping") {
  ClimbTaskSpec s;
  s.variant = Variant::kMultiStage;
  s.n = 2;
  s.U = 3;
  s.stages = {{2, 0}, {1, 1}};
  GameState g;
  auto st = multi_stage_step(s, g, std::vector{0, 0});
  CHECK(st.reward == 1.0);
  CHECK_FALSE(st.done);
  CHECK(st.next.stage == 1);

  auto a = multi_stage_step(s, st.next, std::vector{1, 2});
  CHECK(a.reward == 1.0);
  CHECK(a.done);
  auto b = multi_stage_step(s, st.next, std::vector{0, 0});
  CHECK(b.reward == 0.5);
  CHECK(b.done);

  CHECK(st.obs.size() == 2);
  CHECK(st.obs[0].size() == observation_size(s));
  CHECK(a.obs[1].size() == observation_size(s));
  CHECK(observation_size(s) == 2u * 2 * 3 + 1);

  try {
    multi_stage_step(s, a.next, std::vector{0, 0});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidState);
  }
}

TEST_CASE("multi-stage return is the sum of stage rewards") {
  Rng rng(7);
  ClimbTaskSpec s;
  s.variant = Variant::kMultiStage;
  s.n = 2;
  s.U = 4;
  s.stages = {{2, 1}, {1, 0}, {2, 3}};
  for (int ep = 0; ep < 50; ++ep) {
    GameState g;
    double ret = 0, expect = 0;
    for (int t = 0; t < 3; ++t) {
      JointAction a{static_cast<int>(uniform_index(rng, 4)), static_cast<int>(uniform_index(rng, 4))};
      expect += stage_reward(2, s.stages[t], s.delta, a);
      auto st = multi_stage_step(s, g, a);
      ret += st.reward;
      g = st.next;
    }
    CHECK(ret == doctest::Approx(expect));
  }
}

TEST_CASE("task sampling") {
  TaskSpace space;
  space.U = 10;
  CHECK(task_space_size(space) == 20);
  auto split = sample_tasks(space, 10, 3, 42);
  CHECK(split.train.size() == 10);
  CHECK(split.test.size() == 3);
  std::set<std::pair<int, int>> pairs;
  for (const auto& t : split.train) pairs.insert({t.stages[0].k, t.stages[0].u});
  for (const auto& t : split.test) pairs.insert({t.stages[0].k, t.stages[0].u});
  CHECK(pairs.size() == 13);

  auto again = sample_tasks(space, 10, 3, 42);
  CHECK(again.train == split.train);
  CHECK(again.test == split.test);

  CHECK_THROWS_AS(sample_tasks(space, 18, 3, 1), Error);

  TaskSpace multi;
  multi.variant = Variant::kMultiStage;
  multi.S = 5;
  auto ms = sample_tasks(multi, 10, 3, 9);
  for (const auto& t : ms.train) {
    CHECK(t.num_stages() == 5);
    for (const auto& te : ms.test) CHECK_FALSE(t == te);
  }
}

TEST_CASE("equilibrium classes of the penalty climb game") {
  auto s = one_step(2, 2, 0, 3);
  auto eq = classify_equilibria(s);
  CHECK(eq.optimal == std::vector<JointAction>{{0, 0}});
  std::set<JointAction> sub(eq.suboptimal_ne.begin(), eq.suboptimal_ne.end());
  CHECK(sub == std::set<JointAction>{{1, 1}, {1, 2}, {2, 1}, {2, 2}});
}

TEST_CASE("equilibrium classification agrees with brute force") {
  for (int n = 2; n <= 4; ++n) {
    for (int U = 2; n * U <= 12; ++U) {
      for (int k = 1; k <= n; ++k) {
        auto s = one_step(n, k, U - 1, U);
        auto eq = classify_equilibria(s);
        CHECK(eq.optimal.size() + eq.suboptimal_ne.size() >= 1);
        std::set<JointAction> classified;
        for (const auto* set : {&eq.optimal, &eq.suboptimal_ne, &eq.zero_ne}) {
          classified.insert(set->begin(), set->end());
        }
        for (const auto& a : all_actions(n, U)) {
          CHECK(brute_force_ne(s, a) == (classified.count(a) == 1));
        }
        for (const auto& a : eq.optimal) CHECK(reward_one_step(s, a) == 1.0);
      }
    }
  }
}

TEST_CASE("task config round-trip") {
  ClimbTaskSpec s;
  s.variant = Variant::kParticle;
  s.n = 2;
  s.U = 2;
  s.delta = 0.1 + 0.2;
  s.stages = {{2, 1}};
  s.landmarks = {{0.1, -0.3333333333333333}, {0.7, 0.123456789012345678}};
  auto back = spec_from_config(to_config(s));
  CHECK(back == s);
}
