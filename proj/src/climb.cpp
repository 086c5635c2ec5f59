#include "mesa/climb.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>

#include "mesa/errors.hpp"
#include "mesa/kvconfig.hpp"
#include "mesa/particle.hpp"
#include "mesa/rng.hpp"

namespace mesa::climb {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kOneStep: return "one_step";
    case Variant::kMultiStage: return "multi_stage";
    case Variant::kParticle: return "particle";
  }
  return "?";
}

Variant variant_from_string(std::string_view s) {
  if (s == "one_step") return Variant::kOneStep;
  if (s == "multi_stage") return Variant::kMultiStage;
  if (s == "particle") return Variant::kParticle;
  fail(ErrorKind::kInvalidArgument, "unknown climb variant '" + std::string(s) + "'");
}

void ClimbTaskSpec::validate(double min_landmark_sep) const {
  require(n >= 2, ErrorKind::kInvalidArgument, "climb task: n must be >= 2");
  require(U >= 2, ErrorKind::kInvalidArgument, "climb task: U must be >= 2");
  require(delta > 0.0 && delta < 1.0, ErrorKind::kInvalidArgument,
          "climb task: delta must lie in (0, 1)");
  require(!stages.empty(), ErrorKind::kInvalidArgument, "climb task: no stages");
  for (const Stage& s : stages) {
    require(s.k >= 1 && s.k <= n, ErrorKind::kInvalidArgument, "climb task: k out of [1, n]");
    require(s.u >= 0 && s.u < U, ErrorKind::kInvalidArgument, "climb task: u out of [0, U)");
  }
  if (variant != Variant::kMultiStage) {
    require(stages.size() == 1, ErrorKind::kInvalidArgument,
            "climb task: one-step and particle tasks have exactly one stage");
  }
  if (variant == Variant::kParticle) {
    require(static_cast<int>(landmarks.size()) == U, ErrorKind::kInvalidArgument,
            "climb task: particle task needs U landmarks");
    for (std::size_t i = 0; i < landmarks.size(); ++i) {
      for (std::size_t j = i + 1; j < landmarks.size(); ++j) {
        require(distance(landmarks[i], landmarks[j]) > min_landmark_sep,
                ErrorKind::kInvalidArgument, "climb task: landmarks closer than min separation");
      }
    }
  } else {
    require(landmarks.empty(), ErrorKind::kInvalidArgument,
            "climb task: landmarks only apply to the particle variant");
  }
}

double stage_reward(int n, const Stage& stage, double delta, std::span<const int> actions) {
  require(static_cast<int>(actions.size()) == n, ErrorKind::kInvalidArgument,
          "joint action has " + std::to_string(actions.size()) + " entries, expected " +
              std::to_string(n));
  const auto count = std::count(actions.begin(), actions.end(), stage.u);
  if (count == stage.k) return 1.0;
  if (count == 0) return 1.0 - delta;
  return 0.0;
}

namespace {

void check_actions(const ClimbTaskSpec& spec, std::span<const int> actions) {
  require(static_cast<int>(actions.size()) == spec.n, ErrorKind::kInvalidArgument,
          "joint action has " + std::to_string(actions.size()) + " entries, expected " +
              std::to_string(spec.n));
  for (int a : actions) {
    require(a >= 0 && a < spec.U, ErrorKind::kInvalidArgument, "action out of [0, U)");
  }
}

}  // namespace

double reward_one_step(const ClimbTaskSpec& spec, std::span<const int> actions) {
  require(spec.variant == Variant::kOneStep && spec.stages.size() == 1,
          ErrorKind::kInvalidArgument, "reward_one_step needs a one-step task");
  check_actions(spec, actions);
  return stage_reward(spec.n, spec.stages[0], spec.delta, actions);
}

std::size_t observation_size(const ClimbTaskSpec& spec) {
  return static_cast<std::size_t>(spec.num_stages()) * spec.n * spec.U + 1;
}

std::vector<double> observe(const ClimbTaskSpec& spec, const GameState& state) {
  std::vector<double> obs(observation_size(spec), 0.0);
  obs[0] = static_cast<double>(state.stage) / spec.num_stages();
  std::size_t offset = 1;
  for (const JointAction& a : state.history) {
    for (int i = 0; i < spec.n; ++i) obs[offset + static_cast<std::size_t>(i) * spec.U + a[i]] = 1.0;
    offset += static_cast<std::size_t>(spec.n) * spec.U;
  }
  return obs;
}

StageStep multi_stage_step(const ClimbTaskSpec& spec, const GameState& state,
                           std::span<const int> actions) {
  require(state.stage >= 0 && state.stage < spec.num_stages(), ErrorKind::kInvalidState,
          "stepping a finished climb game");
  require(static_cast<int>(state.history.size()) == state.stage, ErrorKind::kInvalidState,
          "game state history length differs from stage");
  check_actions(spec, actions);

  StageStep out;
  out.reward = stage_reward(spec.n, spec.stages[state.stage], spec.delta, actions);
  out.next = state;
  out.next.history.emplace_back(actions.begin(), actions.end());
  out.next.stage = state.stage + 1;
  out.done = out.next.stage == spec.num_stages();
  auto obs = observe(spec, out.next);
  out.obs.assign(spec.n, obs);
  return out;
}

std::uint64_t task_space_size(const TaskSpace& space) {
  if (space.variant == Variant::kParticle) return std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t per_stage = static_cast<std::uint64_t>(space.n) * space.U;
  const int stages = space.variant == Variant::kOneStep ? 1 : space.S;
  std::uint64_t size = 1;
  for (int s = 0; s < stages; ++s) {
    if (size > std::numeric_limits<std::uint64_t>::max() / per_stage) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    size *= per_stage;
  }
  return size;
}

ClimbTaskSpec task_at(const TaskSpace& space, std::uint64_t index) {
  require(space.variant != Variant::kParticle, ErrorKind::kInvalidArgument,
          "task_at: particle task space is continuous");
  ClimbTaskSpec spec;
  spec.variant = space.variant;
  spec.n = space.n;
  spec.U = space.U;
  spec.delta = space.delta;
  const std::uint64_t per_stage = static_cast<std::uint64_t>(space.n) * space.U;
  const int stages = space.variant == Variant::kOneStep ? 1 : space.S;
  for (int s = 0; s < stages; ++s) {
    const auto pair = static_cast<int>(index % per_stage);
    index /= per_stage;
    spec.stages.push_back({pair / space.U + 1, pair % space.U});
  }
  return spec;
}

TaskSplit sample_tasks(const TaskSpace& space, int count_train, int count_test,
                       std::uint64_t seed) {
  require(count_train >= 0 && count_test >= 0, ErrorKind::kInvalidArgument,
          "sample_tasks: negative counts");
  require(space.n >= 2 && space.U >= 2, ErrorKind::kInvalidArgument,
          "sample_tasks: n and U must be >= 2");
  require(space.variant != Variant::kMultiStage || space.S >= 1, ErrorKind::kInvalidArgument,
          "sample_tasks: multi-stage space needs S >= 1");
  const auto total = static_cast<std::uint64_t>(count_train) + count_test;
  Rng rng(seed);
  std::vector<ClimbTaskSpec> drawn;
  drawn.reserve(total);

  if (space.variant == Variant::kParticle) {
    require(space.particle_k >= 1 && space.particle_k <= space.n, ErrorKind::kInvalidArgument,
            "sample_tasks: particle k out of [1, n]");
    while (drawn.size() < total) {
      ClimbTaskSpec spec;
      spec.variant = Variant::kParticle;
      spec.n = space.n;
      spec.U = space.U;
      spec.delta = space.delta;
      spec.stages = {{space.particle_k, static_cast<int>(uniform_index(rng, space.U))}};
      spec.landmarks = particle::sample_landmarks(space.U, space.arena_halfwidth,
                                                  space.min_landmark_sep, rng());
      if (std::find(drawn.begin(), drawn.end(), spec) == drawn.end()) drawn.push_back(std::move(spec));
    }
  } else {
    const std::uint64_t size = task_space_size(space);
    require(total <= size, ErrorKind::kInvalidArgument,
            "sample_tasks: requested " + std::to_string(total) + " tasks from a space of " +
                std::to_string(size));
    std::vector<std::uint64_t> indices;
    if (size <= (1u << 20)) {
      // Partial Fisher-Yates over the explicit enumeration.
      std::vector<std::uint64_t> all(size);
      for (std::uint64_t i = 0; i < size; ++i) all[i] = i;
      for (std::uint64_t i = 0; i < total; ++i) {
        const std::uint64_t j = i + uniform_index(rng, size - i);
        std::swap(all[i], all[j]);
      }
      indices.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(total));
    } else {
      std::set<std::uint64_t> seen;
      while (indices.size() < total) {
        const std::uint64_t idx = uniform_index(rng, size);
        if (seen.insert(idx).second) indices.push_back(idx);
      }
    }
    for (auto idx : indices) drawn.push_back(task_at(space, idx));
  }

  TaskSplit split;
  split.train.assign(drawn.begin(), drawn.begin() + count_train);
  split.test.assign(drawn.begin() + count_train, drawn.end());
  return split;
}

EquilibriumClasses classify_equilibria(const ClimbTaskSpec& spec) {
  require(spec.variant == Variant::kOneStep, ErrorKind::kInvalidArgument,
          "classify_equilibria needs a one-step task");
  spec.validate();
  std::size_t cells = 1;
  for (int i = 0; i < spec.n; ++i) cells *= static_cast<std::size_t>(spec.U);

  auto decode = [&](std::size_t idx) {
    JointAction a(spec.n);
    for (int i = 0; i < spec.n; ++i) {
      a[i] = static_cast<int>(idx % spec.U);
      idx /= spec.U;
    }
    return a;
  };

  double best = -1.0;
  for (std::size_t c = 0; c < cells; ++c) best = std::max(best, reward_one_step(spec, decode(c)));

  EquilibriumClasses out;
  for (std::size_t c = 0; c < cells; ++c) {
    JointAction a = decode(c);
    const double r = reward_one_step(spec, a);
    bool is_ne = true;
    for (int i = 0; i < spec.n && is_ne; ++i) {
      JointAction dev = a;
      for (int alt = 0; alt < spec.U; ++alt) {
        if (alt == a[i]) continue;
        dev[i] = alt;
        if (reward_one_step(spec, dev) > r) {
          is_ne = false;
          break;
        }
      }
    }
    if (!is_ne) continue;
    if (r == best) {
      out.optimal.push_back(std::move(a));
    } else if (r > 0.0) {
      out.suboptimal_ne.push_back(std::move(a));
    } else {
      out.zero_ne.push_back(std::move(a));
    }
  }
  return out;
}

std::string to_config(const ClimbTaskSpec& spec, std::string_view prefix) {
  const std::string p(prefix);
  std::ostringstream out;
  out << p << "variant = " << to_string(spec.variant) << '\n';
  out << p << "n = " << spec.n << '\n';
  out << p << "U = " << spec.U << '\n';
  out << p << "delta = " << format_real(spec.delta) << '\n';
  out << p << "stages = ";
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    if (i) out << ',';
    out << spec.stages[i].k << ':' << spec.stages[i].u;
  }
  out << '\n';
  if (!spec.landmarks.empty()) {
    out << p << "landmarks = ";
    for (std::size_t i = 0; i < spec.landmarks.size(); ++i) {
      if (i) out << ';';
      out << format_real(spec.landmarks[i].x) << ' ' << format_real(spec.landmarks[i].y);
    }
    out << '\n';
  }
  return out.str();
}

ClimbTaskSpec spec_from_config(std::string_view text, std::string_view prefix) {
  const KvDoc doc = KvDoc::parse(text);
  const std::string p(prefix);
  ClimbTaskSpec spec;
  spec.variant = variant_from_string(doc.get_string(p + "variant", "one_step"));
  spec.n = static_cast<int>(doc.get_int(p + "n", 2));
  spec.U = static_cast<int>(doc.get_int(p + "U", 2));
  spec.delta = doc.get_double(p + "delta", 0.5);

  const std::string stages = doc.get_string(p + "stages", "");
  std::istringstream ss(stages);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto colon = item.find(':');
    require(colon != std::string::npos, ErrorKind::kInvalidConfig,
            "key '" + p + "stages': expected k:u pairs");
    spec.stages.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
  }
  const std::string marks = doc.get_string(p + "landmarks", "");
  std::istringstream ms(marks);
  while (std::getline(ms, item, ';')) {
    std::istringstream xy(item);
    Vec2 v;
    require(static_cast<bool>(xy >> v.x >> v.y), ErrorKind::kInvalidConfig,
            "key '" + p + "landmarks': expected 'x y' pairs");
    spec.landmarks.push_back(v);
  }
  return spec;
}

}  // namespace mesa::climb
