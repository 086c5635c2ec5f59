#include "mesa/meta.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "mesa/errors.hpp"

namespace mesa::meta {

namespace fs = std::filesystem;

void AnnealSchedule::validate() const {
  require(p_start >= 0 && p_start <= 1, ErrorKind::kInvalidConfig, "schedule p_start must lie in [0, 1]");
  require(t_end >= 0, ErrorKind::kInvalidConfig, "schedule t_end must be >= 0");
}

double anneal_probability(const AnnealSchedule& s, long long t) {
  require(t >= 0, ErrorKind::kInvalidArgument, "anneal_probability: negative step");
  if (t >= s.t_end) return 0.0;
  if (s.shape == AnnealShape::kStep) return s.p_start;
  return s.p_start * std::max(0.0, 1.0 - static_cast<double>(t) / static_cast<double>(s.t_end));
}

void MetaTrainConfig::validate() const {
  auto check = [](bool ok, const char* key, const char* why) {
    require(ok, ErrorKind::kInvalidConfig, std::string("key '") + key + "': " + why);
  };
  check(E >= 1, "E", "must be >= 1");
  check(r_star > 0, "r_star", "must be > 0");
  check(relabel_gamma > 0 && relabel_gamma < 1, "relabel_gamma", "must lie in (0, 1)");
  check(collection_steps >= 1, "collection_steps", "must be >= 1");
  check(training_steps >= 1, "training_steps", "must be >= 1");
  check(min_training_steps >= 0, "min_training_steps", "must be >= 0");
  check(conv_window >= 1, "conv_window", "must be >= 1");
  check(conv_tol > 0, "conv_tol", "must be > 0");
  check(clusters >= 1, "clusters", "must be >= 1");
  check(dist_eps > 0, "dist_eps", "must be > 0");
  check(fd_exponent >= 0, "fd_exponent", "must be >= 0");
  check(max_attempts >= 1, "max_attempts", "must be >= 1");
  check(harvest_action_hold >= 1, "harvest_action_hold", "must be >= 1");
  collect_learner.validate();
  explore_learner.validate();
}

void MetaTestConfig::validate() const {
  auto check = [](bool ok, const char* key, const char* why) {
    require(ok, ErrorKind::kInvalidConfig, std::string("key '") + key + "': " + why);
  };
  check(steps >= 1, "steps", "must be >= 1");
  check(eval_interval >= 1, "eval_interval", "must be >= 1");
  check(eval_episodes >= 1, "eval_episodes", "must be >= 1");
  check(t_end_fraction >= 0, "t_end_fraction", "must be >= 0");
  schedule.validate();
  learner.validate();
}

int ExplorationPolicy::clusters_covered() const {
  return static_cast<int>(std::count_if(histogram.begin(), histogram.end(), [](long long c) { return c > 0; }));
}

bool moving_average_converged(std::span<const double> r, int window, double tol) {
  const auto w = static_cast<std::size_t>(window);
  if (r.size() < 2 * w) return false;
  const double recent = std::accumulate(r.end() - window, r.end(), 0.0) / window;
  const double before = std::accumulate(r.end() - 2 * window, r.end() - window, 0.0) / window;
  const double scale = std::max(std::abs(recent), std::abs(before));
  if (scale == 0.0) return true;
  return std::abs(recent - before) / scale < tol;
}

std::vector<std::unique_ptr<Environment>> make_envs(const std::vector<climb::ClimbTaskSpec>& tasks,
                                                     const particle::Physics& physics) {
  std::vector<std::unique_ptr<Environment>> envs;
  for (const auto& t : tasks) envs.push_back(make_env(t, physics));
  return envs;
}

namespace {

// Sub-stream ids.
enum Stream : std::uint64_t { kInit = 1, kAct, kEnv, kSample, kMix, kEval, kHold };

Rng stream(std::uint64_t seed, std::uint64_t id, std::uint64_t sub = 0) {
  return Rng(derive_seed(derive_seed(seed, sub), id));
}

Transition make_transition(const EnvView& v, std::vector<double> a, const EnvStep& st, RolloutSource src) {
  Transition t;
  t.state = v.state;
  t.obs = v.obs;
  t.action = std::move(a);
  t.reward = st.reward;
  t.next_state = st.next.state;
  t.next_obs = st.next.obs;
  t.done = st.done;
  t.source = src;
  return t;
}

// Replay-driven training cadence shared by every loop below.
class Trainer {
 public:
  Trainer(Learner& learner, std::uint64_t sample_seed)
      : learner_(learner), buf_(learner.config().buffer_capacity), rng_(sample_seed) {}

  ReplayBuffer& buffer() { return buf_; }

  // Records one environment step and runs any due updates.
  void observe(Transition t) {
    buf_.push(std::move(t));
    ++step_;
    const auto& c = learner_.config();
    if (step_ <= c.warmup_steps || step_ % c.train_every != 0) return;
    if (buf_.size() < static_cast<std::size_t>(c.batch_size)) return;
    for (int k = 0; k < c.updates_per_round; ++k) {
      last_loss_ = learner_.update(buf_.sample(static_cast<std::size_t>(c.batch_size), rng_));
      ++updates_;
    }
  }

  long long step() const { return step_; }
  long long updates() const { return updates_; }
  double last_loss() const { return last_loss_; }

 private:
  Learner& learner_;
  ReplayBuffer buf_;
  Rng rng_;
  long long step_ = 0;
  long long updates_ = 0;
  double last_loss_ = 0.0;
};

ActMode deployed_mode(const Learner& l) {
  const auto& c = l.config();
  return l.action_space().discrete ? ActMode::eps_greedy(c.eps_end) : ActMode::noisy(c.noise_end);
}

std::string harvest_report(const std::vector<HarvestStats>& stats, double r_star) {
  std::ostringstream ss;
  ss << "no transition reached R* = " << r_star << " during harvesting;";
  for (const auto& h : stats) {
    ss << " task " << h.task << ": " << h.episodes << " episodes, max reward " << h.max_reward << ";";
  }
  return ss.str();
}

}  // namespace

void harvest(const std::vector<climb::ClimbTaskSpec>& tasks, const MetaTrainConfig& cfg, std::uint64_t seed,
             MetaTrainResult& out, const MetricFn& metric) {
  require(!tasks.empty(), ErrorKind::kInvalidArgument, "meta-train needs at least one task");
  std::vector<subspace::Trajectory> trajectories;
  std::map<subspace::Point, Transition> raw;  // first transition behind each valuable point
  long long global_step = 0;
  out.harvest.clear();

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto env = make_env(tasks[i], cfg.physics);
    Rng init = stream(seed, kInit, i), act = stream(seed, kAct, i), env_rng = stream(seed, kEnv, i);
    auto learner = make_learner(cfg.collect_learner, *env, init);
    Trainer trainer(*learner, derive_seed(seed, 1000 + i));
    const long long warmup = cfg.collect_learner.warmup_steps;
    HarvestStats stats;
    stats.task = static_cast<int>(i);
    double window_return = 0.0;
    long long window_episodes = 0;

    while (trainer.step() < cfg.collection_steps) {
      EnvView view = env->reset(env_rng);
      subspace::Trajectory tr;
      tr.task_id = static_cast<int>(i);
      std::vector<Transition> steps;
      std::vector<double> held;
      double ret = 0.0;
      for (int t = 0; t < env->horizon(); ++t) {
        const long long s = trainer.step();
        std::vector<double> a;
        if (s < warmup) {
          if (held.empty() || t % cfg.harvest_action_hold == 0) held = uniform_action(env->action_space(), act);
          a = held;
        } else {
          a = learner->act(view, learner->behaviour_mode(s - warmup), act);
        }
        tr.points.push_back(env->embed(a));
        EnvStep st = env->step(a);
        tr.rewards.push_back(st.reward);
        ret += st.reward;
        stats.max_reward = std::max(stats.max_reward, st.reward);
        if (st.reward >= cfg.r_star) ++stats.hits;
        Transition x = make_transition(view, std::move(a), st, s < warmup ? RolloutSource::kWarmup
                                                                           : RolloutSource::kLearner);
        steps.push_back(x);
        trainer.observe(std::move(x));
        view = st.next;
        if (st.done || trainer.step() >= cfg.collection_steps) break;
      }
      ++stats.episodes;
      window_return += ret;
      ++window_episodes;
      if (metric && (trainer.step() / 1000 != (trainer.step() - static_cast<long long>(steps.size())) / 1000)) {
        metric("harvest", global_step + trainer.step(), "episode_return", window_return / window_episodes);
        window_return = 0.0;
        window_episodes = 0;
      }
      const bool any_hit = std::any_of(tr.rewards.begin(), tr.rewards.end(), [&](double r) { return r >= cfg.r_star; });
      if (!any_hit) continue;
      for (std::size_t k = 0; k < steps.size(); ++k) raw.try_emplace(tr.points[k], steps[k]);
      trajectories.push_back(std::move(tr));
    }
    global_step += trainer.step();
    out.harvest.push_back(stats);
    if (metric) metric("harvest", global_step, "task_hits", static_cast<double>(stats.hits));
  }

  out.tasks = tasks;
  out.mstar = subspace::collect_valuable(trajectories, cfg.r_star, cfg.relabel_gamma,
                                         {cfg.max_valuable, derive_seed(seed, 77)});
  if (out.mstar.empty()) fail(ErrorKind::kHarvestFailure, harvest_report(out.harvest, cfg.r_star));
  out.mstar_transitions.clear();
  for (const auto& p : out.mstar.points) out.mstar_transitions.push_back(raw.at(p));
}

ExplorationPolicy train_exploration_policy(const subspace::ValuableSet& mstar, const subspace::ClusterHash& hash,
                                           const subspace::PseudoCounts& global,
                                           const std::vector<std::unique_ptr<Environment>>& envs,
                                           const MetaTrainConfig& cfg, std::uint64_t seed, const MetricFn& metric) {
  require(!mstar.empty(), ErrorKind::kInvalidState, "exploration training needs a non-empty valuable set");
  require(!envs.empty(), ErrorKind::kInvalidArgument, "exploration training needs environments");
  const subspace::RadiusIndex index(mstar, cfg.dist_eps);
  const subspace::ShapeParams shape{cfg.dist_eps, cfg.fd_exponent};
  LearnerConfig lc = cfg.explore_learner;
  lc.train_on_shaped = true;

  for (int attempt = 1;; ++attempt) {
    const std::uint64_t s = derive_seed(seed, 500 + attempt);
    try {
      Rng init = stream(s, kInit), act = stream(s, kAct), env_rng = stream(s, kEnv);
      ExplorationPolicy pol;
      pol.attempts = attempt;
      pol.learner = make_learner(lc, *envs[0], init);
      pol.histogram.assign(static_cast<std::size_t>(hash.size()), 0);
      pol.last_visits.assign(pol.histogram.size(), 0);
      Trainer trainer(*pol.learner, stream(s, kSample)());
      double window = 0.0;
      while (trainer.step() < cfg.training_steps) {
        Environment& env = *envs[static_cast<std::size_t>(pol.episodes % static_cast<long long>(envs.size()))];
        EnvView view = env.reset(env_rng);
        subspace::PseudoCounts counts{global.counts, subspace::CountScope::kTrajectory};
        double ret = 0.0;
        std::fill(pol.last_visits.begin(), pol.last_visits.end(), 0);
        for (int t = 0; t < env.horizon(); ++t) {
          const long long st_idx = trainer.step();
          std::vector<double> a = st_idx < lc.warmup_steps
                                      ? uniform_action(env.action_space(), act)
                                      : pol.learner->act(view, pol.learner->behaviour_mode(st_idx - lc.warmup_steps), act);
          const auto emb = env.embed(a);
          EnvStep st = env.step(a);
          const auto sh = subspace::shaped_reward(emb, std::nullopt, hash, counts, index, shape);
          if (sh.cluster >= 0) {
            ++pol.histogram[static_cast<std::size_t>(sh.cluster)];
            ++pol.last_visits[static_cast<std::size_t>(sh.cluster)];
          }
          Transition x = make_transition(view, std::move(a), st, RolloutSource::kExploration);
          x.shaped = sh.reward;
          ret += sh.reward;
          trainer.observe(std::move(x));
          view = st.next;
          if (st.done || trainer.step() >= cfg.training_steps) break;
        }
        pol.returns.push_back(ret);
        ++pol.episodes;
        window += ret;
        if (metric && pol.episodes % cfg.conv_window == 0) {
          metric("explore-train", trainer.step(), "shaped_return", window / cfg.conv_window);
          window = 0.0;
        }
        if (trainer.step() >= cfg.min_training_steps &&
            moving_average_converged(pol.returns, cfg.conv_window, cfg.conv_tol)) {
          pol.converged = true;
          break;
        }
      }
      pol.steps = trainer.step();
      return pol;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kTrainingDiverged) throw;
      if (attempt >= cfg.max_attempts) {
        fail(ErrorKind::kTrainingDiverged,
             "exploration policy diverged on all " + std::to_string(attempt) + " attempts: " + e.what());
      }
    }
  }
}

MetaTrainResult meta_train(const std::vector<climb::ClimbTaskSpec>& tasks, const MetaTrainConfig& cfg,
                           std::uint64_t seed, const MetricFn& metric) {
  cfg.validate();
  MetaTrainResult out;
  harvest(tasks, cfg, derive_seed(seed, 1), out, metric);

  const int C = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(cfg.clusters), subspace::count_distinct(out.mstar.points)));
  out.hash = subspace::fit_clusters(out.mstar.points, C, derive_seed(seed, 2)).hash;
  out.global = subspace::PseudoCounts::zeros(C, subspace::CountScope::kGlobal);
  if (metric) metric("explore-train", 0, "valuable_points", static_cast<double>(out.mstar.size()));

  const auto envs = make_envs(tasks, cfg.physics);
  long long offset = 0;
  for (int e = 0; e < cfg.E; ++e) {
    MetricFn shifted;
    if (metric) {
      shifted = [&](const std::string& ph, long long step, const std::string& m, double v) {
        metric(ph, offset + step, m, v);
      };
    }
    ExplorationPolicy pol =
        train_exploration_policy(out.mstar, out.hash, out.global, envs, cfg, derive_seed(seed, 100 + e), shifted);
    // N-hat grows by the last trajectory's visits (D is reset every episode)
    for (std::size_t c = 0; c < pol.last_visits.size(); ++c) out.global.counts[c] += pol.last_visits[c];
    offset += pol.steps;
    if (metric) metric("explore-train", offset, "clusters_covered", pol.clusters_covered());
    out.policies.push_back(std::move(pol));
  }
  return out;
}

double MetaTestResult::hit_rate(double fraction, long long total_steps) const {
  const double cut = static_cast<double>(total_steps) * (1.0 - fraction);
  long long n = 0, hits = 0;
  for (const auto& e : episodes) {
    if (static_cast<double>(e.end_step) <= cut) continue;
    ++n;
    hits += e.hit ? 1 : 0;
  }
  return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
}

double evaluate_greedy(const Learner& learner, Environment& env, int episodes, Rng& rng) {
  double total = 0.0;
  for (int k = 0; k < episodes; ++k) {
    EnvView view = env.reset(rng);
    for (int t = 0; t < env.horizon(); ++t) {
      EnvStep st = env.step(learner.act(view, ActMode::greedy(), rng));
      total += st.reward;
      view = st.next;
      if (st.done) break;
    }
  }
  return total / episodes;
}

MetaTestResult meta_test(const climb::ClimbTaskSpec& task, const std::vector<ExplorationPolicy>& policies,
                         const std::vector<Transition>& prefill, const MetaTestConfig& cfg, std::uint64_t seed,
                         const MetricFn& metric) {
  cfg.validate();
  auto env = make_env(task, cfg.physics);
  auto eval_env = env->clone();
  Rng init = stream(seed, kInit), act = stream(seed, kAct), env_rng = stream(seed, kEnv);
  Rng mix = stream(seed, kMix), eval_rng = stream(seed, kEval);
  for (const auto& p : policies) {
    require(p.learner && p.learner->action_space().joint_dim() == env->action_space().joint_dim(),
            ErrorKind::kInvalidArgument, "exploration policy does not fit the test task");
  }

  MetaTestResult res;
  auto learner = make_learner(cfg.learner, *env, init);
  Trainer trainer(*learner, stream(seed, kSample)());
  AnnealSchedule sched = cfg.schedule;
  sched.t_end = std::llround(cfg.t_end_fraction * static_cast<double>(cfg.steps));
  const long long warmup = cfg.learner.warmup_steps;

  for (const Transition& t : prefill) {
    Transition x = t;
    x.source = RolloutSource::kPrefill;
    x.shaped = 0.0;
    trainer.buffer().push(std::move(x));
    ++res.prefilled;
  }

  auto eval = [&](long long step) {
    const double v = evaluate_greedy(*learner, *eval_env, cfg.eval_episodes, eval_rng);
    res.curve.push_back({step, v});
    if (metric) metric("meta-test", step, "greedy_return", v);
  };
  eval(0);

  while (trainer.step() < cfg.steps) {
    const double p = anneal_probability(sched, trainer.step());
    const bool explore = !policies.empty() && bernoulli(mix, p);
    const Learner* driver = nullptr;
    if (explore) driver = policies[uniform_index(mix, policies.size())].learner.get();

    EnvView view = env->reset(env_rng);
    EpisodeRecord rec;
    for (int t = 0; t < env->horizon(); ++t) {
      const long long s = trainer.step();
      RolloutSource src;
      std::vector<double> a;
      if (driver) {
        src = RolloutSource::kExploration;
        a = driver->act(view, deployed_mode(*driver), act);
      } else if (s < warmup) {
        src = RolloutSource::kWarmup;
        a = uniform_action(env->action_space(), act);
      } else {
        src = RolloutSource::kLearner;
        a = learner->act(view, learner->behaviour_mode(s - warmup), act);
      }
      EnvStep st = env->step(a);
      rec.ret += st.reward;
      rec.hit = rec.hit || st.reward >= 1.0;
      rec.source = src;
      (src == RolloutSource::kExploration ? res.from_exploration
       : src == RolloutSource::kWarmup    ? res.from_warmup
                                          : res.from_learner)++;
      trainer.observe(make_transition(view, std::move(a), st, src));
      view = st.next;
      if (trainer.step() % cfg.eval_interval == 0) eval(trainer.step());
      if (st.done || trainer.step() >= cfg.steps) break;
    }
    rec.end_step = trainer.step();
    res.episodes.push_back(rec);
  }
  if (res.curve.back().step != trainer.step()) eval(trainer.step());
  res.learner = std::move(learner);
  res.buffer = std::move(trainer.buffer());
  return res;
}

double gated_visit_rate(const Learner* policy, const std::vector<std::unique_ptr<Environment>>& envs,
                        const subspace::RadiusIndex& index, int episodes, std::uint64_t seed) {
  require(!envs.empty() && episodes >= 1, ErrorKind::kInvalidArgument, "gated_visit_rate: nothing to roll out");
  Rng act = stream(seed, kAct), env_rng = stream(seed, kEnv);
  long long gated = 0;
  for (int k = 0; k < episodes; ++k) {
    Environment& env = *envs[static_cast<std::size_t>(k) % envs.size()];
    EnvView view = env.reset(env_rng);
    for (int t = 0; t < env.horizon(); ++t) {
      std::vector<double> a =
          policy ? policy->act(view, deployed_mode(*policy), act) : uniform_action(env.action_space(), act);
      if (index.nearest_within(env.embed(a))) ++gated;
      EnvStep st = env.step(a);
      view = st.next;
      if (st.done) break;
    }
  }
  return static_cast<double>(gated) / episodes;
}

// ---------------------------------------------------------------- persistence

namespace {

std::string join(const std::vector<long long>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<long long> split_ll(const std::string& key, const std::string& text) {
  std::vector<long long> out;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      fail(ErrorKind::kIo, "manifest key '" + key + "': bad integer list");
    }
  }
  return out;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  require(f.good(), ErrorKind::kIo, "cannot write " + p.string());
  return f;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p);
  require(f.good(), ErrorKind::kIo, "cannot read " + p.string());
  return f;
}

}  // namespace

void save_manifest(const std::string& dir, const MetaTrainResult& r, const std::string& fingerprint) {
  fs::create_directories(dir);
  const fs::path d(dir);
  KvDoc m;
  m.set("format", "mesa-manifest-1");
  m.set("fingerprint", fingerprint);
  m.set("tasks", std::to_string(r.tasks.size()));
  m.set("policies", std::to_string(r.policies.size()));
  m.set("clusters", std::to_string(r.hash.size()));
  m.set("r_star", format_real(r.mstar.r_star));
  m.set("global_counts", join(r.global.counts));
  for (std::size_t e = 0; e < r.policies.size(); ++e) {
    const auto& p = r.policies[e];
    const std::string pre = "policy." + std::to_string(e) + ".";
    const std::string file = "policy_" + std::to_string(e) + ".ckpt";
    m.set(pre + "file", file);
    m.set(pre + "steps", std::to_string(p.steps));
    m.set(pre + "episodes", std::to_string(p.episodes));
    m.set(pre + "converged", p.converged ? "true" : "false");
    m.set(pre + "attempts", std::to_string(p.attempts));
    m.set(pre + "histogram", join(p.histogram));
    m.set(pre + "last_visits", join(p.last_visits));
    auto f = open_out(d / file);
    save_checkpoint(f, *p.learner);
  }
  open_out(d / "manifest.conf") << m.serialize();

  std::string tasks;
  for (std::size_t i = 0; i < r.tasks.size(); ++i) tasks += climb::to_config(r.tasks[i], "task." + std::to_string(i) + ".");
  open_out(d / "tasks.conf") << tasks;

  auto mcsv = open_out(d / "mstar.csv");
  subspace::write_valuable_csv(mcsv, r.mstar);
  auto ccsv = open_out(d / "centroids.csv");
  for (Eigen::Index c = 0; c < r.hash.centroids.rows(); ++c) {
    for (Eigen::Index k = 0; k < r.hash.centroids.cols(); ++k) {
      if (k) ccsv << ',';
      ccsv << format_real(r.hash.centroids(c, k));
    }
    ccsv << '\n';
  }
  auto pf = open_out(d / "prefill.txt");
  write_transitions(pf, r.mstar_transitions);
}

MetaTrainResult load_manifest(const std::string& dir, const particle::Physics& physics, std::string* fingerprint) {
  const fs::path d(dir);
  const KvDoc m = KvDoc::load((d / "manifest.conf").string());
  require(m.get_string("format", "") == "mesa-manifest-1", ErrorKind::kIo, "unsupported manifest format");
  if (fingerprint) *fingerprint = m.get_string("fingerprint", "");
  MetaTrainResult r;

  std::stringstream tasks_text;
  tasks_text << open_in(d / "tasks.conf").rdbuf();
  const long long ntasks = m.get_int("tasks", 0);
  require(ntasks >= 1, ErrorKind::kIo, "manifest lists no tasks");
  for (long long i = 0; i < ntasks; ++i) {
    r.tasks.push_back(climb::spec_from_config(tasks_text.str(), "task." + std::to_string(i) + "."));
  }

  auto mcsv = open_in(d / "mstar.csv");
  r.mstar = subspace::read_valuable_csv(mcsv, m.get_double("r_star", 1.0));
  auto pf = open_in(d / "prefill.txt");
  r.mstar_transitions = read_transitions(pf);

  auto ccsv = open_in(d / "centroids.csv");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(ccsv, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  const auto C = static_cast<int>(m.get_int("clusters", 0));
  require(static_cast<int>(rows.size()) == C && C >= 1, ErrorKind::kIo, "centroid count does not match manifest");
  r.hash.centroids.resize(C, static_cast<Eigen::Index>(rows[0].size()));
  for (int c = 0; c < C; ++c) {
    require(rows[c].size() == rows[0].size(), ErrorKind::kIo, "ragged centroid file");
    for (std::size_t k = 0; k < rows[c].size(); ++k) r.hash.centroids(c, static_cast<Eigen::Index>(k)) = rows[c][k];
  }
  r.global.scope = subspace::CountScope::kGlobal;
  r.global.counts = split_ll("global_counts", m.get_string("global_counts", ""));
  require(static_cast<int>(r.global.counts.size()) == C, ErrorKind::kIo, "global counts do not match clusters");

  auto env = make_env(r.tasks[0], physics);
  const long long E = m.get_int("policies", 0);
  for (long long e = 0; e < E; ++e) {
    const std::string pre = "policy." + std::to_string(e) + ".";
    ExplorationPolicy p;
    auto f = open_in(d / m.get_string(pre + "file", ""));
    p.learner = load_checkpoint(f, *env);
    p.steps = m.get_int(pre + "steps", 0);
    p.episodes = m.get_int(pre + "episodes", 0);
    p.converged = m.get_bool(pre + "converged", false);
    p.attempts = static_cast<int>(m.get_int(pre + "attempts", 1));
    p.histogram = split_ll(pre + "histogram", m.get_string(pre + "histogram", ""));
    p.last_visits = split_ll(pre + "last_visits", m.get_string(pre + "last_visits", ""));
    r.policies.push_back(std::move(p));
  }
  return r;
}

// ---------------------------------------------------------------- config

void write_physics(KvDoc& doc, const std::string& p, const particle::Physics& ph) {
  doc.set(p + "dt", format_real(ph.dt));
  doc.set(p + "damping", format_real(ph.damping));
  doc.set(p + "v_max", format_real(ph.v_max));
  doc.set(p + "arena_halfwidth", format_real(ph.arena_halfwidth));
  doc.set(p + "landmark_radius", format_real(ph.landmark_radius));
  doc.set(p + "horizon", std::to_string(ph.horizon));
}

particle::Physics read_physics(const KvDoc& doc, const std::string& p, const particle::Physics& d) {
  particle::Physics ph;
  ph.dt = doc.get_double(p + "dt", d.dt);
  ph.damping = doc.get_double(p + "damping", d.damping);
  ph.v_max = doc.get_double(p + "v_max", d.v_max);
  ph.arena_halfwidth = doc.get_double(p + "arena_halfwidth", d.arena_halfwidth);
  ph.landmark_radius = doc.get_double(p + "landmark_radius", d.landmark_radius);
  ph.horizon = static_cast<int>(doc.get_int(p + "horizon", d.horizon));
  auto check = [&](bool ok, const char* key) {
    require(ok, ErrorKind::kInvalidConfig, "key '" + p + key + "': out of range");
  };
  check(ph.dt > 0, "dt");
  check(ph.damping >= 0 && ph.damping < 1, "damping");
  check(ph.v_max > 0, "v_max");
  check(ph.arena_halfwidth > 0, "arena_halfwidth");
  check(ph.landmark_radius > 0, "landmark_radius");
  check(ph.horizon >= 1, "horizon");
  return ph;
}

void write_meta_train_config(KvDoc& doc, const std::string& p, const MetaTrainConfig& c) {
  doc.set(p + "E", std::to_string(c.E));
  doc.set(p + "r_star", format_real(c.r_star));
  doc.set(p + "relabel_gamma", format_real(c.relabel_gamma));
  doc.set(p + "collection_steps", std::to_string(c.collection_steps));
  doc.set(p + "training_steps", std::to_string(c.training_steps));
  doc.set(p + "min_training_steps", std::to_string(c.min_training_steps));
  doc.set(p + "conv_window", std::to_string(c.conv_window));
  doc.set(p + "conv_tol", format_real(c.conv_tol));
  doc.set(p + "clusters", std::to_string(c.clusters));
  doc.set(p + "dist_eps", format_real(c.dist_eps));
  doc.set(p + "fd_exponent", format_real(c.fd_exponent));
  doc.set(p + "max_valuable", std::to_string(c.max_valuable));
  doc.set(p + "max_attempts", std::to_string(c.max_attempts));
  doc.set(p + "harvest_action_hold", std::to_string(c.harvest_action_hold));
  write_learner_config(doc, p + "collect.", c.collect_learner);
  write_learner_config(doc, p + "explore.", c.explore_learner);
}

MetaTrainConfig read_meta_train_config(const KvDoc& doc, const std::string& p, const MetaTrainConfig& d) {
  MetaTrainConfig c = d;
  c.E = static_cast<int>(doc.get_int(p + "E", d.E));
  c.r_star = doc.get_double(p + "r_star", d.r_star);
  c.relabel_gamma = doc.get_double(p + "relabel_gamma", d.relabel_gamma);
  c.collection_steps = doc.get_int(p + "collection_steps", d.collection_steps);
  c.training_steps = doc.get_int(p + "training_steps", d.training_steps);
  c.min_training_steps = doc.get_int(p + "min_training_steps", d.min_training_steps);
  c.conv_window = static_cast<int>(doc.get_int(p + "conv_window", d.conv_window));
  c.conv_tol = doc.get_double(p + "conv_tol", d.conv_tol);
  c.clusters = static_cast<int>(doc.get_int(p + "clusters", d.clusters));
  c.dist_eps = doc.get_double(p + "dist_eps", d.dist_eps);
  c.fd_exponent = doc.get_double(p + "fd_exponent", d.fd_exponent);
  const long long mv = doc.get_int(p + "max_valuable", static_cast<long long>(d.max_valuable));
  require(mv >= 0, ErrorKind::kInvalidConfig, "key '" + p + "max_valuable': must be >= 0");
  c.max_valuable = static_cast<std::size_t>(mv);
  c.max_attempts = static_cast<int>(doc.get_int(p + "max_attempts", d.max_attempts));
  c.harvest_action_hold = static_cast<int>(doc.get_int(p + "harvest_action_hold", d.harvest_action_hold));
  c.collect_learner = read_learner_config(doc, p + "collect.", d.collect_learner);
  c.explore_learner = read_learner_config(doc, p + "explore.", d.explore_learner);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kInvalidConfig, "section '" + p + "' " + e.what());
  }
  return c;
}

void write_meta_test_config(KvDoc& doc, const std::string& p, const MetaTestConfig& c) {
  doc.set(p + "steps", std::to_string(c.steps));
  doc.set(p + "eval_interval", std::to_string(c.eval_interval));
  doc.set(p + "eval_episodes", std::to_string(c.eval_episodes));
  doc.set(p + "p_start", format_real(c.schedule.p_start));
  doc.set(p + "t_end_fraction", format_real(c.t_end_fraction));
  doc.set(p + "anneal", c.schedule.shape == AnnealShape::kStep ? "step" : "linear");
  write_learner_config(doc, p + "learner.", c.learner);
}

MetaTestConfig read_meta_test_config(const KvDoc& doc, const std::string& p, const MetaTestConfig& d) {
  MetaTestConfig c = d;
  c.steps = doc.get_int(p + "steps", d.steps);
  c.eval_interval = doc.get_int(p + "eval_interval", d.eval_interval);
  c.eval_episodes = static_cast<int>(doc.get_int(p + "eval_episodes", d.eval_episodes));
  c.schedule.p_start = doc.get_double(p + "p_start", d.schedule.p_start);
  c.t_end_fraction = doc.get_double(p + "t_end_fraction", d.t_end_fraction);
  const std::string shape = doc.get_string(p + "anneal", d.schedule.shape == AnnealShape::kStep ? "step" : "linear");
  require(shape == "linear" || shape == "step", ErrorKind::kInvalidConfig,
          "key '" + p + "anneal': expected linear or step");
  c.schedule.shape = shape == "step" ? AnnealShape::kStep : AnnealShape::kLinear;
  c.learner = read_learner_config(doc, p + "learner.", d.learner);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kInvalidConfig, "section '" + p + "' " + e.what());
  }
  return c;
}

}  // namespace mesa::meta
