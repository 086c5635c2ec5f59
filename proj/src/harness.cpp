#include "mesa/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "mesa/env.hpp"
#include "mesa/errors.hpp"
#include "mesa/rng.hpp"
#include "mesa/subspace.hpp"
#include "mesa/theory.hpp"

namespace fs = std::filesystem;

namespace mesa::harness {

const char* to_string(Command c) {
  switch (c) {
    case Command::kTheory: return "theory";
    case Command::kMetaTrain: return "meta-train";
    case Command::kMetaTest: return "meta-test";
    case Command::kReproduce: return "reproduce";
    case Command::kAblate: return "ablate";
  }
  return "?";
}

Command command_from_string(std::string_view s) {
  for (Command c : {Command::kTheory, Command::kMetaTrain, Command::kMetaTest, Command::kReproduce,
                    Command::kAblate}) {
    if (s == to_string(c)) return c;
  }
  fail(ErrorKind::kInvalidArgument, "unknown command '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& key, const std::string& what) {
    require(ok, ErrorKind::kInvalidConfig, "key '" + key + "': " + what);
  };
  check(!experiment.empty(), "experiment", "must be non-empty");
  check(!seeds.empty(), "seeds", "at least one seed is required");
  check(space.n >= 2, "space.n", "must be >= 2");
  check(space.U >= 2, "space.U", "must be >= 2");
  check(space.S >= 1, "space.S", "must be >= 1");
  check(space.delta > 0 && space.delta < 1, "space.delta", "must lie in (0, 1)");
  check(space.particle_k >= 1 && space.particle_k <= space.n, "space.particle_k", "must lie in [1, n]");
  check(space.min_landmark_sep >= 0, "space.min_landmark_sep", "must be >= 0");
  check(train_tasks >= 1, "tasks.train", "must be >= 1");
  check(test_tasks >= 1, "tasks.test", "must be >= 1");
  check(hit_fraction > 0 && hit_fraction <= 1, "metrics.hit_fraction", "must lie in (0, 1]");
  check(gated_episodes >= 1, "metrics.gated_episodes", "must be >= 1");
  check(workers >= 0, "workers", "must be >= 0");
  check(!theory.U.empty() && !theory.delta.empty() && !theory.lambda.empty(), "theory", "grids must be non-empty");
  for (int u : theory.U) check(u >= 2, "theory.U", "values must be >= 2");
  for (double d : theory.delta) check(d > 0 && d < 1, "theory.delta", "values must lie in (0, 1)");
  for (double l : theory.lambda) check(l > 0, "theory.lambda", "values must be > 0");
  for (double e : theory.epsilon) check(e > 0 && e <= 1, "theory.epsilon", "values must lie in (0, 1]");
  check(theory.sigma_w > 0 && theory.sigma_e > 0, "theory.sigma_w", "noise scales must be > 0");
  check(theory.max_steps >= 1, "theory.max_steps", "must be >= 1");
  try {
    meta.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kInvalidConfig, std::string("section 'meta.' ") + e.what());
  }
  try {
    test.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kInvalidConfig, std::string("section 'test.' ") + e.what());
  }
}

RunConfig default_config(climb::Variant variant) {
  RunConfig c;
  c.space.variant = variant;
  switch (variant) {
    case climb::Variant::kOneStep:
      c.experiment = "one-step";
      c.space.U = 10;
      c.space.S = 1;
      c.test.steps = 50000;
      break;
    case climb::Variant::kMultiStage:
      c.experiment = "multi-stage";
      c.space.U = 10;
      c.space.S = 5;
      c.test.steps = 100000;
      break;
    case climb::Variant::kParticle: {
      c.experiment = "particle";
      c.space.n = 2;
      c.space.U = 3;
      c.space.particle_k = 2;
      c.train_tasks = 30;
      c.test_tasks = 1;
      c.test.steps = 300000;
      c.test.eval_interval = 10000;
      c.test.eval_episodes = 10;
      c.meta.collection_steps = 200000;
      c.meta.training_steps = 200000;
      c.meta.min_training_steps = 200000;
      c.meta.clusters = 64;
      c.meta.dist_eps = 0.7;
      c.meta.harvest_action_hold = 10;
      LearnerConfig l;
      l.lr_actor = 1e-4;
      l.lr_critic = 1e-3;
      l.optimizer = nn::OptimizerKind::kAdam;
      l.warmup_steps = 50000;
      l.explore_decay_steps = 100000;
      l.train_every = 1;
      l.gamma = 0.95;
      c.test.learner = l;
      c.meta.collect_learner = l;
      c.meta.collect_learner.train_every = 50;
      c.meta.explore_learner = l;
      c.meta.explore_learner.warmup_steps = 5000;
      c.meta.explore_learner.train_every = 2;
      break;
    }
  }
  return c;
}

namespace {

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) {
      s += format_real(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

template <class T>
std::vector<T> read_list(const KvDoc& doc, const std::string& key, const std::vector<T>& fallback) {
  if (!doc.has(key)) return fallback;
  std::vector<T> out;
  for (const std::string& item : split(*doc.get(key))) {
    KvDoc one;
    one.set(key, item);
    if constexpr (std::is_floating_point_v<T>) {
      out.push_back(one.get_double(key, 0.0));
    } else {
      const long long v = one.get_int(key, 0);
      if constexpr (std::is_unsigned_v<T>) {
        require(v >= 0, ErrorKind::kInvalidConfig, "key '" + key + "': values must be >= 0");
      }
      out.push_back(static_cast<T>(v));
    }
  }
  return out;
}

std::string variant_key(climb::Variant v) { return climb::to_string(v); }

}  // namespace

KvDoc to_doc(const RunConfig& c) {
  KvDoc d;
  d.set("experiment", c.experiment);
  d.set("seeds", join(c.seeds));
  d.set("workers", std::to_string(c.workers));
  d.set("out_dir", c.out_dir);
  d.set("space.variant", variant_key(c.space.variant));
  d.set("space.n", std::to_string(c.space.n));
  d.set("space.U", std::to_string(c.space.U));
  d.set("space.S", std::to_string(c.space.S));
  d.set("space.delta", format_real(c.space.delta));
  d.set("space.particle_k", std::to_string(c.space.particle_k));
  d.set("space.min_landmark_sep", format_real(c.space.min_landmark_sep));
  d.set("tasks.train", std::to_string(c.train_tasks));
  d.set("tasks.test", std::to_string(c.test_tasks));
  d.set("tasks.seed", std::to_string(c.task_seed));
  d.set("metrics.hit_fraction", format_real(c.hit_fraction));
  d.set("metrics.gated_episodes", std::to_string(c.gated_episodes));
  meta::write_physics(d, "physics.", c.physics);
  meta::write_meta_train_config(d, "meta.", c.meta);
  meta::write_meta_test_config(d, "test.", c.test);
  d.set("test.prefill_valuable", c.test.prefill_valuable ? "true" : "false");
  d.set("theory.U", join(c.theory.U));
  d.set("theory.delta", join(c.theory.delta));
  d.set("theory.lambda", join(c.theory.lambda));
  d.set("theory.epsilon", join(c.theory.epsilon));
  d.set("theory.sigma_w", format_real(c.theory.sigma_w));
  d.set("theory.sigma_e", format_real(c.theory.sigma_e));
  d.set("theory.max_steps", std::to_string(c.theory.max_steps));
  return d;
}

RunConfig from_doc(const KvDoc& doc) {
  const climb::Variant variant = [&] {
    try {
      return climb::variant_from_string(doc.get_string("space.variant", "one_step"));
    } catch (const Error& e) {
      fail(ErrorKind::kInvalidConfig, std::string("key 'space.variant': ") + e.what());
    }
  }();
  const RunConfig d = default_config(variant);
  const KvDoc known = to_doc(d);
  for (const std::string& key : doc.keys()) {
    require(known.has(key), ErrorKind::kInvalidConfig, "unknown key '" + key + "'");
  }

  RunConfig c = d;
  c.experiment = doc.get_string("experiment", d.experiment);
  c.seeds = read_list(doc, "seeds", d.seeds);
  c.workers = static_cast<int>(doc.get_int("workers", d.workers));
  c.out_dir = doc.get_string("out_dir", d.out_dir);
  c.space.n = static_cast<int>(doc.get_int("space.n", d.space.n));
  c.space.U = static_cast<int>(doc.get_int("space.U", d.space.U));
  c.space.S = static_cast<int>(doc.get_int("space.S", d.space.S));
  c.space.delta = doc.get_double("space.delta", d.space.delta);
  c.space.particle_k = static_cast<int>(doc.get_int("space.particle_k", d.space.particle_k));
  c.space.min_landmark_sep = doc.get_double("space.min_landmark_sep", d.space.min_landmark_sep);
  c.train_tasks = static_cast<int>(doc.get_int("tasks.train", d.train_tasks));
  c.test_tasks = static_cast<int>(doc.get_int("tasks.test", d.test_tasks));
  const long long ts = doc.get_int("tasks.seed", static_cast<long long>(d.task_seed));
  require(ts >= 0, ErrorKind::kInvalidConfig, "key 'tasks.seed': must be >= 0");
  c.task_seed = static_cast<std::uint64_t>(ts);
  c.hit_fraction = doc.get_double("metrics.hit_fraction", d.hit_fraction);
  c.gated_episodes = static_cast<int>(doc.get_int("metrics.gated_episodes", d.gated_episodes));
  c.physics = meta::read_physics(doc, "physics.", d.physics);
  c.space.arena_halfwidth = c.physics.arena_halfwidth;
  c.meta = meta::read_meta_train_config(doc, "meta.", d.meta);
  c.meta.physics = c.physics;
  c.test = meta::read_meta_test_config(doc, "test.", d.test);
  c.test.prefill_valuable = doc.get_bool("test.prefill_valuable", d.test.prefill_valuable);
  c.test.physics = c.physics;
  c.theory.U = read_list(doc, "theory.U", d.theory.U);
  c.theory.delta = read_list(doc, "theory.delta", d.theory.delta);
  c.theory.lambda = read_list(doc, "theory.lambda", d.theory.lambda);
  c.theory.epsilon = read_list(doc, "theory.epsilon", d.theory.epsilon);
  c.theory.sigma_w = doc.get_double("theory.sigma_w", d.theory.sigma_w);
  c.theory.sigma_e = doc.get_double("theory.sigma_e", d.theory.sigma_e);
  c.theory.max_steps = doc.get_int("theory.max_steps", d.theory.max_steps);
  c.validate();
  return c;
}

RunConfig parse_config_text(std::string_view text) { return from_doc(KvDoc::parse(text)); }

RunConfig parse_config(const std::string& path) {
  require(fs::exists(path), ErrorKind::kIo, "config file '" + path + "' does not exist");
  return from_doc(KvDoc::load(path));
}

int resolve_workers(int configured) {
  if (const char* env = std::getenv("MESA_WORKERS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    require(end && *end == '\0' && v >= 1, ErrorKind::kInvalidConfig,
            "MESA_WORKERS must be a positive integer, got '" + std::string(env) + "'");
    return static_cast<int>(v);
  }
  if (configured >= 1) return configured;
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

void apply_overrides(RunConfig& cfg, const RunOverrides& o) {
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.out_dir) cfg.out_dir = *o.out_dir;
}

// ---------------------------------------------------------------- metrics

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  out << "run,seed,phase,step,metric,value\n";
  for (const auto& r : rows) {
    out << r.run << ',' << r.seed << ',' << r.phase << ',' << r.step << ',' << r.metric << ','
        << format_real(r.value) << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kIo, "metrics file is empty");
  require(line == "run,seed,phase,step,metric,value", ErrorKind::kIo, "metrics file has an unexpected header");
  std::vector<MetricsRow> rows;
  std::size_t no = 1;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() == 6, ErrorKind::kIo, "metrics line " + std::to_string(no) + ": expected 6 fields");
    MetricsRow r;
    r.run = f[0];
    r.phase = f[2];
    r.metric = f[4];
    try {
      std::size_t pos = 0;
      r.seed = std::stoull(f[1], &pos);
      require(pos == f[1].size(), ErrorKind::kIo, "");
      r.step = std::stoll(f[3], &pos);
      require(pos == f[3].size(), ErrorKind::kIo, "");
      r.value = std::stod(f[5], &pos);
      require(pos == f[5].size(), ErrorKind::kIo, "");
    } catch (const std::exception&) {
      fail(ErrorKind::kIo, "metrics line " + std::to_string(no) + ": malformed number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

const std::set<std::string>& summary_metrics() {
  static const std::set<std::string> m{"final_return", "hit_rate", "gated_visit_rate", "mstar_size",
                                       "clusters_covered"};
  return m;
}

std::string arm_of(const std::string& run) { return run.substr(0, run.find('/')); }

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

// Arms appear in order of first appearance in the rows.
std::vector<std::string> arm_order(std::span<const MetricsRow> rows) {
  std::vector<std::string> order;
  for (const auto& r : rows) {
    const std::string a = arm_of(r.run);
    if (std::find(order.begin(), order.end(), a) == order.end()) order.push_back(a);
  }
  return order;
}

}  // namespace

std::vector<SummaryRow> summarize(std::span<const MetricsRow> rows) {
  // (arm, metric) -> seed -> values
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, std::vector<double>>> groups;
  for (const auto& r : rows) {
    if (!summary_metrics().count(r.metric) || r.run == "meta-train") continue;
    groups[{arm_of(r.run), r.metric}][r.seed].push_back(r.value);
  }
  std::vector<SummaryRow> out;
  for (const std::string& arm : arm_order(rows)) {
    for (const std::string& metric : summary_metrics()) {
      auto it = groups.find({arm, metric});
      if (it == groups.end()) continue;
      SummaryRow s;
      s.arm = arm;
      s.metric = metric;
      for (const auto& [seed, vals] : it->second) {
        s.seeds.push_back(seed);
        s.values.push_back(mean_std(vals).first);
      }
      std::tie(s.mean, s.stddev) = mean_std(s.values);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::string format_summary(std::span<const SummaryRow> rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %-18s %12s %12s %4s\n", "arm", "metric", "mean", "std", "n");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %-18s %12.6f %12.6f %4zu\n", r.arm.c_str(), r.metric.c_str(), r.mean,
                  r.stddev, r.values.size());
    out += buf;
  }
  return out;
}

const SummaryRow* find_summary(std::span<const SummaryRow> rows, std::string_view arm, std::string_view metric) {
  for (const auto& r : rows) {
    if (r.arm == arm && r.metric == metric) return &r;
  }
  return nullptr;
}

std::vector<CurveBand> curve_bands(std::span<const MetricsRow> rows) {
  // arm -> seed -> step -> task values
  std::map<std::string, std::map<std::uint64_t, std::map<long long, std::vector<double>>>> g;
  for (const auto& r : rows) {
    if (r.phase != "meta-test" || r.metric != "greedy_return") continue;
    g[arm_of(r.run)][r.seed][r.step].push_back(r.value);
  }
  std::vector<CurveBand> out;
  for (const std::string& arm : arm_order(rows)) {
    auto it = g.find(arm);
    if (it == g.end()) continue;
    std::set<long long> common;
    bool first = true;
    for (const auto& [seed, steps] : it->second) {
      std::set<long long> s;
      for (const auto& kv : steps) s.insert(kv.first);
      if (first) {
        common = s;
        first = false;
      } else {
        std::set<long long> both;
        std::set_intersection(common.begin(), common.end(), s.begin(), s.end(), std::inserter(both, both.begin()));
        common = std::move(both);
      }
    }
    CurveBand b;
    b.arm = arm;
    for (long long step : common) {
      std::vector<double> per_seed;
      for (const auto& [seed, steps] : it->second) per_seed.push_back(mean_std(steps.at(step)).first);
      auto [m, s] = mean_std(per_seed);
      b.steps.push_back(step);
      b.mean.push_back(m);
      b.stddev.push_back(s);
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::string render_svg(std::span<const CurveBand> bands, const std::string& title) {
  require(!bands.empty(), ErrorKind::kInvalidArgument, "render_svg: no curves");
  const double W = 720, H = 440, L = 60, R = 150, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  long long xmax = 1;
  double ymax = 1.1;
  for (const auto& b : bands) {
    if (!b.steps.empty()) xmax = std::max(xmax, b.steps.back());
    for (std::size_t i = 0; i < b.mean.size(); ++i) ymax = std::max(ymax, b.mean[i] + b.stddev[i]);
  }
  ymax = std::ceil(ymax * 10.0) / 10.0;
  auto X = [&](double s) { return L + pw * s / static_cast<double>(xmax); };
  auto Y = [&](double v) { return T + ph * (1.0 - std::clamp(v, 0.0, ymax) / ymax); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::string s;
  char buf[512];
  auto put = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    s += buf;
  };
  put("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n", W, H, W,
      H);
  put("<rect x=\"0\" y=\"0\" width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", W, H);
  put("<text x=\"%.1f\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">%s</text>\n", L, title.c_str());
  put("<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n", L, T, pw, ph);
  for (int i = 0; i <= 4; ++i) {
    const double v = ymax * i / 4.0;
    put("<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">%.2f</text>\n",
        L - 6, Y(v) + 4, v);
    const double st = static_cast<double>(xmax) * i / 4.0;
    put("<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">%.0f</text>\n",
        X(st), T + ph + 16, st);
  }
  put("<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">step</text>\n",
      L + pw / 2, H - 12);
  put("<text x=\"14\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" "
      "transform=\"rotate(-90 14 %.1f)\">greedy return per step</text>\n",
      T + ph / 2, T + ph / 2);
  // reference lines: sub-optimal equilibrium and optimum
  put("<line class=\"ref\" x1=\"%.1f\" y1=\"%.2f\" x2=\"%.1f\" y2=\"%.2f\" stroke=\"purple\" stroke-dasharray=\"6,4\"/>\n",
      L, Y(0.5), L + pw, Y(0.5));
  put("<line class=\"ref\" x1=\"%.1f\" y1=\"%.2f\" x2=\"%.1f\" y2=\"%.2f\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n",
      L, Y(1.0), L + pw, Y(1.0));

  for (std::size_t k = 0; k < bands.size(); ++k) {
    const auto& b = bands[k];
    const char* col = colors[k % 6];
    if (b.steps.empty()) continue;
    std::string poly;
    for (std::size_t i = 0; i < b.steps.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(static_cast<double>(b.steps[i])), Y(b.mean[i] + b.stddev[i]));
      poly += buf;
    }
    for (std::size_t i = b.steps.size(); i-- > 0;) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(static_cast<double>(b.steps[i])), Y(b.mean[i] - b.stddev[i]));
      poly += buf;
    }
    poly.pop_back();
    s += "<polygon points=\"" + poly + "\" fill=\"" + col + "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    std::string line;
    for (std::size_t i = 0; i < b.steps.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(static_cast<double>(b.steps[i])), Y(b.mean[i]));
      line += buf;
    }
    line.pop_back();
    s += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"" + col + "\" stroke-width=\"2\"/>\n";
    const double ly = T + 16 + 20.0 * static_cast<double>(k);
    put("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>\n", L + pw + 12, ly,
        L + pw + 32, ly, col);
    put("<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\">%s</text>\n", L + pw + 38, ly + 4,
        b.arm.c_str());
  }
  s += "</svg>\n";
  return s;
}

std::vector<std::string> emit_artifacts(const std::string& run_dir, const std::string& title) {
  const fs::path dir(run_dir);
  const fs::path csv = dir / "metrics.csv";
  require(fs::exists(csv), ErrorKind::kIo, "no metrics file at '" + csv.string() + "'");
  std::ifstream in(csv);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open '" + csv.string() + "'");
  const auto rows = read_metrics_csv(in);
  require(!rows.empty(), ErrorKind::kIo, "metrics file '" + csv.string() + "' has no rows");

  std::vector<std::string> written;
  const auto summary = summarize(rows);
  {
    const fs::path p = dir / "summary.txt";
    std::ofstream out(p);
    require(static_cast<bool>(out), ErrorKind::kIo, "cannot write '" + p.string() + "'");
    out << format_summary(summary);
    written.push_back(p.string());
  }
  {
    const fs::path p = dir / "summary.csv";
    std::ofstream out(p);
    require(static_cast<bool>(out), ErrorKind::kIo, "cannot write '" + p.string() + "'");
    out << "arm,metric,n,mean,std\n";
    for (const auto& r : summary) {
      out << r.arm << ',' << r.metric << ',' << r.values.size() << ',' << format_real(r.mean) << ','
          << format_real(r.stddev) << '\n';
    }
    written.push_back(p.string());
  }
  const auto bands = curve_bands(rows);
  if (!bands.empty()) {
    const std::string svg = render_svg(bands, title.empty() ? dir.filename().string() : title);
    const fs::path p = dir / "curves.svg";
    std::ofstream out(p);
    require(static_cast<bool>(out), ErrorKind::kIo, "cannot write '" + p.string() + "'");
    out << svg;
    written.push_back(p.string());
  }
  return written;
}

// ---------------------------------------------------------------- theory

void write_theory_phase_csv(std::ostream& out, const TheoryGrid& g) {
  out << "U,delta,lambda,criterion,oracle_optimal,margin\n";
  for (int U : g.U) {
    const int m = U - 1;
    for (double delta : g.delta) {
      for (double lambda : g.lambda) {
        const auto p = theory::make_profile(1.0, 2.0 * m, static_cast<double>(m) * m, U, lambda);
        const bool holds = theory::criterion_holds(p, 1.0, delta);
        const auto q = theory::solve_mle_oracle_mean(theory::profile_matrix(p), 1, 1.0, delta, std::sqrt(lambda), 1.0);
        const bool opt = theory::is_equivalently_optimal(q.q_matrix());
        out << U << ',' << format_real(delta) << ',' << format_real(lambda) << ',' << (holds ? 1 : 0) << ','
            << (opt ? 1 : 0) << ',' << format_real(theory::criterion_margin(p, 1.0, delta)) << '\n';
      }
    }
  }
}

void write_theory_threshold_csv(std::ostream& out, const TheoryGrid& g) {
  out << "strategy,epsilon,U,delta,min_steps,unbounded,lambda_threshold,lambda_closed_form\n";
  struct Named {
    std::string name;
    theory::Strategy s;
  };
  std::vector<Named> strategies{{"uniform", theory::Strategy::uniform()},
                                {"structured", theory::Strategy::structured()}};
  for (double e : g.epsilon) strategies.push_back({"eps_greedy", theory::Strategy::eps_greedy(e)});
  strategies.push_back({"eps_decay", theory::Strategy::eps_decay()});
  const double scale = g.sigma_w * g.sigma_w / (g.sigma_e * g.sigma_e);
  for (const auto& [name, s] : strategies) {
    for (int U : g.U) {
      for (double delta : g.delta) {
        theory::ThresholdResult r;
        if (s.kind == theory::StrategyKind::kStructured) {
          // degenerate profile: the criterion does not apply, ask the oracle at T = 1
          const auto q = theory::solve_mle_oracle_mean(theory::strategy_matrix(s, U, 1), 1, 1.0, delta, g.sigma_w,
                                                       g.sigma_e);
          r = theory::is_equivalently_optimal(q.q_matrix()) ? theory::ThresholdResult{1, false}
                                                             : theory::ThresholdResult{g.max_steps, true};
        } else {
          r = theory::min_exploration_steps(s, U, delta, g.sigma_w, g.sigma_e, g.max_steps);
        }
        out << name << ',' << (s.kind == theory::StrategyKind::kEpsGreedyFixed ? format_real(s.epsilon) : "") << ','
            << U << ',' << format_real(delta) << ',' << r.steps << ',' << (r.unbounded ? 1 : 0) << ','
            << format_real(static_cast<double>(r.steps) * scale) << ',';
        if (s.kind == theory::StrategyKind::kUniform) out << format_real(theory::uniform_lambda_threshold(U, delta));
        out << '\n';
      }
    }
  }
}

// ---------------------------------------------------------------- pipelines

namespace {

// FNV-1a over the keys that determine meta-training.
std::string fingerprint(const RunConfig& cfg, std::uint64_t seed) {
  const KvDoc d = to_doc(cfg);
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  };
  for (const std::string& k : d.keys()) {
    if (k.rfind("space.", 0) == 0 || k.rfind("tasks.", 0) == 0 || k.rfind("meta.", 0) == 0 ||
        k.rfind("physics.", 0) == 0) {
      mix(k);
      mix(*d.get(k));
    }
  }
  mix(std::to_string(seed));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> arms_for(Command cmd) {
  switch (cmd) {
    case Command::kMetaTest: return {"mesa"};
    case Command::kReproduce: return {"mesa", "vanilla"};
    case Command::kAblate: return {"vanilla", "buffer-init", "mesa"};
    default: return {};
  }
}

struct SeedJob {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  std::exception_ptr error;
};

// Progress lines from concurrent seeds, one whole line at a time.
class SharedLog {
 public:
  explicit SharedLog(std::ostream& out) : out_(out) {}
  void line(const std::string& s) {
    std::lock_guard<std::mutex> lock(m_);
    out_ << s << std::flush;
  }

 private:
  std::ostream& out_;
  std::mutex m_;
};

[[noreturn]] void rethrow_with_context(const std::string& ctx) {
  try {
    throw;
  } catch (const Error& e) {
    throw Error(e.kind(), ctx + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kInvalidState, ctx + ": " + e.what());
  }
}

void run_seed(const RunConfig& cfg, Command cmd, const climb::TaskSplit& split, SeedJob& job, SharedLog& shared) {
  const std::uint64_t seed = job.seed;
  const fs::path seed_dir = fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
  fs::create_directories(seed_dir);
  const fs::path manifest = seed_dir / "manifest";
  const std::string fp = fingerprint(cfg, seed);
  std::ostringstream log;
  auto flush = [&] {
    shared.line(log.str());
    log.str("");
  };

  auto sink = [&job, seed](const std::string& run) {
    return [&job, seed, run](const std::string& phase, long long step, const std::string& metric, double v) {
      job.rows.push_back({run, seed, phase, step, metric, v});
    };
  };

  meta::MetaTrainResult mt;
  std::string phase = "meta-train";
  try {
    bool loaded = false;
    if (cmd == Command::kMetaTest && fs::exists(manifest / "manifest.conf")) {
      std::string have;
      mt = meta::load_manifest(manifest.string(), cfg.physics, &have);
      loaded = have == fp;
      if (loaded) {
        log << "seed " << seed << ": reusing manifest " << manifest.string() << '\n';
        flush();
      }
    }
    if (!loaded) {
      mt = meta::meta_train(split.train, cfg.meta, derive_seed(seed, 1), sink("meta-train"));
      fs::remove_all(manifest);
      meta::save_manifest(manifest.string(), mt, fp);
      log << "seed " << seed << ": meta-trained " << mt.policies.size() << " policies, |M*| = " << mt.mstar.size()
          << ", clusters = " << mt.hash.size() << '\n';
      flush();
    }
    job.rows.push_back({"policies", seed, "explore-train", 0, "mstar_size", static_cast<double>(mt.mstar.size())});
    double covered = 0.0;
    for (const auto& p : mt.policies) covered += p.clusters_covered();
    job.rows.push_back({"policies", seed, "explore-train", 0, "clusters_covered",
                        covered / static_cast<double>(std::max<std::size_t>(1, mt.policies.size()))});
    if (cmd == Command::kMetaTrain) return;

    phase = "meta-test";
    const std::vector<meta::ExplorationPolicy> none;
    const std::vector<Transition> no_prefill;
    for (const std::string& arm : arms_for(cmd)) {
      const bool use_policies = arm == "mesa";
      const bool use_prefill = arm == "buffer-init" || (arm == "mesa" && cfg.test.prefill_valuable);
      for (std::size_t j = 0; j < split.test.size(); ++j) {
        const auto& task = split.test[j];
        const double per_step = 1.0 / static_cast<double>(make_env(task, cfg.physics)->horizon());
        const std::string run = arm + "/task" + std::to_string(j);
        auto base = sink(run);
        auto scaled = [&base, per_step](const std::string& ph, long long step, const std::string& metric, double v) {
          base(ph, step, metric, metric == "greedy_return" ? v * per_step : v);
        };
        phase = "meta-test " + run;
        const auto res = meta::meta_test(task, use_policies ? mt.policies : none,
                                         use_prefill ? mt.mstar_transitions : no_prefill, cfg.test,
                                         derive_seed(seed, 100 + j), scaled);
        job.rows.push_back({run, seed, "meta-test", cfg.test.steps, "final_return", res.final_return() * per_step});
        job.rows.push_back(
            {run, seed, "meta-test", cfg.test.steps, "hit_rate", res.hit_rate(cfg.hit_fraction, cfg.test.steps)});
        log << "seed " << seed << " " << run << ": final " << res.final_return() * per_step << ", hit rate "
            << res.hit_rate(cfg.hit_fraction, cfg.test.steps) << ", exploration transitions "
            << res.from_exploration << '\n';
        flush();
      }
    }

    if (!mt.policies.empty() && !mt.mstar.empty()) {
      phase = "gated-visits";
      const auto envs = meta::make_envs(split.test, cfg.physics);
      // visits near the high-reward points only, not their densified precursors
      subspace::ValuableSet high;
      high.r_star = mt.mstar.r_star;
      for (std::size_t i = 0; i < mt.mstar.size(); ++i) {
        if (mt.mstar.rewards[i] >= mt.mstar.r_star) high.add(mt.mstar.points[i], mt.mstar.rewards[i], mt.mstar.task_ids[i]);
      }
      const subspace::RadiusIndex index(high.empty() ? mt.mstar : high, cfg.meta.dist_eps);
      double explore = 0.0;
      for (std::size_t e = 0; e < mt.policies.size(); ++e) {
        explore += meta::gated_visit_rate(mt.policies[e].learner.get(), envs, index, cfg.gated_episodes,
                                          derive_seed(seed, 200 + e));
      }
      explore /= static_cast<double>(mt.policies.size());
      const double random = meta::gated_visit_rate(nullptr, envs, index, cfg.gated_episodes, derive_seed(seed, 300));
      job.rows.push_back({"gated-explore", seed, "meta-test", 0, "gated_visit_rate", explore});
      job.rows.push_back({"gated-random", seed, "meta-test", 0, "gated_visit_rate", random});
      log << "seed " << seed << ": gated visits per episode, exploration " << explore << ", random " << random << '\n';
      flush();
    }
  } catch (...) {
    rethrow_with_context("seed " + std::to_string(seed) + ", " + phase);
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write '" + p.string() + "'");
  out << text;
}

}  // namespace

std::vector<SummaryRow> run_experiment(const RunConfig& cfg, Command cmd, std::ostream& log) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  write_text(out / "config.conf", to_doc(cfg).serialize());

  if (cmd == Command::kTheory) {
    std::ostringstream phase, thr;
    write_theory_phase_csv(phase, cfg.theory);
    write_theory_threshold_csv(thr, cfg.theory);
    write_text(out / "theory_phase.csv", phase.str());
    write_text(out / "theory_thresholds.csv", thr.str());
    log << "wrote " << (out / "theory_phase.csv").string() << " and " << (out / "theory_thresholds.csv").string()
        << '\n';
    return {};
  }

  const climb::TaskSplit split = climb::sample_tasks(cfg.space, cfg.train_tasks, cfg.test_tasks, cfg.task_seed);
  {
    std::string tasks;
    for (std::size_t i = 0; i < split.train.size(); ++i) tasks += climb::to_config(split.train[i], "train." + std::to_string(i) + ".");
    for (std::size_t i = 0; i < split.test.size(); ++i) tasks += climb::to_config(split.test[i], "test." + std::to_string(i) + ".");
    write_text(out / "tasks.conf", tasks);
  }

  std::vector<SeedJob> jobs(cfg.seeds.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) jobs[i].seed = cfg.seeds[i];
  const int workers = std::min<int>(resolve_workers(cfg.workers), static_cast<int>(jobs.size()));
  std::atomic<std::size_t> next{0};
  SharedLog shared(log);
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        run_seed(cfg, cmd, split, jobs[i], shared);
      } catch (...) {
        jobs[i].error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& j : jobs) {
    if (j.error) std::rethrow_exception(j.error);
  }

  std::vector<MetricsRow> rows;
  for (auto& j : jobs) {
    write_text(fs::path(cfg.out_dir) / ("seed_" + std::to_string(j.seed)) / "metrics.csv", [&] {
      std::ostringstream s;
      write_metrics_csv(s, j.rows);
      return s.str();
    }());
    rows.insert(rows.end(), j.rows.begin(), j.rows.end());
  }
  {
    std::ostringstream s;
    write_metrics_csv(s, rows);
    write_text(out / "metrics.csv", s.str());
  }
  emit_artifacts(out.string(), cfg.experiment + " (" + to_string(cmd) + ")");
  const auto summary = summarize(rows);
  log << format_summary(summary);
  return summary;
}

}  // namespace mesa::harness
