#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <tuple>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mesa/errors.hpp"
#include "mesa/harness.hpp"
#include "mesa/theory.hpp"

using namespace mesa;
using namespace mesa::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.push_back("");
    rows.push_back(f);
  }
  return rows;
}

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidConfig);
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mesa_harness_" + name);
  fs::remove_all(p);
  return p;
}

// A tiny one-step run: 3 actions, 2 training tasks, 1 test task.
RunConfig tiny(const fs::path& out) {
  RunConfig c = parse_config_text(
      "space.variant = one_step\n"
      "space.U = 3\n"
      "tasks.train = 2\n"
      "tasks.test = 1\n"
      "seeds = 0,1\n"
      "meta.E = 2\n"
      "meta.collection_steps = 600\n"
      "meta.training_steps = 800\n"
      "meta.min_training_steps = 800\n"
      "meta.clusters = 4\n"
      "meta.collect.warmup_steps = 600\n"
      "meta.collect.hidden = 16\n"
      "meta.explore.warmup_steps = 200\n"
      "meta.explore.hidden = 16\n"
      "test.steps = 600\n"
      "test.eval_interval = 200\n"
      "test.learner.warmup_steps = 200\n"
      "test.learner.hidden = 16\n"
      "metrics.gated_episodes = 50\n");
  c.out_dir = out.string();
  return c;
}

}  // namespace

TEST_CASE("a minimal config is completed with the published defaults") {
  const RunConfig c = parse_config_text("space.variant = one_step\nseeds = 4\n");
  CHECK(c.seeds == std::vector<std::uint64_t>{4});
  CHECK(c.meta.fd_exponent == 5.0);
  CHECK(c.meta.relabel_gamma == 0.05);
  CHECK(c.meta.r_star == 1.0);
  CHECK(c.meta.dist_eps == 0.1);
  CHECK(c.test.schedule.p_start == 0.5);
  CHECK(c.test.steps == 50000);
  CHECK(c.space.U == 10);
  CHECK(c.train_tasks == 10);
  CHECK(c.test_tasks == 3);

  const RunConfig m = parse_config_text("space.variant = multi_stage\n");
  CHECK(m.space.S == 5);
  CHECK(m.test.steps == 100000);
  const RunConfig p = parse_config_text("space.variant = particle\n");
  CHECK(p.space.U == 3);
  CHECK(p.space.particle_k == 2);
  CHECK(p.test.steps == 300000);
}

TEST_CASE("unknown keys are rejected by name") {
  CHECK(error_of("gamm = 0.9\n").find("'gamm'") != std::string::npos);
  CHECK(error_of("test.learner.gamm = 0.9\n").find("'test.learner.gamm'") != std::string::npos);
}

TEST_CASE("out-of-range values are rejected") {
  CHECK(error_of("test.learner.lr_critic = -0.1\n").find("lr_critic") != std::string::npos);
  CHECK(error_of("meta.relabel_gamma = 1\n").find("relabel_gamma") != std::string::npos);
  CHECK(error_of("seeds = \n").find("seeds") != std::string::npos);
  CHECK(error_of("space.variant = chess\n").find("space.variant") != std::string::npos);
  CHECK(error_of("physics.dt = 0\n").find("physics.dt") != std::string::npos);
  CHECK_THROWS_AS(parse_config("/nonexistent/mesa.conf"), Error);
}

TEST_CASE("config documents round-trip for every family") {
  for (auto v : {climb::Variant::kOneStep, climb::Variant::kMultiStage, climb::Variant::kParticle}) {
    RunConfig c = default_config(v);
    c.seeds = {3, 5};
    c.theory.delta = {0.25, 0.125};
    const std::string text = to_doc(c).serialize();
    CHECK(to_doc(parse_config_text(text)).serialize() == text);
  }
}

TEST_CASE("overrides replace the seed list and output directory") {
  RunConfig c = default_config(climb::Variant::kOneStep);
  apply_overrides(c, {7, std::string("elsewhere")});
  CHECK(c.seeds == std::vector<std::uint64_t>{7});
  CHECK(c.out_dir == "elsewhere");
}

TEST_CASE("worker count honours the environment override") {
  ::unsetenv("MESA_WORKERS");
  CHECK(resolve_workers(2) == 2);
  CHECK(resolve_workers(0) >= 1);
  ::setenv("MESA_WORKERS", "3", 1);
  CHECK(resolve_workers(1) == 3);
  ::setenv("MESA_WORKERS", "zero", 1);
  CHECK_THROWS_AS(resolve_workers(1), Error);
  ::unsetenv("MESA_WORKERS");
}

TEST_CASE("metrics rows round-trip through CSV") {
  const std::vector<MetricsRow> rows{{"mesa/task0", 1, "meta-test", 0, "greedy_return", 0.5},
                                     {"mesa/task0", 1, "meta-test", 100, "greedy_return", 1.0 / 3.0}};
  std::stringstream ss;
  write_metrics_csv(ss, rows);
  const auto back = read_metrics_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[1].run == "mesa/task0");
  CHECK(back[1].step == 100);
  CHECK(back[1].value == 1.0 / 3.0);

  std::stringstream bad("run,seed,phase,step,metric,value\nx,1,p,notanumber,m,1\n");
  CHECK_THROWS_AS(read_metrics_csv(bad), Error);
  std::stringstream header("a,b\n");
  CHECK_THROWS_AS(read_metrics_csv(header), Error);
}

TEST_CASE("summary averages tasks within a seed, then seeds") {
  const std::vector<MetricsRow> rows{
      {"mesa/task0", 0, "meta-test", 10, "final_return", 1.0}, {"mesa/task1", 0, "meta-test", 10, "final_return", 0.5},
      {"mesa/task0", 1, "meta-test", 10, "final_return", 1.0}, {"mesa/task1", 1, "meta-test", 10, "final_return", 1.0},
      {"vanilla/task0", 0, "meta-test", 10, "final_return", 0.5},
      {"vanilla/task0", 1, "meta-test", 10, "final_return", 0.5},
      {"mesa/task0", 0, "meta-test", 10, "greedy_return", 0.1}};
  const auto s = summarize(rows);
  const SummaryRow* m = find_summary(s, "mesa", "final_return");
  REQUIRE(m != nullptr);
  CHECK(m->values == std::vector<double>{0.75, 1.0});
  CHECK(m->mean == doctest::Approx(0.875));
  CHECK(m->stddev == doctest::Approx(std::sqrt(0.03125)));
  const SummaryRow* v = find_summary(s, "vanilla", "final_return");
  REQUIRE(v != nullptr);
  CHECK(v->stddev == 0.0);
  CHECK(find_summary(s, "mesa", "greedy_return") == nullptr);
  CHECK(s.front().arm == "mesa");
}

TEST_CASE("curve bands use steps common to all seeds") {
  const std::vector<MetricsRow> rows{{"a/task0", 0, "meta-test", 0, "greedy_return", 0.0},
                                     {"a/task0", 0, "meta-test", 10, "greedy_return", 1.0},
                                     {"a/task0", 1, "meta-test", 0, "greedy_return", 0.5},
                                     {"a/task0", 1, "meta-test", 10, "greedy_return", 0.5},
                                     {"a/task0", 1, "meta-test", 20, "greedy_return", 0.5}};
  const auto b = curve_bands(rows);
  REQUIRE(b.size() == 1);
  CHECK(b[0].steps == std::vector<long long>{0, 10});
  CHECK(b[0].mean[1] == doctest::Approx(0.75));
}

TEST_CASE("artifacts need a non-empty metrics file and are byte-stable") {
  const auto dir = scratch("artifacts");
  fs::create_directories(dir);
  CHECK_THROWS_AS(emit_artifacts(dir.string()), Error);
  { std::ofstream(dir / "metrics.csv") << "run,seed,phase,step,metric,value\n"; }
  CHECK_THROWS_AS(emit_artifacts(dir.string()), Error);
  CHECK_FALSE(fs::exists(dir / "curves.svg"));

  std::vector<MetricsRow> rows;
  for (std::uint64_t seed : {0, 1, 2}) {
    for (long long step : {0, 50, 100}) {
      rows.push_back({"mesa/task0", seed, "meta-test", step, "greedy_return", 0.2 * seed + step / 200.0});
      rows.push_back({"vanilla/task0", seed, "meta-test", step, "greedy_return", 0.5});
    }
    rows.push_back({"mesa/task0", seed, "meta-test", 100, "final_return", 0.2 * seed + 0.5});
  }
  {
    std::ofstream out(dir / "metrics.csv");
    write_metrics_csv(out, rows);
  }
  const auto files = emit_artifacts(dir.string(), "climb");
  CHECK(files.size() == 3);
  const std::string svg = slurp(dir / "curves.svg");
  const std::string txt = slurp(dir / "summary.txt");
  emit_artifacts(dir.string(), "climb");
  CHECK(slurp(dir / "curves.svg") == svg);
  CHECK(slurp(dir / "summary.txt") == txt);

  std::size_t refs = 0;
  for (std::size_t pos = 0; (pos = svg.find("class=\"ref\"", pos)) != std::string::npos; ++pos) ++refs;
  CHECK(refs == 2);
  CHECK(svg.find("<polygon") != std::string::npos);
  CHECK(txt.find("final_return") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("theory tables agree with the threshold search and the oracle") {
  const auto dir = scratch("theory");
  RunConfig c = default_config(climb::Variant::kOneStep);
  c.out_dir = dir.string();
  c.theory.U = {3, 5};
  c.theory.delta = {1.0 / 6, 1.0 / 12};
  std::ostringstream log;
  run_experiment(c, Command::kTheory, log);

  const auto thr = csv(slurp(dir / "theory_thresholds.csv"));
  REQUIRE(thr.size() > 1);
  CHECK(thr[0][6] == "lambda_threshold");
  int uniform_rows = 0;
  for (std::size_t i = 1; i < thr.size(); ++i) {
    if (thr[i][0] != "uniform") continue;
    ++uniform_rows;
    const int U = std::stoi(thr[i][2]);
    const double delta = std::stod(thr[i][3]);
    const auto r = theory::min_exploration_steps(theory::Strategy::uniform(), U, delta, 1.0, 1.0);
    CHECK(std::stoll(thr[i][6]) == r.steps);
    CHECK(std::stoll(thr[i][4]) == r.steps);
  }
  CHECK(uniform_rows == 4);

  const auto phase = csv(slurp(dir / "theory_phase.csv"));
  CHECK(phase.size() == 1 + 2 * 2 * c.theory.lambda.size());
  for (std::size_t i = 1; i < phase.size(); ++i) CHECK(phase[i][3] == phase[i][4]);
  CHECK(slurp(dir / "config.conf") == to_doc(c).serialize());
  fs::remove_all(dir);
}

TEST_CASE("reproduce writes snapshot, manifests, metrics and a consistent summary") {
  const auto dir = scratch("reproduce");
  RunConfig c = tiny(dir);
  c.workers = 1;
  std::ostringstream log;
  const auto summary = run_experiment(c, Command::kReproduce, log);

  CHECK(slurp(dir / "config.conf") == to_doc(c).serialize());
  CHECK(fs::exists(dir / "seed_0" / "manifest" / "manifest.conf"));
  CHECK(fs::exists(dir / "seed_1" / "metrics.csv"));
  CHECK(fs::exists(dir / "curves.svg"));
  CHECK(fs::exists(dir / "summary.txt"));

  std::ifstream in(dir / "metrics.csv");
  const auto rows = read_metrics_csv(in);
  const auto again = summarize(rows);
  REQUIRE(again.size() == summary.size());
  for (std::size_t i = 0; i < summary.size(); ++i) {
    CHECK(again[i].arm == summary[i].arm);
    CHECK(std::abs(again[i].mean - summary[i].mean) < 1e-9);
    CHECK(std::abs(again[i].stddev - summary[i].stddev) < 1e-9);
  }
  const SummaryRow* mesa_final = find_summary(summary, "mesa", "final_return");
  REQUIRE(mesa_final != nullptr);
  CHECK(mesa_final->values.size() == 2);
  CHECK(find_summary(summary, "vanilla", "final_return") != nullptr);
  CHECK(find_summary(summary, "gated-explore", "gated_visit_rate") != nullptr);

  // steps never go backwards within (run, phase, seed)
  std::map<std::tuple<std::string, std::string, std::uint64_t>, long long> last;
  for (const auto& r : rows) {
    auto key = std::make_tuple(r.run, r.phase, r.seed);
    auto it = last.find(key);
    if (it != last.end()) CHECK(r.step >= it->second);
    last[key] = r.step;
  }

  // identical metrics with two workers
  const std::string first = slurp(dir / "metrics.csv");
  c.workers = 2;
  c.out_dir = scratch("reproduce2").string();
  run_experiment(c, Command::kReproduce, log);
  CHECK(slurp(fs::path(c.out_dir) / "metrics.csv") == first);
  fs::remove_all(dir);
  fs::remove_all(c.out_dir);
}

TEST_CASE("meta-test reuses a matching manifest") {
  const auto dir = scratch("metatest");
  RunConfig c = tiny(dir);
  c.seeds = {4};
  std::ostringstream log;
  run_experiment(c, Command::kMetaTrain, log);
  CHECK(fs::exists(dir / "seed_4" / "manifest" / "policy_0.ckpt"));
  std::ostringstream log2;
  const auto s = run_experiment(c, Command::kMetaTest, log2);
  CHECK(log2.str().find("reusing manifest") != std::string::npos);
  CHECK(find_summary(s, "mesa", "final_return") != nullptr);
  CHECK(find_summary(s, "vanilla", "final_return") == nullptr);

  c.meta.clusters = 3;  // different meta-training settings: retrain
  std::ostringstream log3;
  run_experiment(c, Command::kMetaTest, log3);
  CHECK(log3.str().find("reusing manifest") == std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("ablation runs the three arms in order") {
  const auto dir = scratch("ablate");
  RunConfig c = tiny(dir);
  c.seeds = {0};
  std::ostringstream log;
  const auto s = run_experiment(c, Command::kAblate, log);
  std::vector<std::string> arms;
  for (const auto& r : s) {
    if (r.metric == "final_return") arms.push_back(r.arm);
  }
  CHECK(arms == std::vector<std::string>{"vanilla", "buffer-init", "mesa"});
  fs::remove_all(dir);
}

TEST_CASE("pipeline failures carry seed and phase context") {
  const auto dir = scratch("failure");
  RunConfig c = tiny(dir);
  c.seeds = {2};
  c.meta.r_star = 2.0;
  std::ostringstream log;
  try {
    run_experiment(c, Command::kReproduce, log);
    FAIL("expected a harvest failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kHarvestFailure);
    CHECK(std::string(e.what()).find("seed 2, meta-train") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("commands parse from their CLI names") {
  for (auto c : {Command::kTheory, Command::kMetaTrain, Command::kMetaTest, Command::kReproduce, Command::kAblate}) {
    CHECK(command_from_string(to_string(c)) == c);
  }
  CHECK_THROWS_AS(command_from_string("train"), Error);
}
