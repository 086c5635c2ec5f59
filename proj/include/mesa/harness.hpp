#pragma once

// Experiment orchestration: run configuration, the theory / meta-train /
// meta-test / reproduce / ablate pipelines, the metrics CSV and the
// rendered summary and plots.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mesa/climb.hpp"
#include "mesa/kvconfig.hpp"
#include "mesa/meta.hpp"
#include "mesa/particle.hpp"

namespace mesa::harness {

enum class Command { kTheory, kMetaTrain, kMetaTest, kReproduce, kAblate };

const char* to_string(Command c);
Command command_from_string(std::string_view s);

struct TheoryGrid {
  std::vector<int> U{3, 4, 5, 6, 8};
  std::vector<double> delta{1.0 / 6, 1.0 / 12, 1.0 / 24, 1.0 / 48};
  std::vector<double> lambda{1, 3, 10, 30, 100, 300, 1000};
  std::vector<double> epsilon{0.5, 0.25, 0.125};
  double sigma_w = 1.0;
  double sigma_e = 1.0;
  long long max_steps = 1'000'000'000LL;
};

struct RunConfig {
  std::string experiment = "one-step";
  climb::TaskSpace space;
  int train_tasks = 10;
  int test_tasks = 3;
  std::uint64_t task_seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  meta::MetaTrainConfig meta;
  meta::MetaTestConfig test;
  particle::Physics physics;
  TheoryGrid theory;
  double hit_fraction = 0.1;  // tail of training used for the hit rate
  int gated_episodes = 200;
  int workers = 0;            // 0: hardware concurrency
  std::string out_dir = "runs";

  void validate() const;
};

// Defaults for a task family; the particle family gets the scaled-down budgets.
RunConfig default_config(climb::Variant variant);

KvDoc to_doc(const RunConfig& cfg);
// Keys not present in the default document are rejected by name.
RunConfig from_doc(const KvDoc& doc);
RunConfig parse_config_text(std::string_view text);
RunConfig parse_config(const std::string& path);

// MESA_WORKERS overrides the configured count; the result is at least 1.
int resolve_workers(int configured);

struct MetricsRow {
  std::string run;
  std::uint64_t seed = 0;
  std::string phase;
  long long step = 0;
  std::string metric;
  double value = 0.0;
};

// Header: run,seed,phase,step,metric,value.
void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

// Per (arm, metric): one value per seed (mean over that seed's test tasks),
// then mean and sample standard deviation across seeds. The arm is the run
// id up to the first '/'.
struct SummaryRow {
  std::string arm;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;
};

std::vector<SummaryRow> summarize(std::span<const MetricsRow> rows);
std::string format_summary(std::span<const SummaryRow> rows);
const SummaryRow* find_summary(std::span<const SummaryRow> rows, std::string_view arm, std::string_view metric);

struct CurveBand {
  std::string arm;
  std::vector<long long> steps;
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Greedy-return curves per arm: averaged over test tasks within a seed, then
// mean and standard deviation across seeds at the steps every seed reports.
std::vector<CurveBand> curve_bands(std::span<const MetricsRow> rows);
std::string render_svg(std::span<const CurveBand> bands, const std::string& title);

// Reads <dir>/metrics.csv, writes summary.txt and curves.svg (when the run
// has learning curves). Returns the files written.
std::vector<std::string> emit_artifacts(const std::string& run_dir, const std::string& title = "");

// Theory tables: (U, delta, lambda, criterion, oracle argmax) and minimum
// exploration steps per strategy.
void write_theory_phase_csv(std::ostream& out, const TheoryGrid& g);
void write_theory_threshold_csv(std::ostream& out, const TheoryGrid& g);

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

void apply_overrides(RunConfig& cfg, const RunOverrides& o);

// Runs the pipeline, writing config.conf, metrics.csv, summary.txt, plots and
// per-seed manifests below cfg.out_dir. Returns the summary rows.
std::vector<SummaryRow> run_experiment(const RunConfig& cfg, Command cmd, std::ostream& log);

}  // namespace mesa::harness
