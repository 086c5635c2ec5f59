#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mesa/errors.hpp"
#include "mesa/harness.hpp"

using namespace mesa;

int main(int argc, char** argv) {
  CLI::App app{"Meta-exploration for cooperative multi-agent learning"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  for (const char* name : {"theory", "meta-train", "meta-test", "reproduce", "ablate"}) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " pipeline");
    sub->add_option("--config", config, "run configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "run a single seed instead of the configured list");
    sub->add_option("--out", out, "output directory (overrides out_dir)");
  }
  CLI11_PARSE(app, argc, argv);

  const std::string cmd_name = app.get_subcommands().front()->get_name();
  try {
    harness::RunConfig cfg = harness::parse_config(config);
    harness::apply_overrides(cfg, {seed, out});
    harness::run_experiment(cfg, harness::command_from_string(cmd_name), std::cout);
    std::cout << "artifacts in " << cfg.out_dir << '\n';
  } catch (const Error& e) {
    std::cerr << "mesa " << cmd_name << ": " << to_string(e.kind()) << ": " << e.what() << '\n';
    return e.kind() == ErrorKind::kInvalidConfig ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "mesa " << cmd_name << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
