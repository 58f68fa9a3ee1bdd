#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "softdsgd/commands.hpp"
#include "softdsgd/error.hpp"

namespace cmd = softdsgd::commands;

int main(int argc, char** argv) {
  CLI::App app{"softdsgd: decentralized SGD over lossy links"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;

  struct Sub {
    const char* name;
    const char* help;
    cmd::CommandOutcome (*run)(const cmd::ExperimentConfig&);
  };
  const Sub subs[] = {
      {"generate", "Generate a device layout and link reliability matrix", cmd::cmd_generate},
      {"optimize-weights", "Optimize the mixing matrix for the reliability matrix", cmd::cmd_optimize_weights},
      {"run", "Train with soft-udp, tcp-baseline or consensus-only", cmd::cmd_run},
      {"verify", "Run the verification check suite", cmd::cmd_verify},
      {"bound", "Estimate problem constants and evaluate the convergence bound", cmd::cmd_bound},
  };
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("--config", config_path, "JSON config file");
    sc->add_option("--seed", seed, "Seed override for topology, training and verification");
    sc->add_option("--out", out_dir, "Output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cmd::kExitConfigError;
  }

  try {
    cmd::ExperimentConfig cfg;
    if (!config_path.empty()) {
      cfg = cmd::load_config(config_path);
    }
    if (seed) cmd::override_seed(cfg, *seed);
    if (out_dir) cfg.output.directory = *out_dir;

    for (const auto& s : subs) {
      if (!app.got_subcommand(s.name)) continue;
      const auto outcome = s.run(cfg);
      for (const auto& f : outcome.files) std::cout << f.string() << "\n";
      if (outcome.exit_code == cmd::kExitCheckFailure) std::cerr << "one or more asserted checks failed\n";
      return outcome.exit_code;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cmd::exit_code_for(e);
  }
  return cmd::kExitConfigError;
}
