#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tbp/io/commands.hpp"
#include "tbp/io/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Telomere branching process toolkit"};
  std::string config_path, out = "out", command;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  app.add_option("command", command,
                 "simulate | estimate | aux-particle | cross-validate | bellman-harris | verify-assumptions | "
                 "estimate-profile (default: run.command)");
  app.add_option("--config", config_path, "INI configuration file")->required();
  app.add_option("--out", out, "output root directory");
  app.add_option("--seed", seed, "overrides run.seed");
  app.add_option("--threads", threads, "overrides run.threads (0 = all cores)");
  CLI11_PARSE(app, argc, argv);

  tbp::io::RunConfig cfg;
  try {
    cfg = tbp::io::parse_config(config_path);
  } catch (const tbp::io::SchemaError& e) {
    std::cerr << "config error:\n";
    for (const auto& v : e.violations) std::cerr << "  " << v << '\n';
    return tbp::io::kError;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return tbp::io::kError;
  }
  if (!command.empty()) cfg.run.command = command;
  if (seed) cfg.run.seed = *seed;
  if (threads) cfg.run.threads = *threads;
  return tbp::io::run_command(cfg, out, std::cerr);
}
