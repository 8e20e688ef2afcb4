// rib: command-line front end.
//   rib gauss-solve|gmm-sweep|train|attack|report --config <path> --out <dir> --seed <u64>
// RIB_THREADS caps the worker count. Exit codes: 0 ok, 1 usage/config/io, 2 numeric failure.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rib/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"robust information bottleneck experiments"};
  app.require_subcommand(1, 1);
  std::string config, out;
  std::uint64_t seed = 0;
  for (const char* name : {"gauss-solve", "gmm-sweep", "train", "attack", "report"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "flat key = value config file")->required();
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--seed", seed, "run seed")->required();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return rib::cli::run(command, config, out, seed, std::cout, std::cerr);
}
