#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hmix/config.hpp"
#include "hmix/gating.hpp"
#include "hmix/hierarchy.hpp"
#include "hmix/quantile.hpp"

namespace hmix::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the process
/// exit code: 0 ok, 2 config error, 3 data or I/O error, 4 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Everything `train` writes into a checkpoint directory.
struct Checkpoint {
  RunConfig config;
  Hierarchy hierarchy;
  std::map<std::string, MixtureForecaster> forecasters;
  std::map<std::string, QuantileGenerator> quantiles;
  std::size_t first_target = 0;
  Split split;
  std::vector<std::vector<double>> fitted;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Long-format rows `id,step,value` keyed by id then step.
using LongTable = std::map<std::string, std::map<std::size_t, double>>;
LongTable read_long_csv(const std::filesystem::path& path);

}  // namespace hmix::cli
