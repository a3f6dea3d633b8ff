#pragma once

// Batch front-end: config parsing, subcommand dispatch, report emission.
// Exit codes: 0 success, 1 validation error, 2 numerical failure.

#include <map>
#include <string>
#include <vector>

#include "idlab/recon.hpp"

namespace idlab {

/// Flat key = value configuration file ('#' starts a comment).
std::map<std::string, std::string> parse_config_file(const std::string& path);

/// Fold parsed keys into an experiment configuration.
void apply_config(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv);

int run_cli(std::vector<std::string> args);

} // namespace idlab
