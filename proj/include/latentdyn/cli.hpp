#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latentdyn/dataset.hpp"
#include "latentdyn/nn.hpp"

namespace latentdyn {

// One JSON document covers every subcommand; missing keys take these values.
Json default_config();

// Recursive overwrite of `base` by `patch`: objects merge, everything else
// replaces.
void merge_config(Json& base, const Json& patch);

// `key` is a dotted path like "train.beta_kl"; `value` is parsed as JSON
// when possible, otherwise taken as a string.
void set_config_path(Json& cfg, const std::string& key,
                     const std::string& value);

// Prepared windows plus everything needed to reproduce them.
struct Bundle {
  std::size_t window = 0;
  std::size_t n_joints = 0;
  std::uint64_t seed = 0;
  Split split;
  NormStats norm;
  std::vector<WindowSample> train, val, test;
};

Bundle load_bundle(const std::filesystem::path& dir);

// Subcommand bodies. Each takes the fully merged effective config and
// returns a machine-readable summary of what it wrote.
Json cmd_synth(const Json& cfg, bool force);
Json cmd_prepare(const Json& cfg);
Json cmd_train(const Json& cfg);
Json cmd_eval(const Json& cfg);
Json cmd_sweep(const Json& cfg);
Json cmd_viz(const Json& cfg);

// argv-style entry point (without the program name). Config precedence:
// defaults < --config file < LATENTDYN_DATA < flags/--set.
int run_cli(const std::vector<std::string>& args);

}  // namespace latentdyn
