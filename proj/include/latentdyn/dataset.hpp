#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentdyn/common.hpp"
#include "latentdyn/episode.hpp"

namespace latentdyn {

class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

// Canonical on-disk schema: per episode `<id>.csv` with header
// `t,q1..qN,dq1..dqN,tau1..tauN` plus `<id>.json` holding
// {material, thickness_in, rate_hz} (and optional gt_cut_start_s/gt_cut_end_s
// written by the simulator). Decimal doubles, UTF-8, LF.
std::vector<Episode> load_episodes(const std::filesystem::path& dir);

void write_episode(const std::filesystem::path& dir, const Episode& ep);

// Machine-readable load report: episode counts per (material, thickness)
// stratum, sample totals, rates.
nlohmann::ordered_json load_report(std::span<const Episode> episodes);

struct LabelerOptions {
  std::size_t win = 10;
  double k_on = 3.0;
  double k_off = 1.5;
  std::size_t min_len = 5;
};

// Torque-variance change detection: a cut opens where the trailing-window
// torque std (summed over joints) exceeds k_on x the episode median of that
// signal, closes below k_off x median; runs shorter than min_len dropped.
// A zero-variance episode labels as all-non-cutting with a warning on stderr.
EpisodeLabels label_cutting(const Episode& ep, const LabelerOptions& opt = {});

// Windowed torque std trace the labeler thresholds on (exposed for tests
// and diagnostics).
Vec torque_std_trace(const Episode& ep, std::size_t win);

// Statistics come from the training split only. Constant channels are
// clamped to a 1e-8 std floor with a warning.
NormStats fit_normalizer(std::span<const Episode> train_eps);

Episode apply_normalizer(const NormStats& stats, const Episode& ep);

// Exactly len-H samples; sample i covers [i, i+H) with the target at i+H and
// t_index = i+H-1. The cutting flag is taken at the target index. Episodes
// shorter than H+1 yield an empty list with a warning.
std::vector<WindowSample> make_windows(const Episode& normalized_ep,
                                       const EpisodeLabels& labels,
                                       std::size_t h);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct Split {
  std::vector<std::string> train_ids, val_ids, test_ids;
};

// Episode-level partition, stratified by (material, thickness) where group
// sizes permit, deterministic in the seed. Falls back to an unstratified
// shuffle (with a warning) when strata degenerate to singletons.
Split split_episodes(std::span<const Episode> episodes, const SplitRatios& r,
                     std::uint64_t seed);

std::vector<Episode> select_episodes(std::span<const Episode> episodes,
                                     std::span<const std::string> ids);

}  // namespace latentdyn
