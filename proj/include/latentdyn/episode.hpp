#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "latentdyn/linalg.hpp"

namespace latentdyn {

// One timestep of an N-joint arm.
struct JointState {
  Vec q;    // rad
  Vec dq;   // rad/s
  Vec tau;  // N*m
};

// A recorded (or simulated) run against one specimen.
struct Episode {
  std::string id;
  double rate_hz = 10.0;
  std::size_t n_joints = 6;
  Vec t;  // strictly increasing timestamps, seconds
  std::vector<JointState> series;
  std::string material;   // catalog value or synthetic-*
  std::string thickness;  // catalog value ("3/16" etc.) or synthetic-*
  // Present when the episode came from the simulator: true cut window in
  // seconds, carried through the on-disk metadata.
  std::optional<std::pair<double, double>> gt_cut_window_s;

  std::size_t length() const { return series.size(); }
};

// Half-open [start, end) sample-index intervals.
struct EpisodeLabels {
  std::vector<std::pair<std::size_t, std::size_t>> cut_intervals;

  bool is_cutting(std::size_t index) const {
    for (const auto& [s, e] : cut_intervals) {
      if (index >= s && index < e) return true;
    }
    return false;
  }
};

// Per-channel affine normalization; channel layout is [q(1..N), dq(1..N),
// tau(1..N)], 3N entries.
struct NormStats {
  Vec mean;
  Vec std;
};

// Flattened H-step history with the next-step target. x layout is
// channel-major: positions block, velocities block, torques block, each
// time-major ([t0 joints..., t1 joints..., ...]). y_next is next-step q then
// dq, normalized with the same channel statistics as x.
struct WindowSample {
  Vec x;       // 3*H*N
  Vec y_next;  // 2*N
  bool cutting = false;
  std::string material;
  std::string thickness;
  std::string episode_id;
  std::size_t t_index = 0;  // last index inside the window
};

}  // namespace latentdyn
