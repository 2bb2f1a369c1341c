#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentdyn/episode.hpp"

namespace latentdyn {

// Spring-damper specimen: stiffness stands in for the material, the
// thickness scales the reference penetration depth.
struct SpecimenSpec {
  double kp = 0.0;         // N*m/rad
  double kd = 0.0;         // N*m*s/rad
  double thickness = 0.008;  // m
  std::string label_material = "synthetic-none";
  std::string label_thickness = "synthetic-std";
};

struct ReferenceParams {
  double surface_pos = 1.0;         // rad, contact-joint surface position
  double approach_speed = 0.25;     // rad/s
  double cut_advance_speed = 0.05;  // rad/s during the cut
  double retract_speed = 0.03;      // rad/s after the cut
  double idle_amplitude = 0.2;      // rad, non-contact joints
  double idle_freq_hz = 0.1;
};

// Decoupled double integrators with PD control; the contact joint sees a
// spring-damper torque during the cut window.
struct SimSpec {
  std::size_t n_joints = 6;
  Vec inertia;          // diagonal, constant; defaults to 1.0 per joint
  Vec viscous_damping;  // defaults to 0.5 per joint
  double kp_ctrl = 200.0;
  double kd_ctrl = 25.0;
  ReferenceParams ref;
  std::size_t contact_joint = 0;
  double noise_std = 0.01;  // N*m sensor noise on recorded torques
  double rate_hz = 10.0;
  double duration_s = 18.0;
  int substeps = 10;
  SpecimenSpec specimen;
  double t_on = 5.0;   // cut window, seconds; t_on == t_off disables contact
  double t_off = 12.0;
  Vec init_velocity;  // optional override, defaults to the reference velocity

  // Chip-release model: the penetration reference advances in discrete bites,
  // producing the torque chatter a saw cut shows.
  double chip_depth = 0.06;   // rad per released chip
  double chip_period = 0.23;  // s
  // Reference penetration ramps to gap_cap over thickness*gap_ramp_s_per_m
  // seconds: thicker stock takes longer to reach full bite.
  double gap_cap = 0.6;             // rad of sustained penetration
  double gap_ramp_s_per_m = 400.0;  // s of ramp per m of thickness
};

SimSpec default_sim_spec();

struct SimResult {
  Episode episode;
  EpisodeLabels truth;  // ground-truth cut interval in sample indices
  Vec contact_torque;   // per sample, contact joint, before sensor noise
};

// Pure function of (spec, seed): semi-implicit Euler at rate_hz with
// `substeps` internal steps per sample. Recorded tau = commanded PD torque +
// contact torque + Gaussian sensor noise. Throws on non-finite states.
SimResult simulate_episode(const SimSpec& spec, std::uint64_t seed);

// 3 stiffness materials x 2 thicknesses over the given base spec.
std::vector<SimSpec> catalog_from_base(const SimSpec& base);

// catalog_from_base over default_sim_spec().
std::vector<SimSpec> default_catalog();

struct ManifestEntry {
  std::string id;
  std::uint64_t seed = 0;
  std::string material;
  std::string thickness;
};

// Writes episodes_per_spec x |catalog| episodes in the canonical CSV/JSON
// schema with per-episode derived seeds; returns one entry per episode.
std::vector<ManifestEntry> make_dataset(const std::vector<SimSpec>& catalog,
                                        std::size_t episodes_per_spec,
                                        std::uint64_t seed,
                                        const std::filesystem::path& out_dir);

nlohmann::ordered_json sim_spec_to_json(const SimSpec& spec);
SimSpec sim_spec_from_json(const nlohmann::ordered_json& j);

}  // namespace latentdyn
