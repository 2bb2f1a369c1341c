#include "latentdyn/synth.hpp"

#include <cmath>
#include <cstdio>

#include "latentdyn/common.hpp"
#include "latentdyn/dataset.hpp"
#include "latentdyn/rng.hpp"

namespace latentdyn {

namespace {

struct Reference {
  double q = 0.0;
  double dq = 0.0;
};

// Width of the cosine velocity blend at the approach->cut and cut->retract
// switches. Without it the PD command takes a kd_ctrl-sized step at t_on
// even for a null specimen, which would hand the labeler a free signature.
constexpr double kBlendS = 1.2;

// Width of the chip-release taper at the end of the cut: the reference
// penetration closes smoothly so the contact force decays to zero before the
// gate shuts instead of stepping off.
constexpr double kReleaseS = 1.0;

// Cosine velocity ramp from v0 to v1 over [0, b]; returns velocity and the
// distance covered since the ramp started.
struct Ramp {
  double dq = 0.0;
  double dist = 0.0;
};

Ramp blend(double v0, double v1, double u, double b) {
  Ramp r;
  r.dq = v0 + (v1 - v0) * 0.5 * (1.0 - std::cos(M_PI * u));
  r.dist = b * (v0 * u + (v1 - v0) * 0.5 * (u - std::sin(M_PI * u) / M_PI));
  return r;
}

// Contact-joint reference: approach at constant speed, advance through the
// cut window, retract afterwards. C1 in q: the speed switches are blended so
// the commanded torque stays smooth when no specimen is present.
Reference contact_reference(const SimSpec& s, double t) {
  const double surface = s.ref.surface_pos;
  const double a = s.ref.approach_speed;
  const double c = s.ref.cut_advance_speed;
  const double v_out = s.ref.retract_speed;
  const double b = kBlendS;
  // Position gained across a full blend; anchors q(t_on) at the surface.
  const double on_gap = b * 0.5 * (a + c);
  const double q_end = surface + c * (s.t_off - s.t_on);

  Reference r;
  if (t <= s.t_on - b) {
    r.q = surface - on_gap - a * (s.t_on - b - t);
    r.dq = a;
  } else if (t <= s.t_on) {
    const Ramp ramp = blend(a, c, (t - (s.t_on - b)) / b, b);
    r.q = surface - on_gap + ramp.dist;
    r.dq = ramp.dq;
  } else if (t < s.t_off) {
    r.q = surface + c * (t - s.t_on);
    r.dq = c;
  } else if (t < s.t_off + b) {
    const Ramp ramp = blend(c, -v_out, (t - s.t_off) / b, b);
    r.q = q_end + ramp.dist;
    r.dq = ramp.dq;
  } else {
    r.q = q_end + b * 0.5 * (c - v_out) - v_out * (t - s.t_off - b);
    r.dq = -v_out;
    const double floor = surface - on_gap - a * (s.t_on - b);
    if (r.q < floor) {
      r.q = floor;
      r.dq = 0.0;
    }
  }
  return r;
}

Reference idle_reference(const SimSpec& s, double t, double phase) {
  const double w = 2.0 * M_PI * s.ref.idle_freq_hz;
  Reference r;
  r.q = s.ref.idle_amplitude * std::sin(w * t + phase);
  r.dq = s.ref.idle_amplitude * w * std::cos(w * t + phase);
  return r;
}

// Penetration reference x_r and its rate during the cut. The gap between the
// blade path and x_r ramps to a thickness-dependent cap and carries a
// chip-release sawtooth on top.
struct ContactRef {
  double x_r = 0.0;
  double dx_r = 0.0;
};

ContactRef contact_surface_reference(const SimSpec& s, double t) {
  const double dt_cut = t - s.t_on;
  const double nominal = s.ref.surface_pos + s.ref.cut_advance_speed * dt_cut;
  // Penetration ramps linearly to its cap; thicker stock ramps longer, so
  // thickness shows up as the rise time of the sustained contact force.
  const double ramp_s = s.specimen.thickness * s.gap_ramp_s_per_m;
  double gap = s.gap_cap;
  double dgap = 0.0;
  if (ramp_s > 0.0 && dt_cut < ramp_s) {
    gap = s.gap_cap * dt_cut / ramp_s;
    dgap = s.gap_cap / ramp_s;
  }
  const double phase = dt_cut / s.chip_period;
  const double saw = s.chip_depth * (phase - std::floor(phase));
  const double dsaw = s.chip_depth / s.chip_period;
  // Chip thins out at the end of the cut: the penetration reference closes a
  // cosine taper so the force releases smoothly before the gate shuts.
  const double release = std::min(kReleaseS, 0.5 * (s.t_off - s.t_on));
  double w = 1.0;
  double dw = 0.0;
  const double lead = s.t_off - t;
  if (release > 0.0 && lead < release) {
    const double u = lead / release;  // 1 at taper start, 0 at t_off
    w = 0.5 * (1.0 - std::cos(M_PI * u));
    dw = -0.5 * M_PI / release * std::sin(M_PI * u);
  }
  ContactRef c;
  c.x_r = nominal - (gap + saw) * w;
  c.dx_r = s.ref.cut_advance_speed - (dgap + dsaw) * w - (gap + saw) * dw;
  return c;
}

double contact_torque_at(const SimSpec& s, double t, double x, double dx) {
  if (!(t >= s.t_on && t < s.t_off)) return 0.0;
  const ContactRef c = contact_surface_reference(s, t);
  const double f = s.specimen.kp * (x - c.x_r) + s.specimen.kd * (dx - c.dx_r);
  return -f;  // opposes the blade
}

void validate(const SimSpec& s) {
  require(s.n_joints >= 1, "simulate_episode: need at least one joint");
  require(s.contact_joint < s.n_joints, "simulate_episode: bad contact joint");
  require(s.rate_hz > 0 && s.duration_s > 0 && s.substeps >= 1,
          "simulate_episode: bad timing spec");
  require(0.0 <= s.t_on && s.t_on <= s.t_off && s.t_off <= s.duration_s,
          "simulate_episode: cut window outside episode");
  require(s.specimen.kp >= 0 && s.specimen.kd >= 0 &&
              s.specimen.thickness > 0,
          "simulate_episode: bad specimen");
}

}  // namespace

SimSpec default_sim_spec() {
  SimSpec s;
  s.inertia = Vec(s.n_joints, 1.0);
  s.viscous_damping = Vec(s.n_joints, 0.5);
  return s;
}

SimResult simulate_episode(const SimSpec& spec_in, std::uint64_t seed) {
  SimSpec s = spec_in;
  if (s.inertia.empty()) s.inertia = Vec(s.n_joints, 1.0);
  if (s.viscous_damping.empty()) s.viscous_damping = Vec(s.n_joints, 0.5);
  require(s.inertia.size() == s.n_joints &&
              s.viscous_damping.size() == s.n_joints,
          "simulate_episode: inertia/damping length mismatch");
  for (double m : s.inertia) require(m > 0, "simulate_episode: inertia <= 0");
  validate(s);

  Rng rng(seed);
  const std::size_t n = s.n_joints;

  // Draw seed-dependent quantities in a fixed order so paired runs with a
  // shared seed consume identical streams: idle phase first, then per-sample
  // noise. One shared idle phase per episode with fixed per-joint offsets:
  // the arm repeats the same coordinated motion at a random point in its
  // cycle, so the windows stay on a low-dimensional manifold a small latent
  // can cover.
  const double idle_phase = rng.uniform() * 2.0 * M_PI;
  Vec phases(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    phases[j] = idle_phase +
                static_cast<double>(j) * 2.0 * M_PI / static_cast<double>(n);
  }

  auto reference = [&](std::size_t j, double t) -> Reference {
    if (j == s.contact_joint) return contact_reference(s, t);
    return idle_reference(s, t, phases[j]);
  };

  const std::size_t steps =
      static_cast<std::size_t>(std::llround(s.duration_s * s.rate_hz));
  require(steps >= 2, "simulate_episode: episode too short");
  const double dt = 1.0 / (s.rate_hz * static_cast<double>(s.substeps));

  Vec q(n), dq(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Reference r = reference(j, 0.0);
    q[j] = r.q;
    dq[j] = s.init_velocity.empty() ? r.dq : s.init_velocity[j];
  }

  Episode ep;
  ep.rate_hz = s.rate_hz;
  ep.n_joints = n;
  ep.material = s.specimen.label_material;
  ep.thickness = s.specimen.label_thickness;
  if (s.t_off > s.t_on) ep.gt_cut_window_s = {s.t_on, s.t_off};

  SimResult result;
  result.contact_torque.resize(steps, 0.0);

  auto torques = [&](double t, Vec& cmd, double& contact) {
    for (std::size_t j = 0; j < n; ++j) {
      const Reference r = reference(j, t);
      cmd[j] = s.kp_ctrl * (r.q - q[j]) + s.kd_ctrl * (r.dq - dq[j]);
    }
    contact = contact_torque_at(s, t, q[s.contact_joint], dq[s.contact_joint]);
  };

  Vec cmd(n);
  double contact = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t_k = static_cast<double>(k) / s.rate_hz;
    torques(t_k, cmd, contact);

    JointState rec;
    rec.q = q;
    rec.dq = dq;
    rec.tau.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double c = j == s.contact_joint ? contact : 0.0;
      rec.tau[j] = cmd[j] + c + s.noise_std * rng.gaussian();
    }
    ep.t.push_back(t_k);
    ep.series.push_back(std::move(rec));
    result.contact_torque[k] = contact;

    for (int sub = 0; sub < s.substeps; ++sub) {
      const double t = t_k + static_cast<double>(sub) * dt;
      torques(t, cmd, contact);
      for (std::size_t j = 0; j < n; ++j) {
        const double c = j == s.contact_joint ? contact : 0.0;
        const double acc =
            (cmd[j] + c - s.viscous_damping[j] * dq[j]) / s.inertia[j];
        dq[j] += dt * acc;  // semi-implicit: velocity first
        q[j] += dt * dq[j];
        if (!std::isfinite(q[j]) || !std::isfinite(dq[j])) {
          fail("simulate_episode: non-finite state at sample " +
               std::to_string(k) + " substep " + std::to_string(sub) +
               " joint " + std::to_string(j));
        }
      }
    }
  }

  if (s.t_off > s.t_on) {
    const auto start = static_cast<std::size_t>(
        std::ceil(s.t_on * s.rate_hz - 1e-9));
    auto end =
        static_cast<std::size_t>(std::ceil(s.t_off * s.rate_hz - 1e-9));
    if (end > steps) end = steps;
    if (end > start) result.truth.cut_intervals.push_back({start, end});
  }
  result.episode = std::move(ep);
  return result;
}

std::vector<SimSpec> catalog_from_base(const SimSpec& base) {
  struct Mat {
    const char* name;
    double kp;
  };
  struct Thick {
    const char* name;
    double m;
  };
  const Mat mats[] = {{"synthetic-soft", 40.0},
                      {"synthetic-medium", 80.0},
                      {"synthetic-hard", 160.0}};
  const Thick thicks[] = {{"synthetic-thin", 0.005},
                          {"synthetic-thick", 0.010}};
  std::vector<SimSpec> catalog;
  for (const Mat& m : mats) {
    for (const Thick& th : thicks) {
      SimSpec s = base;
      s.specimen.kp = m.kp;
      s.specimen.kd = m.kp / 20.0;
      s.specimen.thickness = th.m;
      s.specimen.label_material = m.name;
      s.specimen.label_thickness = th.name;
      catalog.push_back(std::move(s));
    }
  }
  return catalog;
}

std::vector<SimSpec> default_catalog() { return catalog_from_base(default_sim_spec()); }

std::vector<ManifestEntry> make_dataset(const std::vector<SimSpec>& catalog,
                                        std::size_t episodes_per_spec,
                                        std::uint64_t seed,
                                        const std::filesystem::path& out_dir) {
  require(!catalog.empty(), "make_dataset: empty catalog");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, "make_dataset: cannot create " + out_dir.string());

  std::vector<ManifestEntry> manifest;
  std::size_t index = 0;
  for (std::size_t si = 0; si < catalog.size(); ++si) {
    for (std::size_t e = 0; e < episodes_per_spec; ++e, ++index) {
      const std::uint64_t ep_seed = derive_seed(seed, index);
      SimResult sim = simulate_episode(catalog[si], ep_seed);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "s%02zu_e%03zu", si, e);
      sim.episode.id = buf;
      write_episode(out_dir, sim.episode);
      manifest.push_back({sim.episode.id, ep_seed, sim.episode.material,
                          sim.episode.thickness});
    }
  }
  return manifest;
}

nlohmann::ordered_json sim_spec_to_json(const SimSpec& s) {
  nlohmann::ordered_json j;
  j["n_joints"] = s.n_joints;
  j["inertia"] = s.inertia;
  j["viscous_damping"] = s.viscous_damping;
  j["kp_ctrl"] = s.kp_ctrl;
  j["kd_ctrl"] = s.kd_ctrl;
  j["ref"] = {{"surface_pos", s.ref.surface_pos},
              {"approach_speed", s.ref.approach_speed},
              {"cut_advance_speed", s.ref.cut_advance_speed},
              {"retract_speed", s.ref.retract_speed},
              {"idle_amplitude", s.ref.idle_amplitude},
              {"idle_freq_hz", s.ref.idle_freq_hz}};
  j["contact_joint"] = s.contact_joint;
  j["noise_std"] = s.noise_std;
  j["rate_hz"] = s.rate_hz;
  j["duration_s"] = s.duration_s;
  j["substeps"] = s.substeps;
  j["specimen"] = {{"kp", s.specimen.kp},
                   {"kd", s.specimen.kd},
                   {"thickness", s.specimen.thickness},
                   {"label_material", s.specimen.label_material},
                   {"label_thickness", s.specimen.label_thickness}};
  j["t_on"] = s.t_on;
  j["t_off"] = s.t_off;
  j["chip_depth"] = s.chip_depth;
  j["chip_period"] = s.chip_period;
  j["gap_cap"] = s.gap_cap;
  j["gap_ramp_s_per_m"] = s.gap_ramp_s_per_m;
  return j;
}

SimSpec sim_spec_from_json(const nlohmann::ordered_json& j) {
  SimSpec s = default_sim_spec();
  if (j.contains("n_joints")) s.n_joints = j["n_joints"].get<std::size_t>();
  s.inertia = j.contains("inertia") ? j["inertia"].get<Vec>()
                                    : Vec(s.n_joints, 1.0);
  s.viscous_damping = j.contains("viscous_damping")
                          ? j["viscous_damping"].get<Vec>()
                          : Vec(s.n_joints, 0.5);
  if (j.contains("kp_ctrl")) s.kp_ctrl = j["kp_ctrl"].get<double>();
  if (j.contains("kd_ctrl")) s.kd_ctrl = j["kd_ctrl"].get<double>();
  if (j.contains("ref")) {
    const auto& r = j["ref"];
    if (r.contains("surface_pos"))
      s.ref.surface_pos = r["surface_pos"].get<double>();
    if (r.contains("approach_speed"))
      s.ref.approach_speed = r["approach_speed"].get<double>();
    if (r.contains("cut_advance_speed"))
      s.ref.cut_advance_speed = r["cut_advance_speed"].get<double>();
    if (r.contains("retract_speed"))
      s.ref.retract_speed = r["retract_speed"].get<double>();
    if (r.contains("idle_amplitude"))
      s.ref.idle_amplitude = r["idle_amplitude"].get<double>();
    if (r.contains("idle_freq_hz"))
      s.ref.idle_freq_hz = r["idle_freq_hz"].get<double>();
  }
  if (j.contains("contact_joint"))
    s.contact_joint = j["contact_joint"].get<std::size_t>();
  if (j.contains("noise_std")) s.noise_std = j["noise_std"].get<double>();
  if (j.contains("rate_hz")) s.rate_hz = j["rate_hz"].get<double>();
  if (j.contains("duration_s")) s.duration_s = j["duration_s"].get<double>();
  if (j.contains("substeps")) s.substeps = j["substeps"].get<int>();
  if (j.contains("specimen")) {
    const auto& sp = j["specimen"];
    if (sp.contains("kp")) s.specimen.kp = sp["kp"].get<double>();
    if (sp.contains("kd")) s.specimen.kd = sp["kd"].get<double>();
    if (sp.contains("thickness"))
      s.specimen.thickness = sp["thickness"].get<double>();
    if (sp.contains("label_material"))
      s.specimen.label_material = sp["label_material"].get<std::string>();
    if (sp.contains("label_thickness"))
      s.specimen.label_thickness = sp["label_thickness"].get<std::string>();
  }
  if (j.contains("t_on")) s.t_on = j["t_on"].get<double>();
  if (j.contains("t_off")) s.t_off = j["t_off"].get<double>();
  if (j.contains("chip_depth")) s.chip_depth = j["chip_depth"].get<double>();
  if (j.contains("chip_period"))
    s.chip_period = j["chip_period"].get<double>();
  if (j.contains("gap_cap")) s.gap_cap = j["gap_cap"].get<double>();
  if (j.contains("gap_ramp_s_per_m"))
    s.gap_ramp_s_per_m = j["gap_ramp_s_per_m"].get<double>();
  return s;
}

}  // namespace latentdyn
