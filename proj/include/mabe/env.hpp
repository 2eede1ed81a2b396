#pragma once

// Deterministic toy continuous-control environments plus scripted
// controllers of graded quality. Two families:
//
//   point-mass: state (x, y, vx, vy), 2-d acceleration actions.
//     v' = (1-c) v + (a + slope) dt;  pos' = pos + v' dt
//     Optional locomotion hazards: a constant lateral slope acceleration
//     pulls the mass off a track of half-width `track_halfwidth`; once
//     |y| exceeds the track the mass is stuck (velocity zeroed, position
//     frozen) for the rest of the episode. Both default off.
//   pendulum: state (theta, theta_dot), 1-d torque actions, semi-implicit
//     Euler, theta = 0 hanging down (stable).
//
// Rewards:
//   directional: r = v' . d - 0.01 ||a||^2   (d a unit direction)
//   goal:        r = -|| state' - goal ||    (position for point-mass,
//                                             (wrapped angle, 0.1*vel) for
//                                             the pendulum)
//
// Dynamics are pure functions of (spec, state, action); noise enters only
// through the data-collection policies.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mabe/core.hpp"

namespace mabe {

enum class EnvKind { PointMass, Pendulum };
enum class RewardKind { Directional, Goal };
enum class ControllerKind { Expert, Medium, Random };

inline double wrap_angle(double a) {
  const double two_pi = 6.283185307179586476925286766559;
  a = std::fmod(a + 3.141592653589793238462643383279, two_pi);
  if (a < 0) a += two_pi;
  return a - 3.141592653589793238462643383279;
}

struct EnvSpec {
  EnvKind kind = EnvKind::PointMass;
  RewardKind reward = RewardKind::Directional;

  double dt = 0.05;
  double friction = 0.05;  // in [0,1): per-step velocity retention is (1-c)
  double mass = 1.0;
  double gravity = 9.81;          // pendulum only
  double slope_y = 0.0;           // point-mass: lateral acceleration (+y)
  double track_halfwidth = 1e18;  // point-mass: |y| beyond this freezes the mass

  double dir_x = 1.0, dir_y = 0.0;   // directional reward unit vector
  double goal_x = 0.0, goal_y = 0.0; // goal reward target (pendulum: angle, ang.vel)
  double action_cost = 0.01;

  double action_lo = -1.0, action_hi = 1.0;
  int horizon = 200;

  // initial-state distribution: uniform boxes centered on the rest state
  double init_pos_halfwidth = 0.2;  // point-mass x,y / pendulum angle
  double init_vel_halfwidth = 0.05;

  int action_dim() const { return kind == EnvKind::PointMass ? 2 : 1; }
  int state_dim() const { return kind == EnvKind::PointMass ? 4 : 2; }

  // Observations drop the unbounded forward coordinate on directional
  // point-mass tasks so inputs stay stationary across an episode.
  int obs_dim() const {
    if (kind == EnvKind::PointMass)
      return reward == RewardKind::Directional ? 3 : 4;
    return 2;
  }

  std::string kind_name() const { return kind == EnvKind::PointMass ? "point-mass" : "pendulum"; }

  void validate() const {
    if (dt <= 0) throw ConfigError("env dt must be positive");
    if (friction < 0 || friction >= 1) throw ConfigError("env friction must lie in [0,1)");
    if (horizon < 1) throw ConfigError("env horizon must be >= 1");
    if (action_hi <= action_lo) throw ConfigError("env action box is empty");
    if (reward == RewardKind::Directional) {
      const double n = std::sqrt(dir_x * dir_x + dir_y * dir_y);
      if (std::abs(n - 1.0) > 1e-9) throw ConfigError("direction vector must be unit norm");
    }
  }
};

struct EnvState {
  Vec s;  // point-mass: (x, y, vx, vy); pendulum: (theta, theta_dot)
  int step = 0;
};

inline Vec observe(const EnvSpec& spec, const EnvState& st) {
  if (spec.kind == EnvKind::PointMass) {
    if (spec.reward == RewardKind::Directional) return {st.s[1], st.s[2], st.s[3]};
    return st.s;
  }
  return {wrap_angle(st.s[0]), st.s[1]};
}

inline EnvState env_reset(const EnvSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  EnvState st;
  if (spec.kind == EnvKind::PointMass) {
    st.s = {rng.uniform(-spec.init_pos_halfwidth, spec.init_pos_halfwidth),
            rng.uniform(-spec.init_pos_halfwidth, spec.init_pos_halfwidth),
            rng.uniform(-spec.init_vel_halfwidth, spec.init_vel_halfwidth),
            rng.uniform(-spec.init_vel_halfwidth, spec.init_vel_halfwidth)};
  } else {
    st.s = {rng.uniform(-spec.init_pos_halfwidth, spec.init_pos_halfwidth),
            rng.uniform(-spec.init_vel_halfwidth, spec.init_vel_halfwidth)};
  }
  return st;
}

inline Vec clip_action(const EnvSpec& spec, Vec a) {
  for (double& v : a) v = clamp(v, spec.action_lo, spec.action_hi);
  return a;
}

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

inline StepResult env_step(const EnvSpec& spec, const EnvState& st, std::span<const double> action) {
  if (static_cast<int>(action.size()) != spec.action_dim())
    throw ConfigError("env_step action dimension mismatch");
  if (!all_finite(action)) throw NumericError("env_step received non-finite action");

  Vec a(action.begin(), action.end());
  for (double& v : a) v = clamp(v, spec.action_lo, spec.action_hi);
  const double cost = spec.action_cost * dot(a, a);

  StepResult out;
  out.state.step = st.step + 1;

  if (spec.kind == EnvKind::PointMass) {
    const bool stuck = std::abs(st.s[1]) > spec.track_halfwidth;
    double vx, vy, x, y;
    if (stuck) {
      vx = 0.0;
      vy = 0.0;
      x = st.s[0];
      y = st.s[1];
    } else {
      vx = (1.0 - spec.friction) * st.s[2] + a[0] * spec.dt;
      vy = (1.0 - spec.friction) * st.s[3] + (a[1] + spec.slope_y) * spec.dt;
      x = st.s[0] + vx * spec.dt;
      y = st.s[1] + vy * spec.dt;
    }
    out.state.s = {x, y, vx, vy};
    if (spec.reward == RewardKind::Directional) {
      out.reward = vx * spec.dir_x + vy * spec.dir_y - cost;
    } else {
      const double dx = x - spec.goal_x, dy = y - spec.goal_y;
      out.reward = -std::sqrt(dx * dx + dy * dy);
    }
  } else {
    const double inertia = spec.mass;  // m l^2 with l = 1
    const double acc = a[0] / inertia - spec.gravity * std::sin(st.s[0]);
    const double w = (1.0 - spec.friction) * st.s[1] + acc * spec.dt;
    const double th = st.s[0] + w * spec.dt;
    out.state.s = {th, w};
    if (spec.reward == RewardKind::Directional) {
      out.reward = w * spec.dir_x - cost;
    } else {
      const double da = wrap_angle(th - spec.goal_x);
      const double dv = 0.1 * (w - spec.goal_y);
      out.reward = -std::sqrt(da * da + dv * dv);
    }
  }

  out.done = out.state.step >= spec.horizon;
  return out;
}

// ---------------------------------------------------------------------------
// Scripted controllers. Expert: tuned gains, full drive; medium: halved
// gains and drive; random: uniform in the action box.

inline Vec scripted_action(ControllerKind kind, const EnvSpec& spec, const EnvState& st,
                           double noise_scale, Rng& rng) {
  const int ad = spec.action_dim();
  if (kind == ControllerKind::Random) {
    Vec a(ad);
    for (double& v : a) v = rng.uniform(spec.action_lo, spec.action_hi);
    return a;
  }
  const double quality = kind == ControllerKind::Expert ? 1.0 : 0.5;
  Vec a(ad, 0.0);
  if (spec.kind == EnvKind::PointMass) {
    if (spec.reward == RewardKind::Directional) {
      // drive along d; stabilize the perpendicular coordinate against the slope
      const double px = -spec.dir_y, py = spec.dir_x;
      const double y_perp = st.s[0] * px + st.s[1] * py;
      const double v_perp = st.s[2] * px + st.s[3] * py;
      const double slope_perp = spec.slope_y * py;
      const double kp = 2.0 * quality, kd = 2.0 * quality;
      const double comp = quality * (-slope_perp) - kp * y_perp - kd * v_perp;
      a[0] = quality * spec.dir_x + comp * px;
      a[1] = quality * spec.dir_y + comp * py;
    } else {
      const double kp = 1.2 * quality, kd = 1.8 * quality;
      a[0] = kp * (spec.goal_x - st.s[0]) - kd * st.s[2];
      a[1] = kp * (spec.goal_y - st.s[1]) - kd * st.s[3] - quality * spec.slope_y;
    }
  } else {
    const double kp = 6.0 * quality, kd = 1.5 * quality;
    a[0] = -kp * wrap_angle(st.s[0] - spec.goal_x) - kd * st.s[1];
  }
  if (noise_scale > 0.0)
    for (double& v : a) v += noise_scale * rng.normal();
  return clip_action(spec, std::move(a));
}

inline Vec scripted_policy(ControllerKind kind, const EnvSpec& spec, const EnvState& st,
                           double noise_scale, uint64_t seed) {
  Rng rng(seed);
  return scripted_action(kind, spec, st, noise_scale, rng);
}

// ---------------------------------------------------------------------------
// Episode rollouts.

struct TrajStep {
  Vec obs;
  Vec action;
  double reward = 0.0;
  Vec next_obs;
  bool done = false;
};

struct Trajectory {
  std::vector<TrajStep> steps;

  double undiscounted_return() const {
    double r = 0.0;
    for (const auto& s : steps) r += s.reward;
    return r;
  }

  double discounted_return(double gamma) const {
    double r = 0.0, g = 1.0;
    for (const auto& s : steps) {
      r += g * s.reward;
      g *= gamma;
    }
    return r;
  }
};

using StatePolicy = std::function<Vec(const EnvState&)>;

inline Trajectory rollout_episode(const EnvSpec& spec, const StatePolicy& policy,
                                  int horizon, uint64_t seed) {
  EnvState st = env_reset(spec, seed);
  Trajectory traj;
  const int h = std::min(horizon, spec.horizon);
  for (int t = 0; t < h; ++t) {
    Vec a = policy(st);
    StepResult r = env_step(spec, st, a);
    TrajStep step;
    step.obs = observe(spec, st);
    step.action = clip_action(spec, std::move(a));
    step.reward = r.reward;
    step.next_obs = observe(spec, r.state);
    step.done = r.done || t + 1 == h;
    traj.steps.push_back(std::move(step));
    st = r.state;
    if (r.done) break;
  }
  if (!traj.steps.empty()) traj.steps.back().done = true;
  return traj;
}

inline StatePolicy make_scripted(ControllerKind kind, const EnvSpec& spec, double noise_scale,
                                 uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [kind, spec, noise_scale, rng](const EnvState& st) {
    return scripted_action(kind, spec, st, noise_scale, *rng);
  };
}

// Recomputes the directional reward of a logged transition under a new
// direction; used when retargeting a dataset to a flipped task. Works off
// observations, which carry the post-step velocity.
inline double relabel_directional(const EnvSpec& spec, std::span<const double> action,
                                  std::span<const double> next_obs,
                                  double new_dir_x, double new_dir_y) {
  if (spec.kind != EnvKind::PointMass || spec.reward != RewardKind::Directional)
    throw ConfigError("relabel_directional requires a directional point-mass task");
  Vec a(action.begin(), action.end());
  for (double& v : a) v = clamp(v, spec.action_lo, spec.action_hi);
  // next_obs = (y, vx, vy)
  return next_obs[1] * new_dir_x + next_obs[2] * new_dir_y - spec.action_cost * dot(a, a);
}

}  // namespace mabe
