// Copyright 2026 The planarpush Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "planarpush/env.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace planarpush {

namespace {

bool inside_workspace(Vec2 p, const GeometrySpec& geom) {
  return std::abs(p.x) <= geom.workspace_half_extents.x &&
         std::abs(p.y) <= geom.workspace_half_extents.y;
}

Pose2D sample_pose(Rng& rng, const GeometrySpec& geom) {
  return {rng.uniform(-geom.workspace_half_extents.x, geom.workspace_half_extents.x),
          rng.uniform(-geom.workspace_half_extents.y, geom.workspace_half_extents.y),
          rng.uniform(-kPi, kPi)};
}

}  // namespace

EnvState reset(Rng& rng, const EpisodeConfig& config, const GeometrySpec& geom) {
  (void)config;
  EnvState s;
  s.params = sample_dynamics(rng);
  s.world.object_pose = sample_pose(rng, geom);
  s.target = sample_pose(rng, geom);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Vec2 pusher{
        rng.uniform(-geom.workspace_half_extents.x, geom.workspace_half_extents.x),
        rng.uniform(-geom.workspace_half_extents.y, geom.workspace_half_extents.y)};
    const ContactInfo q = contact_query(s.world.object_pose, pusher, geom);
    if (q.gap > 0.0) {
      s.world.pusher_pos = pusher;
      s.world.contact = q;
      s.step_count = 0;
      return s;
    }
  }
  throw std::runtime_error("reset: failed to sample a non-overlapping pusher in 1000 draws");
}

Vec2 decode_action(ActionIndex a, const EpisodeConfig& config) {
  const int n = config.bins_per_axis;
  if (a.ix < 0 || a.ix >= n || a.iy < 0 || a.iy >= n)
    throw std::out_of_range("decode_action: index outside [0, bins)");
  const double half = (n - 1) / 2.0;
  return {config.max_speed * ((a.ix - half) / half), config.max_speed * ((a.iy - half) / half)};
}

Outcome classify(const EnvState& state, const EpisodeConfig& config, const GeometrySpec& geom) {
  const double d_trans = (Vec2{state.world.object_pose.x, state.world.object_pose.y} -
                          Vec2{state.target.x, state.target.y})
                             .norm();
  const double d_rot = std::abs(wrap_angle(state.world.object_pose.theta - state.target.theta));
  if (d_trans <= config.success_trans_tol && d_rot <= config.success_rot_tol)
    return Outcome::kSuccess;
  if (!inside_workspace({state.world.object_pose.x, state.world.object_pose.y}, geom) ||
      !inside_workspace(state.world.pusher_pos, geom))
    return Outcome::kBoundaryViolation;
  if (state.step_count >= config.horizon) return Outcome::kTimeout;
  return Outcome::kRunning;
}

double reward(const EnvState& prev, ActionIndex a, const EnvState& next,
              const EpisodeConfig& config, const GeometrySpec& geom) {
  (void)prev;
  const Outcome outcome = classify(next, config, geom);
  double r_term = 0.0;
  if (outcome == Outcome::kSuccess) r_term = config.r_success;
  if (outcome == Outcome::kBoundaryViolation) r_term = config.r_violation;

  const double d_trans = (Vec2{next.world.object_pose.x, next.world.object_pose.y} -
                          Vec2{next.target.x, next.target.y})
                             .norm() /
                         geom.workspace_diagonal();
  const double d_rot =
      std::abs(wrap_angle(next.world.object_pose.theta - next.target.theta)) / kPi;
  const Vec2 v = decode_action(a, config);
  const double v_p = std::min(v.norm() / config.max_speed, 1.0);
  return r_term + config.k1 * (1.0 - d_trans) + config.k2 * (1.0 - d_rot) +
         config.k3 * (1.0 - v_p);
}

StepResult step_env(const EnvState& state, ActionIndex a, const EpisodeConfig& config,
                    const GeometrySpec& geom) {
  if (state.step_count >= config.horizon)
    throw std::logic_error("step_env: episode already past its horizon");
  const Vec2 v = decode_action(a, config);

  StepResult r;
  r.state = state;
  const PhysicsStepResult phys =
      step_physics(state.world, v, state.params, geom, config.dt, config.physics_substeps);
  r.state.world = phys.state;
  r.solver_fallback = phys.solver_fallback;
  r.state.step_count = state.step_count + 1;

  r.outcome = classify(r.state, config, geom);
  r.done = r.outcome != Outcome::kRunning;
  r.reward = reward(state, a, r.state, config, geom);
  return r;
}

ScaledObservation scaled_true_state(const EnvState& state, const GeometrySpec& geom) {
  Observation o;
  o.obj_pose_obs = state.world.object_pose;
  o.pusher_pos_obs = state.world.pusher_pos;
  o.force_obs = state.world.contact.force;
  o.xi = 0;
  return scale_observation(o, geom);
}

std::array<double, kPolicyInputDim> policy_input(const ScaledObservation& obs,
                                                 const Pose2D& target,
                                                 const GeometrySpec& geom) {
  std::array<double, kPolicyInputDim> v{};
  std::copy(obs.begin(), obs.end(), v.begin());
  const std::array<double, 4> t = scale_pose(target, geom);
  std::copy(t.begin(), t.end(), v.begin() + kObsDim);
  return v;
}

}  // namespace planarpush
