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

#include "planarpush/obsmodel.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace planarpush {

EpisodeNoise init_episode_noise(Rng& rng, const NoiseParams& params) {
  EpisodeNoise n;
  n.obj_pos = {rng.gaussian(0.0, params.pos_sigma), rng.gaussian(0.0, params.pos_sigma)};
  n.obj_rot = rng.gaussian(0.0, params.rot_sigma);
  n.pusher_pos = {rng.gaussian(0.0, params.pos_sigma), rng.gaussian(0.0, params.pos_sigma)};
  n.force = {rng.gaussian(0.0, params.force_sigma), rng.gaussian(0.0, params.force_sigma)};
  return n;
}

double sample_occlusion_duration_seconds(Rng& rng, const NoiseParams& params) {
  return rng.gaussian(params.occl_duration_mean, params.occl_duration_sigma);
}

namespace {

long duration_steps(Rng& rng, const NoiseParams& params, double dt,
                    const OcclusionScenario& scenario) {
  using Kind = OcclusionScenario::Kind;
  double seconds = 0.0;
  switch (scenario.kind) {
    case Kind::kStandard:
      seconds = sample_occlusion_duration_seconds(rng, params);
      break;
    case Kind::kFixedDuration:
      seconds = scenario.fixed_duration_s;
      break;
    case Kind::kFull:
      return std::numeric_limits<long>::max() / 2;
    case Kind::kNone:
      return 0;
  }
  return std::max(1L, std::lround(seconds / dt));
}

}  // namespace

std::pair<Observation, OcclusionState> observe(const WorldState& s, const EpisodeNoise& ep,
                                               const OcclusionState& occl_in, Rng& rng,
                                               const NoiseParams& params, double dt,
                                               const OcclusionScenario& scenario) {
  using Kind = OcclusionScenario::Kind;
  OcclusionState occl = occl_in;
  Observation o;

  // proprioceptive channels: correlated + fresh uncorrelated noise, never occluded
  o.pusher_pos_obs = s.pusher_pos + ep.pusher_pos +
                     Vec2{rng.gaussian(0.0, params.pos_sigma), rng.gaussian(0.0, params.pos_sigma)};
  o.force_obs = s.contact.force + ep.force +
                Vec2{rng.gaussian(0.0, params.force_sigma), rng.gaussian(0.0, params.force_sigma)};

  // noisy object pose; only emitted when not occluded
  Pose2D noisy;
  noisy.x = s.object_pose.x + ep.obj_pos.x + rng.gaussian(0.0, params.pos_sigma);
  noisy.y = s.object_pose.y + ep.obj_pos.y + rng.gaussian(0.0, params.pos_sigma);
  noisy.theta =
      wrap_angle(s.object_pose.theta + ep.obj_rot + rng.gaussian(0.0, params.rot_sigma));

  // occlusion start events; never while one is active
  if (!occl.active) {
    const bool forced = scenario.kind == Kind::kFull && occl.step == 0;
    const bool start = forced || (scenario.kind != Kind::kNone &&
                                  scenario.kind != Kind::kFull &&
                                  rng.bernoulli(params.occl_start_prob));
    if (start) {
      const long steps = duration_steps(rng, params, dt, scenario);
      if (steps > 0) {
        occl.active = true;
        occl.remaining_steps = steps;
        // last available pose prior to the start; at step 0 the current
        // measurement is the only pose ever seen
        occl.frozen_pose = occl.have_last ? occl.last_obs_pose : noisy;
      }
    }
  }

  if (occl.active) {
    o.obj_pose_obs = occl.frozen_pose;
    o.xi = 1;
    occl.remaining_steps -= 1;
    if (occl.remaining_steps <= 0) occl.active = false;
  } else {
    o.obj_pose_obs = noisy;
    o.xi = 0;
  }

  occl.last_obs_pose = o.obj_pose_obs;
  occl.have_last = true;
  occl.step += 1;
  return {o, occl};
}

std::array<double, 4> scale_pose(const Pose2D& pose, const GeometrySpec& geom) {
  return {pose.x / geom.workspace_half_extents.x, pose.y / geom.workspace_half_extents.y,
          std::sin(pose.theta), std::cos(pose.theta)};
}

ScaledObservation scale_observation(const Observation& o, const GeometrySpec& geom) {
  // noisy positions can stray past the workspace edge; keep every component
  // inside [-1, 1]
  ScaledObservation v;
  const std::array<double, 4> obj = scale_pose(o.obj_pose_obs, geom);
  v[kObsObjX] = std::clamp(obj[0], -1.0, 1.0);
  v[kObsObjY] = std::clamp(obj[1], -1.0, 1.0);
  v[kObsObjSin] = obj[2];
  v[kObsObjCos] = obj[3];
  v[kObsPusherX] = std::clamp(o.pusher_pos_obs.x / geom.workspace_half_extents.x, -1.0, 1.0);
  v[kObsPusherY] = std::clamp(o.pusher_pos_obs.y / geom.workspace_half_extents.y, -1.0, 1.0);
  v[kObsForceX] = std::clamp(o.force_obs.x, -10.0, 10.0) / 10.0;
  v[kObsForceY] = std::clamp(o.force_obs.y, -10.0, 10.0) / 10.0;
  v[kObsXi] = static_cast<double>(o.xi);
  return v;
}

Vec2 unscale_position(double sx, double sy, const GeometrySpec& geom) {
  return {sx * geom.workspace_half_extents.x, sy * geom.workspace_half_extents.y};
}

}  // namespace planarpush
