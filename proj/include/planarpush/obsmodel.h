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

// Synthetic observation model: correlated (per-episode) plus uncorrelated
// (per-step) Gaussian noise on pose and force channels, and an occlusion
// process that freezes the observed object pose while raising an indicator
// flag. Pusher pose and force are proprioceptive and never occluded.

#ifndef PLANARPUSH_OBSMODEL_H_
#define PLANARPUSH_OBSMODEL_H_

#include <array>
#include <utility>

#include "planarpush/physics.h"
#include "planarpush/rng.h"

namespace planarpush {

struct NoiseParams {
  double force_sigma = 0.7;        // N
  double pos_sigma = 0.0025;       // m
  double rot_sigma = 0.05;         // rad
  double occl_duration_mean = 10.0;   // s
  double occl_duration_sigma = 5.0;   // s
  double occl_start_prob = 1.0 / 30.0;  // per step, while not occluded
};

// Occlusion behavior overrides used by evaluation scenarios. The standard
// process samples durations from the NoiseParams Gaussian.
struct OcclusionScenario {
  enum class Kind { kStandard, kNone, kFixedDuration, kFull };
  Kind kind = Kind::kStandard;
  double fixed_duration_s = 0.0;  // kFixedDuration only

  static OcclusionScenario standard() { return {}; }
  static OcclusionScenario none() { return {Kind::kNone, 0.0}; }
  static OcclusionScenario fixed(double seconds) { return {Kind::kFixedDuration, seconds}; }
  static OcclusionScenario full() { return {Kind::kFull, 0.0}; }
};

// Constant per-episode additive offsets, one draw per channel.
struct EpisodeNoise {
  Vec2 obj_pos;
  double obj_rot = 0.0;
  Vec2 pusher_pos;
  Vec2 force;
};

struct OcclusionState {
  bool active = false;
  long remaining_steps = 0;
  Pose2D frozen_pose;        // emitted while active
  bool have_last = false;    // a prior observed pose exists
  Pose2D last_obs_pose;      // last emitted object pose (noisy)
  long step = 0;             // observation count within the episode
};

struct Observation {
  Pose2D obj_pose_obs;
  Vec2 pusher_pos_obs;
  Vec2 force_obs;
  int xi = 0;  // 1 exactly while an occlusion is active
};

// Fixed layout of the scaled observation vector (see docs/formats.md):
//   [0] obj x    [1] obj y    [2] sin(obj theta)  [3] cos(obj theta)
//   [4] pusher x [5] pusher y [6] force x / 10    [7] force y / 10
//   [8] occlusion flag xi
inline constexpr int kObsDim = 9;
inline constexpr int kObsObjX = 0;
inline constexpr int kObsObjY = 1;
inline constexpr int kObsObjSin = 2;
inline constexpr int kObsObjCos = 3;
inline constexpr int kObsPusherX = 4;
inline constexpr int kObsPusherY = 5;
inline constexpr int kObsForceX = 6;
inline constexpr int kObsForceY = 7;
inline constexpr int kObsXi = 8;

using ScaledObservation = std::array<double, kObsDim>;

EpisodeNoise init_episode_noise(Rng& rng, const NoiseParams& params);

// Raw Gaussian duration draw in seconds, before clamping.
double sample_occlusion_duration_seconds(Rng& rng, const NoiseParams& params);

// Steps the observation process once. `dt` converts sampled durations to
// steps (clamped to at least one). Returns the observation together with the
// advanced occlusion state.
std::pair<Observation, OcclusionState> observe(
    const WorldState& s, const EpisodeNoise& ep_noise, const OcclusionState& occl, Rng& rng,
    const NoiseParams& params, double dt,
    const OcclusionScenario& scenario = OcclusionScenario::standard());

// Scaled pose encoding (x, y, sin, cos) used for targets and labels.
std::array<double, 4> scale_pose(const Pose2D& pose, const GeometrySpec& geom);

ScaledObservation scale_observation(const Observation& o, const GeometrySpec& geom);

// Inverse of the positional part of the scaling.
Vec2 unscale_position(double sx, double sy, const GeometrySpec& geom);

}  // namespace planarpush

#endif  // PLANARPUSH_OBSMODEL_H_
