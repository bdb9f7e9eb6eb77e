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

// Finite-horizon planar-pushing task: push the object within a translational
// and rotational tolerance of a sampled target pose before the horizon,
// without any centroid leaving the workspace.

#ifndef PLANARPUSH_ENV_H_
#define PLANARPUSH_ENV_H_

#include <array>

#include "planarpush/obsmodel.h"
#include "planarpush/physics.h"
#include "planarpush/rng.h"

namespace planarpush {

struct EpisodeConfig {
  int horizon = 300;
  double dt = 1.0 / 15.0;
  double success_trans_tol = 0.01;                 // m
  double success_rot_tol = 15.0 * kPi / 180.0;     // rad
  double r_success = 50.0;
  double r_violation = -10.0;
  double k1 = 0.1;   // translational shaping
  double k2 = 0.02;  // rotational shaping
  double k3 = 0.004; // velocity shaping
  double max_speed = 0.05;  // m/s per axis
  int bins_per_axis = 11;   // odd, so zero velocity is representable
  int physics_substeps = 10;
};

struct EnvState {
  WorldState world;
  Pose2D target;
  DynamicsParams params;
  int step_count = 0;
};

enum class Outcome { kRunning, kSuccess, kBoundaryViolation, kTimeout };

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
  Outcome outcome = Outcome::kRunning;
  bool solver_fallback = false;
};

struct ActionIndex {
  int ix = 0;
  int iy = 0;
};

// Uniformly samples object, pusher and target in the workspace (centroid
// rule); rejects pusher positions overlapping the object. Throws after 1000
// rejected draws. Draw order: dynamics, object, target, pusher.
EnvState reset(Rng& rng, const EpisodeConfig& config, const GeometrySpec& geom);

// Linear bin spacing over [-max_speed, +max_speed] per axis. Throws on an
// out-of-range index.
Vec2 decode_action(ActionIndex a, const EpisodeConfig& config);

// Termination classification of a post-step state.
Outcome classify(const EnvState& state, const EpisodeConfig& config, const GeometrySpec& geom);

// r = r_term + k1 (1 - d_trans) + k2 (1 - d_rot) + k3 (1 - v_p), with each
// distance normalized to [0, 1] (workspace diagonal, pi, max speed; the
// pusher-speed norm is clamped at 1 so diagonal actions stay in range).
double reward(const EnvState& prev, ActionIndex a, const EnvState& next,
              const EpisodeConfig& config, const GeometrySpec& geom);

// Applies one control step. Throws when called past the horizon.
StepResult step_env(const EnvState& state, ActionIndex a, const EpisodeConfig& config,
                    const GeometrySpec& geom);

// Scaled ground-truth state (no noise, xi = 0), same layout as
// ScaledObservation.
ScaledObservation scaled_true_state(const EnvState& state, const GeometrySpec& geom);

// Policy input: a scaled observation with the scaled target pose appended.
inline constexpr int kPolicyInputDim = kObsDim + 4;  // 13

std::array<double, kPolicyInputDim> policy_input(const ScaledObservation& obs,
                                                 const Pose2D& target,
                                                 const GeometrySpec& geom);

}  // namespace planarpush

#endif  // PLANARPUSH_ENV_H_
