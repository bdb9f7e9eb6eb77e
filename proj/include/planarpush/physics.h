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

// Quasi-static planar pusher-slider simulation: a circular pusher against a
// rectangular slider on a frictional support plane. Contact wrenches live on
// an ellipsoidal limit surface; the pusher-object contact resolves into
// sticking / sliding / separation via motion-cone mode selection.

#ifndef PLANARPUSH_PHYSICS_H_
#define PLANARPUSH_PHYSICS_H_

#include <cmath>
#include <limits>

#include "planarpush/rng.h"

namespace planarpush {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kGravity = 9.81;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  // z component of the planar cross product.
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::sqrt(x * x + y * y); }
  Vec2 perp() const { return {-y, x}; }
};

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline Vec2 rotate(Vec2 v, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // wrapped to (-pi, pi]
};

inline Vec2 to_body(const Pose2D& pose, Vec2 world_point) {
  return rotate(world_point - Vec2{pose.x, pose.y}, -pose.theta);
}

inline Vec2 to_world(const Pose2D& pose, Vec2 body_point) {
  return rotate(body_point, pose.theta) + Vec2{pose.x, pose.y};
}

struct DynamicsParams {
  double mass = 3.25;                          // kg
  double static_friction = 0.4;                // object-support
  double dynamic_friction = 0.2;               // object-support, while sliding
  double restitution = 0.4;                    // stored; unused by the quasi-static stepper
  double contact_friction_pusher_object = 0.4;  // pusher-object Coulomb cone
};

struct GeometrySpec {
  Vec2 object_half_extents{0.06, 0.05};  // 0.12 m x 0.10 m footprint
  double pusher_radius = 0.013;
  Vec2 workspace_half_extents{0.30, 0.15};  // 0.6 m x 0.3 m, centered at origin

  double workspace_diagonal() const {
    return 2.0 * std::sqrt(workspace_half_extents.x * workspace_half_extents.x +
                           workspace_half_extents.y * workspace_half_extents.y);
  }
};

enum class ContactMode { kSeparated, kSticking, kSliding };

struct ContactInfo {
  ContactMode mode = ContactMode::kSeparated;
  Vec2 point;   // contact point in the object frame; meaningful when touching
  Vec2 normal;  // outward surface normal in the world frame; unit when touching
  Vec2 force;   // reaction on the pusher, world frame [N]; zero when separated
  double gap = std::numeric_limits<double>::infinity();  // signed surface distance
};

struct WorldState {
  Pose2D object_pose;
  Vec2 pusher_pos;
  ContactInfo contact;
};

// Maximal friction force and moment the support can exert on the moving
// object (ellipsoidal limit surface semi-axes).
struct LimitSurface {
  double f_max = 0.0;  // N
  double m_max = 0.0;  // N m
};

// Mean distance from the centroid over the rectangular footprint, assuming
// uniform support pressure. This is the moment arm relating m_max to f_max.
double footprint_mean_radius(Vec2 half_extents);

LimitSurface make_limit_surface(const DynamicsParams& params, const GeometrySpec& geom);

// Box-circle proximity. gap > 0 reports kSeparated with zero force; a
// touching configuration reports kSticking with zero force (the stepper
// resolves the actual mode). Contact point and normal are valid either way
// as the closest boundary point and its outward direction.
ContactInfo contact_query(const Pose2D& object_pose, Vec2 pusher_pos, const GeometrySpec& geom);

// Instantaneous contact resolution at one contact, all in the object frame.
struct ModeSolution {
  ContactMode mode = ContactMode::kSeparated;
  Vec2 force_body;     // on the object, scaled onto the limit surface [N]
  Vec2 obj_vel_body;   // body-frame linear velocity of the object [m/s]
  double omega = 0.0;  // angular velocity [rad/s]
  bool converged = true;  // false: no consistent mode; caller treats as separated
};

ModeSolution solve_contact_mode(Vec2 contact_point_body, Vec2 outward_normal_body,
                                Vec2 pusher_vel_body, const DynamicsParams& params,
                                const LimitSurface& ls);

struct PhysicsStepResult {
  WorldState state;
  bool solver_fallback = false;  // a substep had no consistent contact mode
};

// Advances one control interval dt in `substeps` equal substeps. The pusher
// moves kinematically and is projected out of penetration; the object moves
// only while contact persists.
PhysicsStepResult step_physics(const WorldState& state, Vec2 pusher_velocity,
                               const DynamicsParams& params, const GeometrySpec& geom,
                               double dt, int substeps = 10);

DynamicsParams sample_dynamics(Rng& rng);

enum class ContactFace { kNone, kXPlus, kXMinus, kYPlus, kYMinus };

// Face owning a boundary point; corner points resolve to the nearer face
// axis, ties to x.
ContactFace contact_face(Vec2 point_body, const GeometrySpec& geom);

}  // namespace planarpush

#endif  // PLANARPUSH_PHYSICS_H_
