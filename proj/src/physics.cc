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

#include "planarpush/physics.h"

#include <algorithm>

namespace planarpush {

namespace {

constexpr double kStickTieTol = 1e-9;   // sticking preferred within this cone slack
constexpr double kSnapTol = 1e-6;       // contact persistence band [m]

// Closest box boundary point to the pusher center, object frame.
struct BodyContact {
  double gap = 0.0;  // center distance to surface minus pusher radius
  Vec2 point;        // closest point on the box boundary
  Vec2 normal;       // outward normal at that point, unit
};

BodyContact body_contact_query(const Pose2D& object_pose, Vec2 pusher_pos,
                               const GeometrySpec& geom) {
  const Vec2 he = geom.object_half_extents;
  const Vec2 c = to_body(object_pose, pusher_pos);
  const Vec2 clamped{std::clamp(c.x, -he.x, he.x), std::clamp(c.y, -he.y, he.y)};

  BodyContact out;
  const Vec2 d = c - clamped;
  const double dist = d.norm();
  if (dist > 0.0) {
    // center outside the box (face or corner region)
    out.point = clamped;
    out.normal = d * (1.0 / dist);
    out.gap = dist - geom.pusher_radius;
    return out;
  }
  // center inside the box: project to the nearest face
  const double dxp = he.x - c.x, dxm = c.x + he.x;
  const double dyp = he.y - c.y, dym = c.y + he.y;
  const double m = std::min({dxp, dxm, dyp, dym});
  if (m == dxp) {
    out.point = {he.x, c.y};
    out.normal = {1.0, 0.0};
  } else if (m == dxm) {
    out.point = {-he.x, c.y};
    out.normal = {-1.0, 0.0};
  } else if (m == dyp) {
    out.point = {c.x, he.y};
    out.normal = {0.0, 1.0};
  } else {
    out.point = {c.x, -he.y};
    out.normal = {0.0, -1.0};
  }
  out.gap = -(m + geom.pusher_radius);
  return out;
}

struct Mat2 {
  // symmetric 2x2
  double a, b, d;  // [[a, b], [b, d]]
  Vec2 solve(Vec2 v) const {
    const double det = a * d - b * b;
    return {(d * v.x - b * v.y) / det, (a * v.y - b * v.x) / det};
  }
  Vec2 apply(Vec2 v) const { return {a * v.x + b * v.y, b * v.x + d * v.y}; }
};

// Contact-point mobility: v_contact = M * f for a wrench on the ellipsoidal
// limit surface with moment arm p.
Mat2 mobility(Vec2 p, const LimitSurface& ls) {
  const double inv_f2 = 1.0 / (ls.f_max * ls.f_max);
  const double inv_m2 = 1.0 / (ls.m_max * ls.m_max);
  return {inv_f2 + p.y * p.y * inv_m2, -p.x * p.y * inv_m2, inv_f2 + p.x * p.x * inv_m2};
}

// Scales a wrench (f, tau) onto the limit surface and returns the force part.
Vec2 normalize_to_limit_surface(Vec2 f, double tau, const LimitSurface& ls) {
  const double h = std::sqrt((f.x / ls.f_max) * (f.x / ls.f_max) +
                             (f.y / ls.f_max) * (f.y / ls.f_max) +
                             (tau / ls.m_max) * (tau / ls.m_max));
  if (h <= 0.0) return {0.0, 0.0};
  return f * (1.0 / h);
}

}  // namespace

double footprint_mean_radius(Vec2 half_extents) {
  // midpoint rule over one quadrant; the integrand is smooth away from the
  // origin and the rule is exact enough for a model constant
  const int n = 256;
  const double hx = half_extents.x / n, hy = half_extents.y / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = (i + 0.5) * hx;
    for (int j = 0; j < n; ++j) {
      const double y = (j + 0.5) * hy;
      acc += std::sqrt(x * x + y * y);
    }
  }
  return acc / (n * n);
}

LimitSurface make_limit_surface(const DynamicsParams& params, const GeometrySpec& geom) {
  // support friction while the object slides on the table
  const double f_max = params.dynamic_friction * params.mass * kGravity;
  return {f_max, f_max * footprint_mean_radius(geom.object_half_extents)};
}

ContactInfo contact_query(const Pose2D& object_pose, Vec2 pusher_pos, const GeometrySpec& geom) {
  const BodyContact bc = body_contact_query(object_pose, pusher_pos, geom);
  ContactInfo info;
  info.gap = bc.gap;
  info.point = bc.point;
  info.normal = rotate(bc.normal, object_pose.theta);
  info.force = {0.0, 0.0};
  info.mode = bc.gap > 0.0 ? ContactMode::kSeparated : ContactMode::kSticking;
  return info;
}

ModeSolution solve_contact_mode(Vec2 p, Vec2 n_out, Vec2 v, const DynamicsParams& params,
                                const LimitSurface& ls) {
  ModeSolution sol;
  const Vec2 d = -n_out;  // push direction, into the object
  const double v_n = v.dot(d);
  if (v_n <= 0.0) return sol;  // withdrawing or grazing: no force

  const Vec2 t = d.perp();
  const double mu = params.contact_friction_pusher_object;
  const Mat2 M = mobility(p, ls);

  // sticking hypothesis: contact point moves with the pusher
  {
    const Vec2 f = M.solve(v);
    const double fn = f.dot(d), ft = f.dot(t);
    if (fn > 0.0 && std::abs(ft) <= mu * fn * (1.0 + kStickTieTol) + kStickTieTol) {
      const double tau = p.cross(f);
      sol.mode = ContactMode::kSticking;
      sol.obj_vel_body = f * (1.0 / (ls.f_max * ls.f_max));
      sol.omega = tau / (ls.m_max * ls.m_max);
      sol.force_body = normalize_to_limit_surface(f, tau, ls);
      return sol;
    }
  }

  // sliding hypotheses: friction saturated on one cone edge
  for (const double s : {1.0, -1.0}) {
    const Vec2 f_dir = d + t * (s * mu);
    const double tau_dir = p.cross(f_dir);
    const Vec2 u = M.apply(f_dir);  // contact velocity per unit wrench scale
    const double u_n = u.dot(d);
    if (u_n <= 0.0) continue;
    const double kappa = v_n / u_n;  // matches normal contact velocity
    const Vec2 v_c = u * kappa;
    const double slip = (v - v_c).dot(t);  // pusher slip relative to object
    // friction on the object must act along the slip direction
    if (s * slip < -kStickTieTol) continue;
    sol.mode = ContactMode::kSliding;
    sol.obj_vel_body = f_dir * (kappa / (ls.f_max * ls.f_max));
    sol.omega = kappa * tau_dir / (ls.m_max * ls.m_max);
    sol.force_body = normalize_to_limit_surface(f_dir, tau_dir, ls);
    return sol;
  }

  sol.converged = false;  // no consistent mode
  return sol;
}

namespace {

// SE(2) exponential: advance a pose by a constant body twist over time h.
Pose2D integrate_twist(const Pose2D& pose, Vec2 v_body, double omega, double h) {
  const double phi = omega * h;
  Vec2 disp_body;
  if (std::abs(phi) < 1e-9) {
    disp_body = v_body * h;
  } else {
    const double s = std::sin(phi) / phi;
    const double c = (1.0 - std::cos(phi)) / phi;
    disp_body = {s * v_body.x * h - c * v_body.y * h, c * v_body.x * h + s * v_body.y * h};
  }
  const Vec2 disp = rotate(disp_body, pose.theta);
  return {pose.x + disp.x, pose.y + disp.y, wrap_angle(pose.theta + phi)};
}

// One substep with the pusher in (or entering) contact for duration h.
// Returns true if the solver had to fall back.
bool advance_contact(WorldState& s, Vec2 v_world, double h, const DynamicsParams& params,
                     const GeometrySpec& geom, const LimitSurface& ls) {
  const BodyContact bc = body_contact_query(s.object_pose, s.pusher_pos, geom);
  const Vec2 v_body = rotate(v_world, -s.object_pose.theta);
  const ModeSolution sol = solve_contact_mode(bc.point, bc.normal, v_body, params, ls);
  const bool fallback = !sol.converged;
  const double theta_at_solve = s.object_pose.theta;

  if (sol.mode != ContactMode::kSeparated) {
    s.object_pose = integrate_twist(s.object_pose, sol.obj_vel_body, sol.omega, h);
  }
  s.pusher_pos += v_world * h;

  // contact persistence: project the pusher back to the surface
  BodyContact after = body_contact_query(s.object_pose, s.pusher_pos, geom);
  const bool keep = sol.mode != ContactMode::kSeparated ? std::abs(after.gap) <= kSnapTol
                                                        : after.gap < 0.0;
  if (after.gap < 0.0 || keep) {
    const Vec2 n_world = rotate(after.normal, s.object_pose.theta);
    s.pusher_pos += n_world * (-after.gap);
    after = body_contact_query(s.object_pose, s.pusher_pos, geom);
  }

  // point, normal and force are reported at the solve instant so they stay
  // mutually consistent; gap reflects the post-step proximity
  s.contact.mode = sol.mode;
  s.contact.gap = after.gap;
  s.contact.point = bc.point;
  s.contact.normal = rotate(bc.normal, theta_at_solve);
  s.contact.force = sol.mode == ContactMode::kSeparated
                        ? Vec2{0.0, 0.0}
                        : rotate(-sol.force_body, theta_at_solve);
  return fallback;
}

}  // namespace

PhysicsStepResult step_physics(const WorldState& state, Vec2 pusher_velocity,
                               const DynamicsParams& params, const GeometrySpec& geom,
                               double dt, int substeps) {
  PhysicsStepResult out;
  out.state = state;
  WorldState& s = out.state;
  const LimitSurface ls = make_limit_surface(params, geom);
  const double h = dt / substeps;

  for (int k = 0; k < substeps; ++k) {
    const BodyContact bc = body_contact_query(s.object_pose, s.pusher_pos, geom);
    if (bc.gap > 0.0) {
      // free flight; detect surface crossing within the substep
      const Vec2 end = s.pusher_pos + pusher_velocity * h;
      const BodyContact bc_end = body_contact_query(s.object_pose, end, geom);
      if (bc_end.gap >= 0.0) {
        s.pusher_pos = end;
        s.contact.mode = ContactMode::kSeparated;
        s.contact.gap = bc_end.gap;
        s.contact.point = bc_end.point;
        s.contact.normal = rotate(bc_end.normal, s.object_pose.theta);
        s.contact.force = {0.0, 0.0};
        continue;
      }
      // bisect the touch instant, then spend the remainder in contact
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 50; ++it) {
        const double mid = 0.5 * (lo + hi);
        const BodyContact bm =
            body_contact_query(s.object_pose, s.pusher_pos + pusher_velocity * (mid * h), geom);
        (bm.gap > 0.0 ? lo : hi) = mid;
      }
      s.pusher_pos += pusher_velocity * (hi * h);
      if (advance_contact(s, pusher_velocity, (1.0 - hi) * h, params, geom, ls))
        out.solver_fallback = true;
    } else {
      if (advance_contact(s, pusher_velocity, h, params, geom, ls)) out.solver_fallback = true;
    }
  }
  return out;
}

DynamicsParams sample_dynamics(Rng& rng) {
  DynamicsParams p;
  p.static_friction = rng.uniform(0.3, 0.5);
  p.dynamic_friction = rng.uniform(0.1, 0.3);
  p.restitution = rng.uniform(0.1, 0.7);
  p.mass = rng.uniform(3.0, 3.5);
  // the pusher-object cone reuses the support static-friction range
  p.contact_friction_pusher_object = rng.uniform(0.3, 0.5);
  return p;
}

ContactFace contact_face(Vec2 point_body, const GeometrySpec& geom) {
  const Vec2 he = geom.object_half_extents;
  const double dx = he.x - std::abs(point_body.x);
  const double dy = he.y - std::abs(point_body.y);
  if (dx <= dy) return point_body.x >= 0.0 ? ContactFace::kXPlus : ContactFace::kXMinus;
  return point_body.y >= 0.0 ? ContactFace::kYPlus : ContactFace::kYMinus;
}

}  // namespace planarpush
