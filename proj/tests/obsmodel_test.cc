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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "planarpush/obsmodel.h"

namespace pp = planarpush;

namespace {
constexpr double kDt = 1.0 / 15.0;

pp::WorldState test_world() {
  pp::WorldState s;
  s.object_pose = {0.05, -0.03, 0.4};
  s.pusher_pos = {-0.1, 0.02};
  s.contact.force = {1.5, -0.5};
  return s;
}
}  // namespace

TEST_CASE("init_episode_noise: zero sigmas give zero offsets, fixed seed repeats") {
  pp::NoiseParams zero;
  zero.force_sigma = zero.pos_sigma = zero.rot_sigma = 0.0;
  pp::Rng rng(5);
  const pp::EpisodeNoise n = pp::init_episode_noise(rng, zero);
  CHECK(n.obj_pos.x == 0.0);
  CHECK(n.obj_rot == 0.0);
  CHECK(n.force.y == 0.0);

  pp::NoiseParams p;
  pp::Rng a(9), b(9);
  const pp::EpisodeNoise na = pp::init_episode_noise(a, p);
  const pp::EpisodeNoise nb = pp::init_episode_noise(b, p);
  CHECK(na.obj_pos.x == nb.obj_pos.x);
  CHECK(na.force.x == nb.force.x);
}

TEST_CASE("episode noise offsets match the configured scales") {
  pp::NoiseParams p;
  pp::Rng rng(13);
  const int n = 100000;
  double force_sq = 0.0, pos_sq = 0.0, rot_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const pp::EpisodeNoise e = pp::init_episode_noise(rng, p);
    force_sq += e.force.x * e.force.x;
    pos_sq += e.obj_pos.x * e.obj_pos.x;
    rot_sq += e.obj_rot * e.obj_rot;
  }
  CHECK(std::sqrt(force_sq / n) == doctest::Approx(0.7).epsilon(0.02));
  CHECK(std::sqrt(pos_sq / n) == doctest::Approx(0.0025).epsilon(0.02));
  CHECK(std::sqrt(rot_sq / n) == doctest::Approx(0.05).epsilon(0.02));
}

TEST_CASE("observe: noiseless and occlusion-free equals ground truth") {
  pp::NoiseParams p;
  p.force_sigma = p.pos_sigma = p.rot_sigma = 0.0;
  p.occl_start_prob = 0.0;
  pp::Rng rng(1);
  const pp::EpisodeNoise ep = pp::init_episode_noise(rng, p);
  const pp::WorldState s = test_world();
  pp::OcclusionState occl;
  for (int t = 0; t < 20; ++t) {
    auto [o, next] = pp::observe(s, ep, occl, rng, p, kDt);
    occl = next;
    CHECK(o.obj_pose_obs.x == s.object_pose.x);
    CHECK(o.obj_pose_obs.theta == doctest::Approx(s.object_pose.theta));
    CHECK(o.pusher_pos_obs.x == s.pusher_pos.x);
    CHECK(o.force_obs.y == s.contact.force.y);
    CHECK(o.xi == 0);
  }
}

TEST_CASE("observe: frozen pose is constant and xi flags exactly the occluded steps") {
  pp::NoiseParams p;
  pp::Rng rng(21);
  const pp::EpisodeNoise ep = pp::init_episode_noise(rng, p);
  const pp::WorldState s = test_world();
  pp::OcclusionState occl;
  pp::Pose2D frozen;
  bool was_active = false;
  int occluded_steps = 0;
  for (int t = 0; t < 3000; ++t) {
    auto [o, next] = pp::observe(s, ep, occl, rng, p, kDt);
    if (o.xi == 1) {
      ++occluded_steps;
      if (!was_active) {
        frozen = o.obj_pose_obs;
        // freezing uses the previous emitted pose
        if (t > 0) {
          CHECK(o.obj_pose_obs.x == occl.last_obs_pose.x);
          CHECK(o.obj_pose_obs.theta == occl.last_obs_pose.theta);
        }
      } else {
        CHECK(o.obj_pose_obs.x == frozen.x);
        CHECK(o.obj_pose_obs.y == frozen.y);
        CHECK(o.obj_pose_obs.theta == frozen.theta);
      }
      was_active = true;
    } else {
      was_active = false;
    }
    occl = next;
  }
  CHECK(occluded_steps > 500);  // durations ~150 steps, starts every ~30 eligible steps
}

TEST_CASE("observe: start rate and duration statistics match the model") {
  pp::NoiseParams p;
  pp::Rng rng(33);
  const pp::EpisodeNoise ep = pp::init_episode_noise(rng, p);
  const pp::WorldState s = test_world();
  pp::OcclusionState occl;
  long eligible = 0, starts = 0;
  const long total = 1000000;
  for (long t = 0; t < total; ++t) {
    const bool was_eligible = !occl.active;
    auto [o, next] = pp::observe(s, ep, occl, rng, p, kDt);
    if (was_eligible) {
      ++eligible;
      if (o.xi == 1) ++starts;
    } else {
      CHECK(o.xi == 1);  // never a fresh start while active
    }
    occl = next;
  }
  const double rate = static_cast<double>(starts) / eligible;
  CHECK(rate == doctest::Approx(1.0 / 30.0).epsilon(0.05));

  // pre-clamp duration mean
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += pp::sample_occlusion_duration_seconds(rng, p);
  CHECK(sum / n == doctest::Approx(10.0).epsilon(0.02));
}

TEST_CASE("observe: scenario overrides") {
  pp::NoiseParams p;
  const pp::WorldState s = test_world();

  SUBCASE("none never occludes") {
    pp::Rng rng(3);
    const pp::EpisodeNoise ep = pp::init_episode_noise(rng, p);
    pp::OcclusionState occl;
    for (int t = 0; t < 2000; ++t) {
      auto [o, next] = pp::observe(s, ep, occl, rng, p, kDt, pp::OcclusionScenario::none());
      CHECK(o.xi == 0);
      occl = next;
    }
  }

  SUBCASE("full occludes from the first step onward") {
    pp::Rng rng(4);
    const pp::EpisodeNoise ep = pp::init_episode_noise(rng, p);
    pp::OcclusionState occl;
    pp::Pose2D frozen;
    for (int t = 0; t < 500; ++t) {
      auto [o, next] = pp::observe(s, ep, occl, rng, p, kDt, pp::OcclusionScenario::full());
      CHECK(o.xi == 1);
      if (t == 0) frozen = o.obj_pose_obs;
      CHECK(o.obj_pose_obs.x == frozen.x);
      occl = next;
    }
  }

  SUBCASE("fixed duration runs exactly the configured step count") {
    pp::Rng rng(6);
    const pp::EpisodeNoise ep = pp::init_episode_noise(rng, p);
    pp::OcclusionState occl;
    const auto scen = pp::OcclusionScenario::fixed(1.0);  // 15 steps
    int run = 0;
    bool saw_full_run = false;
    for (int t = 0; t < 5000; ++t) {
      auto [o, next] = pp::observe(s, ep, occl, rng, p, kDt, scen);
      if (o.xi == 1) {
        ++run;
      } else if (run > 0) {
        // back-to-back starts merge, so runs are multiples of the duration
        CHECK(run % 15 == 0);
        saw_full_run = true;
        run = 0;
      }
      occl = next;
    }
    CHECK(saw_full_run);
  }
}

TEST_CASE("scale_observation: layout, endpoints, clipping") {
  pp::GeometrySpec geom;
  pp::Observation o;
  o.obj_pose_obs = {0.0, 0.0, 0.0};
  o.pusher_pos_obs = {0.0, 0.0};
  o.force_obs = {15.0, -3.0};
  o.xi = 0;
  const pp::ScaledObservation v = pp::scale_observation(o, geom);
  CHECK(v[pp::kObsObjX] == 0.0);
  CHECK(v[pp::kObsObjY] == 0.0);
  CHECK(v[pp::kObsObjSin] == 0.0);
  CHECK(v[pp::kObsObjCos] == 1.0);
  CHECK(v[pp::kObsForceX] == 1.0);
  CHECK(v[pp::kObsForceY] == doctest::Approx(-0.3));

  pp::Observation corner;
  corner.obj_pose_obs = {geom.workspace_half_extents.x, -geom.workspace_half_extents.y, 0.0};
  corner.pusher_pos_obs = {geom.workspace_half_extents.x, geom.workspace_half_extents.y};
  const pp::ScaledObservation c = pp::scale_observation(corner, geom);
  CHECK(c[pp::kObsObjX] == 1.0);
  CHECK(c[pp::kObsObjY] == -1.0);
  CHECK(c[pp::kObsPusherX] == 1.0);
  CHECK(c[pp::kObsPusherY] == 1.0);
}

TEST_CASE("scale/unscale round trip and unit-circle orientation") {
  pp::GeometrySpec geom;
  pp::Rng rng(44);
  for (int i = 0; i < 1000; ++i) {
    pp::Observation o;
    o.obj_pose_obs = {rng.uniform(-0.3, 0.3), rng.uniform(-0.15, 0.15),
                      rng.uniform(-pp::kPi, pp::kPi)};
    o.pusher_pos_obs = {rng.uniform(-0.3, 0.3), rng.uniform(-0.15, 0.15)};
    o.force_obs = {rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
    o.xi = rng.bernoulli(0.5) ? 1 : 0;
    const pp::ScaledObservation v = pp::scale_observation(o, geom);
    for (const double c : v) {
      CHECK(c >= -1.0);
      CHECK(c <= 1.0);
    }
    const pp::Vec2 back = pp::unscale_position(v[pp::kObsObjX], v[pp::kObsObjY], geom);
    CHECK(back.x == doctest::Approx(o.obj_pose_obs.x).epsilon(1e-12));
    CHECK(back.y == doctest::Approx(o.obj_pose_obs.y).epsilon(1e-12));
    const double s = v[pp::kObsObjSin], c2 = v[pp::kObsObjCos];
    CHECK(s * s + c2 * c2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v[pp::kObsXi] == static_cast<double>(o.xi));
  }
}
