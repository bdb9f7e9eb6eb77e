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
#include <filesystem>

#include "doctest.h"
#include "planarpush/rl.h"

namespace pp = planarpush;
namespace ad = planarpush::ad;

namespace {

pp::PolicyConfig tiny_policy_cfg() {
  pp::PolicyConfig cfg;
  cfg.dense1 = 8;
  cfg.lstm_size = 8;
  cfg.dense2 = 8;
  return cfg;
}

std::vector<double> random_input(int dim, pp::Rng& rng) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

TEST_CASE("act: uniform logits sample uniformly with logp 2 ln(1/11)") {
  pp::Rng rng(1);
  pp::PolicyNet policy = pp::make_policy(tiny_policy_cfg(), rng);
  // zero the head so the logits are exactly uniform
  for (double& v : policy.params.values[policy.head.w].data) v = 0.0;
  for (double& v : policy.params.values[policy.head.b].data) v = 0.0;

  pp::Rng action_rng(7);
  std::vector<int> counts(11, 0);
  for (int i = 0; i < 5000; ++i) {
    pp::Hidden h(1, policy.cfg.lstm_size);
    const auto input = random_input(policy.cfg.input_dim, rng);
    const pp::ActResult r = pp::act(policy, input, h, action_rng);
    CHECK(r.logp == doctest::Approx(2.0 * std::log(1.0 / 11.0)).epsilon(1e-12));
    CHECK(r.entropy == doctest::Approx(2.0 * std::log(11.0)).epsilon(1e-12));
    counts[r.action.ix]++;
  }
  for (const int c : counts) CHECK(c > 300);  // roughly uniform

  SUBCASE("input dimension mismatch throws") {
    pp::Hidden h(1, policy.cfg.lstm_size);
    pp::Rng r2(3);
    CHECK_THROWS(pp::act(policy, std::vector<double>(5, 0.0), h, r2));
  }
}

TEST_CASE("act: saturated logits act deterministically") {
  pp::Rng rng(2);
  pp::PolicyNet policy = pp::make_policy(tiny_policy_cfg(), rng);
  for (double& v : policy.params.values[policy.head.w].data) v = 0.0;
  auto& bias = policy.params.values[policy.head.b].data;
  for (double& v : bias) v = -50.0;
  bias[3] = 50.0;        // x axis bin 3
  bias[11 + 8] = 50.0;   // y axis bin 8
  pp::Rng action_rng(9);
  for (int i = 0; i < 50; ++i) {
    pp::Hidden h(1, policy.cfg.lstm_size);
    const auto input = random_input(policy.cfg.input_dim, rng);
    const pp::ActResult r = pp::act(policy, input, h, action_rng);
    CHECK(r.action.ix == 3);
    CHECK(r.action.iy == 8);
  }
}

TEST_CASE("act: returned logp matches re-evaluated log-probability") {
  pp::Rng rng(5);
  pp::PolicyNet policy = pp::make_policy(tiny_policy_cfg(), rng);
  pp::Rng action_rng(11);
  pp::Hidden h(1, policy.cfg.lstm_size);
  pp::Hidden h_replay(1, policy.cfg.lstm_size);
  for (int t = 0; t < 100; ++t) {
    const auto input = random_input(policy.cfg.input_dim, rng);
    pp::Hidden h_before = h;
    const pp::ActResult r = pp::act(policy, input, h, action_rng);
    const double lp = pp::evaluate_logp(policy, input, h_replay, r.action);
    CHECK(std::abs(lp - r.logp) <= 1e-9);
    // the replayed hidden must track the acting hidden
    CHECK(h_replay.h.data == h.h.data);
    (void)h_before;
  }
}

TEST_CASE("compute_gae covers the bootstrap cases") {
  pp::Rng rng(1);
  pp::PolicyNet value = pp::make_value(tiny_policy_cfg(), rng);

  SUBCASE("single step ended by success: adv = r - V") {
    pp::RolloutBuffer b;
    b.resize(1, 1, 13, 22);
    b.tail_input.clear();  // preset tail values
    b.reward[0] = 2.0;
    b.value[0] = 0.7;
    b.done[0] = 1;
    b.timeout[0] = 0;
    pp::compute_gae(b, value, 0.993, 0.95);
    CHECK(b.advantage[0] == doctest::Approx(2.0 - 0.7).epsilon(1e-12));
    CHECK(b.returns[0] == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("single step ended by timeout: adv = r + gamma V(s') - V") {
    pp::RolloutBuffer b;
    b.resize(1, 1, 13, 22);
    b.tail_input.clear();
    b.reward[0] = 0.1;
    b.value[0] = 0.5;
    b.done[0] = 1;
    b.timeout[0] = 1;
    b.bootstrap[0] = 0.9;
    pp::compute_gae(b, value, 0.993, 0.95);
    CHECK(b.advantage[0] == doctest::Approx(0.1 + 0.993 * 0.9 - 0.5).epsilon(1e-12));
  }

  SUBCASE("gamma = lambda = 1, zero values: advantage is the remaining reward sum") {
    pp::RolloutBuffer b;
    b.resize(3, 1, 13, 22);
    b.tail_input.clear();
    for (int t = 0; t < 3; ++t) b.reward[t] = 1.0;
    pp::compute_gae(b, value, 1.0, 1.0);
    CHECK(b.advantage[0] == doctest::Approx(3.0));
    CHECK(b.advantage[1] == doctest::Approx(2.0));
    CHECK(b.advantage[2] == doctest::Approx(1.0));
  }

  SUBCASE("lambda = 0 reduces to one-step TD residuals") {
    pp::Rng r2(7);
    pp::RolloutBuffer b;
    b.resize(5, 2, 13, 22);
    b.tail_input.clear();
    for (size_t k = 0; k < b.reward.size(); ++k) {
      b.reward[k] = r2.uniform(-1.0, 1.0);
      b.value[k] = r2.uniform(-1.0, 1.0);
    }
    b.tail_value = {0.3, -0.2};
    const double gamma = 0.9;
    pp::compute_gae(b, value, gamma, 0.0);
    for (int t = 0; t < 5; ++t) {
      for (int i = 0; i < 2; ++i) {
        const size_t k = b.idx(t, i);
        const double next_v = t == 4 ? b.tail_value[i] : b.value[b.idx(t + 1, i)];
        CHECK(b.advantage[k] ==
              doctest::Approx(b.reward[k] + gamma * next_v - b.value[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("kl_lr_update follows the schedule and the bounds") {
  pp::PpoConfig cfg;
  CHECK(pp::kl_lr_update(1e-3, cfg.kl_target, cfg) == 1e-3);
  CHECK(pp::kl_lr_update(1e-3, 10.0 * cfg.kl_target, cfg) == doctest::Approx(1e-3 / 1.5));
  CHECK(pp::kl_lr_update(1e-3, cfg.kl_target / 10.0, cfg) == doctest::Approx(1.5e-3));
  // clamped at both ends
  CHECK(pp::kl_lr_update(cfg.lr_min, 10.0 * cfg.kl_target, cfg) == cfg.lr_min);
  CHECK(pp::kl_lr_update(cfg.lr_max, 0.0, cfg) == cfg.lr_max);
  for (double lr = cfg.lr_min; lr <= cfg.lr_max; lr *= 1.3)
    for (const double kl : {0.0, 1e-3, 7e-3, 1.0})
      CHECK(pp::kl_lr_update(lr, kl, cfg) >= cfg.lr_min);
}

TEST_CASE("clipped surrogate arithmetic: ratio 1.5, eps 0.2 clips to 1.2 A") {
  ad::Tape t;
  const ad::Ref ratio = t.leaf(ad::Tensor::scalar(1.5));
  const ad::Ref adv = t.leaf(ad::Tensor::scalar(2.0));
  const ad::Ref clipped = t.mul(t.clamp_(ratio, 0.8, 1.2), adv);
  const ad::Ref surr = t.minimum(t.mul(ratio, adv), clipped);
  CHECK(t.val(surr).data[0] == doctest::Approx(1.2 * 2.0).epsilon(1e-15));
}

TEST_CASE("ppo_update is invariant to an advantage shift (mean-zero normalization)") {
  pp::Rng rng(3);
  pp::PolicyConfig pc = tiny_policy_cfg();
  pp::PolicyNet policy_a = pp::make_policy(pc, rng);
  pp::PolicyNet value_a = pp::make_value(pc, rng);
  pp::PolicyNet policy_b = policy_a;
  pp::PolicyNet value_b = value_a;

  const int T = 6, N = 4;
  pp::RolloutBuffer buf;
  buf.resize(T, N, pc.input_dim, 2 * pc.bins);
  buf.tail_input.clear();
  buf.policy_h0 = pp::Hidden(N, pc.lstm_size);
  buf.value_h0 = pp::Hidden(N, pc.lstm_size);
  pp::Rng fill(17);
  for (size_t k = 0; k < buf.reward.size(); ++k) {
    buf.actions[k] = {fill.uniform_int(11), fill.uniform_int(11)};
    buf.logp[k] = -4.8;
    buf.advantage[k] = fill.uniform(-1.0, 1.0);
    buf.returns[k] = fill.uniform(-1.0, 1.0);
  }
  for (double& v : buf.inputs) v = fill.uniform(-1.0, 1.0);
  for (double& v : buf.old_logits) v = 0.0;

  pp::RolloutBuffer shifted = buf;
  for (double& a : shifted.advantage) a += 5.0;

  pp::PpoConfig cfg;
  cfg.epochs = 1;
  cfg.minibatch_envs = 4;
  cfg.threads = 2;
  ad::AdamState ap1, av1, ap2, av2;
  pp::Rng sh1(5), sh2(5);
  pp::ppo_update(policy_a, value_a, buf, cfg, ap1, av1, 1e-3, sh1);
  pp::ppo_update(policy_b, value_b, shifted, cfg, ap2, av2, 1e-3, sh2);
  for (size_t i = 0; i < policy_a.params.values.size(); ++i)
    for (size_t k = 0; k < policy_a.params.values[i].data.size(); ++k)
      CHECK(policy_a.params.values[i].data[k] ==
            doctest::Approx(policy_b.params.values[i].data[k]).epsilon(1e-9));
}

TEST_CASE("VecEnv input layouts per mode") {
  pp::GeometrySpec geom;
  pp::VecEnvConfig cfg;
  cfg.episode.horizon = 50;

  SUBCASE("privileged: 13 wide, xi slot zero") {
    pp::VecEnv env(cfg, geom, nullptr, 3, 42);
    CHECK(env.input_dim() == 13);
    CHECK(env.input(0)[pp::kObsXi] == 0.0);
  }

  SUBCASE("estimator modes require an estimator and widen with stds") {
    cfg.mode = pp::PolicyMode::kEstimatorStateUnc;
    CHECK(pp::policy_input_dim(cfg.mode) == 17);
    CHECK_THROWS(pp::VecEnv(cfg, geom, nullptr, 1, 1));
  }
}

TEST_CASE("train_policy_loop is bit-deterministic under a fixed seed") {
  pp::GeometrySpec geom;
  pp::VecEnvConfig env_cfg;
  env_cfg.episode.horizon = 12;
  env_cfg.mode = pp::PolicyMode::kPrivileged;
  env_cfg.noise.force_sigma = env_cfg.noise.pos_sigma = env_cfg.noise.rot_sigma = 0.0;
  env_cfg.noise.occl_start_prob = 0.0;
  env_cfg.scenario = pp::OcclusionScenario::none();

  pp::PpoConfig ppo;
  ppo.rollout_steps = 8;
  ppo.num_envs = 4;
  ppo.minibatch_envs = 2;
  ppo.total_env_steps = 64;  // two updates
  ppo.eval_every_updates = 0;
  ppo.threads = 2;
  ppo.seed = 7;

  const std::string dir_a =
      (std::filesystem::temp_directory_path() / "pp_rl_det_a").string();
  const std::string dir_b =
      (std::filesystem::temp_directory_path() / "pp_rl_det_b").string();
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  pp::train_policy_loop(env_cfg, ppo, geom, nullptr, dir_a);
  pp::train_policy_loop(env_cfg, ppo, geom, nullptr, dir_b);

  const pp::PolicyNet a = pp::load_policy(dir_a + "/policy_final.ppck");
  const pp::PolicyNet b = pp::load_policy(dir_b + "/policy_final.ppck");
  for (size_t i = 0; i < a.params.values.size(); ++i)
    CHECK(a.params.values[i].data == b.params.values[i].data);
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("policy checkpoint round trip and evaluate_policy guards") {
  pp::Rng rng(13);
  pp::PolicyNet policy = pp::make_policy(tiny_policy_cfg(), rng);
  const std::string path =
      (std::filesystem::temp_directory_path() / "pp_rl_ckpt.ppck").string();
  pp::save_policy(policy, {{"update", "3"}}, path);
  const pp::PolicyNet loaded = pp::load_policy(path);
  for (size_t i = 0; i < policy.params.values.size(); ++i)
    CHECK(loaded.params.values[i].data == policy.params.values[i].data);
  std::filesystem::remove(path);

  pp::GeometrySpec geom;
  pp::VecEnvConfig env_cfg;
  CHECK_THROWS(pp::evaluate_policy(policy, env_cfg, geom, nullptr, 0, 1));
}
