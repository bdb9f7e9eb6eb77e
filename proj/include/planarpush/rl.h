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

// Recurrent PPO with two independent categorical action heads, GAE with
// horizon bootstrapping, a KL-adaptive learning rate, and the training
// entry points for the privileged, estimator-in-the-loop and end-to-end
// policies.

#ifndef PLANARPUSH_RL_H_
#define PLANARPUSH_RL_H_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "planarpush/autodiff.h"
#include "planarpush/env.h"
#include "planarpush/estimator.h"

namespace planarpush {

struct PolicyConfig {
  int input_dim = kPolicyInputDim;
  int dense1 = 64;     // paper scale: 128
  int lstm_size = 64;  // paper scale: 256
  int dense2 = 64;     // paper scale: 128
  int bins = 11;       // per velocity axis; the policy head emits 2*bins logits
};

struct PolicyNet {
  PolicyConfig cfg;
  int head_dim = 0;  // 2*bins (policy) or 1 (value)
  ad::ParamStore params;
  ad::LinearLayer fc1;
  ad::LstmLayer lstm;
  ad::LinearLayer fc2;
  ad::LinearLayer head;
};

PolicyNet make_policy(const PolicyConfig& cfg, Rng& rng);
PolicyNet make_value(const PolicyConfig& cfg, Rng& rng);
void save_policy(const PolicyNet& net, const std::map<std::string, std::string>& extra_meta,
                 const std::string& path);
PolicyNet load_policy(const std::string& path);

// Batched recurrent state, one row per environment.
struct Hidden {
  ad::Tensor h, c;
  Hidden() = default;
  Hidden(int rows, int size) : h(rows, size), c(rows, size) {}
  void zero_row(int r);
};

struct ActResult {
  ActionIndex action;
  double logp = 0.0;
  double entropy = 0.0;
};

// Single-input policy step: advances `hidden` (1-row) and samples both axes.
ActResult act(const PolicyNet& policy, const std::vector<double>& input, Hidden& hidden,
              Rng& rng);

// Log-probability of `a` under the policy for the given pre-step hidden
// state (hidden advances). Used to cross-check act().
double evaluate_logp(const PolicyNet& policy, const std::vector<double>& input,
                     Hidden& hidden, ActionIndex a);

struct PpoConfig {
  int rollout_steps = 100;
  int num_envs = 64;       // paper scale: 4000
  int minibatch_envs = 16; // whole sequences, grouped by environment
  int epochs = 5;
  double clip = 0.2;
  double gamma = 0.993;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 1.0;
  double kl_target = 7e-3;
  double lr_init = 1e-3;
  double lr_min = 1.5e-4;
  double lr_max = 1e-2;
  double grad_clip = 1.0;
  long total_env_steps = 2000000;
  int eval_every_updates = 10;
  int eval_episodes = 64;
  double stop_at_success = 2.0;  // early stop disabled when > 1
  int num_checkpoints = 50;
  int threads = 2;
  std::uint64_t seed = 0;
  bool verbose = false;
};

// Trajectories for one update: [t * N + i] layout.
struct RolloutBuffer {
  int T = 0, N = 0, input_dim = 0, logits_dim = 0;
  std::vector<double> inputs;      // T*N*input_dim
  std::vector<ActionIndex> actions;
  std::vector<double> logp;
  std::vector<double> value;
  std::vector<double> reward;
  std::vector<std::uint8_t> done;     // episode ended at this step
  std::vector<std::uint8_t> timeout;  // ...by reaching the horizon
  std::vector<double> bootstrap;      // V(terminal obs) for timeout steps, else 0
  std::vector<double> old_logits;     // T*N*logits_dim
  Hidden policy_h0, value_h0;         // snapshots at rollout start
  std::vector<double> tail_input;     // N*input_dim, observation after the last step
  Hidden value_hidden_end;            // value-net hidden before consuming tail_input
  std::vector<double> tail_value;     // filled by compute_gae (or preset when tail_input empty)
  std::vector<double> advantage;      // outputs
  std::vector<double> returns;

  void resize(int steps, int envs, int in_dim, int logits);
  size_t idx(int t, int i) const { return static_cast<size_t>(t) * N + i; }
};

// Standard GAE over the buffer. Episodes that ended by timeout bootstrap
// with the stored value of their final observation; other terminals
// bootstrap with zero; the rollout tail bootstraps with V(tail_input).
// Advantages are left unnormalized here.
void compute_gae(RolloutBuffer& buffer, const PolicyNet& value_net, double gamma, double lambda);

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_kl = 0.0;
  double grad_norm = 0.0;
  // mean |ratio - 1| on the first minibatch, before any update; a replay
  // that disagrees with the rollout shows up here as a nonzero value
  double first_ratio_dev = 0.0;
  bool aborted = false;  // non-finite loss; parameters untouched
};

// Clipped-surrogate update over whole stored sequences with replayed hidden
// states; advantages normalized per update batch.
PpoStats ppo_update(PolicyNet& policy, PolicyNet& value, RolloutBuffer& buffer,
                    const PpoConfig& cfg, ad::AdamState& adam_policy,
                    ad::AdamState& adam_value, double lr, Rng& shuffle_rng);

// KL-adaptive learning-rate rule: above 2x target shrink, below target/2
// grow, always inside [lr_min, lr_max].
double kl_lr_update(double lr, double observed_kl, const PpoConfig& cfg);

// ----- environment bank ----- //

enum class PolicyMode { kPrivileged, kEndToEnd, kEstimatorState, kEstimatorStateUnc };

int policy_input_dim(PolicyMode mode);

struct VecEnvConfig {
  EpisodeConfig episode;
  NoiseParams noise;
  OcclusionScenario scenario = OcclusionScenario::standard();
  PolicyMode mode = PolicyMode::kPrivileged;
  int mc_passes = 20;
  bool mc_dropout = true;
};

// N independent episodes with per-env seeded streams; builds policy inputs
// according to the mode (running the frozen estimator in the loop for the
// estimator modes).
class VecEnv {
 public:
  VecEnv(const VecEnvConfig& cfg, const GeometrySpec& geom, const EstimatorNet* estimator,
         int num_envs, std::uint64_t seed);

  int num_envs() const { return static_cast<int>(envs_.size()); }
  int input_dim() const { return input_dim_; }
  const std::vector<double>& input(int i) const { return inputs_[i]; }

  struct StepInfo {
    double reward = 0.0;
    bool done = false;
    bool timeout = false;
    Outcome outcome = Outcome::kRunning;
  };
  // Steps env i and refreshes its input; on termination records the outcome,
  // exposes the terminal observation input, and starts a fresh episode.
  StepInfo step(int i, ActionIndex a);
  const std::vector<double>& terminal_input(int i) const { return terminal_inputs_[i]; }

  // completed-episode statistics (rolling window over recent episodes)
  double rolling_success(int window = 200) const;
  double rolling_outcome_rate(Outcome o, int window = 200) const;
  long episodes_completed() const;
  const EnvState& state(int i) const { return envs_[i]; }

 private:
  void observe_and_build_input(int i);
  void reset_env(int i);

  VecEnvConfig cfg_;
  GeometrySpec geom_;
  const EstimatorNet* estimator_;
  int input_dim_;
  std::vector<EnvState> envs_;
  std::vector<EpisodeNoise> noise_;
  std::vector<OcclusionState> occl_;
  std::vector<std::unique_ptr<McEstimator>> mc_;
  std::vector<Rng> env_rng_, obs_rng_, est_rng_;
  std::vector<std::vector<double>> inputs_, terminal_inputs_;
  std::vector<std::vector<Outcome>> outcomes_by_env_;
};

// ----- training loops ----- //

struct TrainLogRow {
  int update = 0;
  long env_steps = 0;
  double rolling_success = 0.0;
  double rolling_violation = 0.0;
  double eval_success = -1.0;  // -1 when no eval ran this update
  double mean_reward = 0.0;
  double kl = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<std::string> checkpoint_paths;  // uniformly spaced, [0] untrained
  std::vector<TrainLogRow> log;
  double final_eval_success = 0.0;
  long env_steps = 0;
};

// Shared PPO driver. When out_dir is non-empty, writes checkpoints
// (checkpoint_###.ppck) and curves.csv there.
TrainResult train_policy_loop(const VecEnvConfig& env_cfg, const PpoConfig& ppo,
                              const GeometrySpec& geom, const EstimatorNet* estimator,
                              const std::string& out_dir);

// Privileged policy on the clean full state; saves uniformly spaced
// checkpoints including the untrained policy.
TrainResult train_priv(const EpisodeConfig& episode, const PpoConfig& ppo,
                       const GeometrySpec& geom, const std::string& out_dir);

// Policy with the frozen estimator in the loop, with or without the
// uncertainty input.
TrainResult train_with_estimator(const EstimatorNet& estimator, bool with_uncertainty,
                                 const EpisodeConfig& episode, const NoiseParams& noise,
                                 const PpoConfig& ppo, const GeometrySpec& geom,
                                 const std::string& out_dir, int mc_passes = 20,
                                 bool mc_dropout = true);

// Raw-observation PPO baseline in the occluded environment.
TrainResult train_end_to_end(const EpisodeConfig& episode, const NoiseParams& noise,
                             const PpoConfig& ppo, const GeometrySpec& geom,
                             const std::string& out_dir);

// Runs `episodes` fresh episodes (sampled actions) and returns the success
// fraction. Throws on episodes <= 0.
double evaluate_policy(const PolicyNet& policy, const VecEnvConfig& env_cfg,
                       const GeometrySpec& geom, const EstimatorNet* estimator, int episodes,
                       std::uint64_t seed, int threads = 1);

}  // namespace planarpush

#endif  // PLANARPUSH_RL_H_
