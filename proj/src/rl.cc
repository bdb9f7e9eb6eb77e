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

#include "planarpush/rl.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "planarpush/parallel.h"

namespace planarpush {

namespace {

std::map<std::string, std::string> policy_meta(const PolicyNet& net) {
  return {{"kind", "policy"},
          {"input_dim", std::to_string(net.cfg.input_dim)},
          {"dense1", std::to_string(net.cfg.dense1)},
          {"lstm_size", std::to_string(net.cfg.lstm_size)},
          {"dense2", std::to_string(net.cfg.dense2)},
          {"bins", std::to_string(net.cfg.bins)},
          {"head_dim", std::to_string(net.head_dim)}};
}

PolicyNet make_net(const PolicyConfig& cfg, int head_dim, Rng& rng) {
  PolicyNet net;
  net.cfg = cfg;
  net.head_dim = head_dim;
  net.fc1 = ad::add_linear(net.params, "fc1", cfg.input_dim, cfg.dense1, rng);
  net.lstm = ad::add_lstm(net.params, "lstm", cfg.dense1, cfg.lstm_size, rng);
  net.fc2 = ad::add_linear(net.params, "fc2", cfg.lstm_size, cfg.dense2, rng);
  net.head = ad::add_linear(net.params, "head", cfg.dense2, head_dim, rng);
  return net;
}

// Batched plain forward of one control step; updates the hidden state.
ad::Tensor forward_step(const PolicyNet& net, const ad::Tensor& x, Hidden& hidden) {
  const auto& P = net.params.values;
  ad::Tensor z = ad::plain_tanh(ad::plain_linear(x, P[net.fc1.w], P[net.fc1.b]));
  ad::plain_lstm_step(z, hidden.h, hidden.c, P[net.lstm.wx], P[net.lstm.wh], P[net.lstm.b]);
  z = ad::plain_tanh(ad::plain_linear(hidden.h, P[net.fc2.w], P[net.fc2.b]));
  return ad::plain_linear(z, P[net.head.w], P[net.head.b]);
}

struct AxisSample {
  int index = 0;
  double logp = 0.0;
  double entropy = 0.0;
};

// Samples one categorical axis from a row of log-probabilities.
AxisSample sample_axis(const double* logp, int bins, Rng& rng) {
  AxisSample s;
  std::vector<double> p(bins);
  for (int k = 0; k < bins; ++k) p[k] = std::exp(logp[k]);
  s.index = rng.categorical(p.data(), bins);
  s.logp = logp[s.index];
  for (int k = 0; k < bins; ++k) s.entropy -= p[k] * logp[k];
  return s;
}

double axis_logp(const double* logp, int index) { return logp[index]; }

}  // namespace

PolicyNet make_policy(const PolicyConfig& cfg, Rng& rng) {
  return make_net(cfg, 2 * cfg.bins, rng);
}

PolicyNet make_value(const PolicyConfig& cfg, Rng& rng) { return make_net(cfg, 1, rng); }

void save_policy(const PolicyNet& net, const std::map<std::string, std::string>& extra_meta,
                 const std::string& path) {
  std::map<std::string, std::string> meta = policy_meta(net);
  meta.insert(extra_meta.begin(), extra_meta.end());
  ad::save_checkpoint(net.params, meta, path);
}

PolicyNet load_policy(const std::string& path) {
  auto [params, meta] = ad::load_checkpoint(path);
  if (meta.at("kind") != "policy")
    throw std::runtime_error("load_policy: checkpoint is not a policy: " + path);
  PolicyConfig cfg;
  cfg.input_dim = std::stoi(meta.at("input_dim"));
  cfg.dense1 = std::stoi(meta.at("dense1"));
  cfg.lstm_size = std::stoi(meta.at("lstm_size"));
  cfg.dense2 = std::stoi(meta.at("dense2"));
  cfg.bins = std::stoi(meta.at("bins"));
  Rng dummy(0);
  PolicyNet net = make_net(cfg, std::stoi(meta.at("head_dim")), dummy);
  if (params.total_size() != net.params.total_size())
    throw std::runtime_error("load_policy: parameter size mismatch in " + path);
  net.params = std::move(params);
  net.fc1.w = net.params.find("fc1.w");
  net.fc1.b = net.params.find("fc1.b");
  net.lstm.wx = net.params.find("lstm.wx");
  net.lstm.wh = net.params.find("lstm.wh");
  net.lstm.b = net.params.find("lstm.b");
  net.fc2.w = net.params.find("fc2.w");
  net.fc2.b = net.params.find("fc2.b");
  net.head.w = net.params.find("head.w");
  net.head.b = net.params.find("head.b");
  return net;
}

void Hidden::zero_row(int r) {
  for (int k = 0; k < h.cols; ++k) {
    h.at(r, k) = 0.0;
    c.at(r, k) = 0.0;
  }
}

ActResult act(const PolicyNet& policy, const std::vector<double>& input, Hidden& hidden,
              Rng& rng) {
  if (static_cast<int>(input.size()) != policy.cfg.input_dim)
    throw std::invalid_argument("act: input dimension mismatch");
  ad::Tensor x(1, policy.cfg.input_dim);
  x.data = input;
  const ad::Tensor logits = forward_step(policy, x, hidden);
  const ad::Tensor logp = ad::plain_log_softmax_two_axis(logits, policy.cfg.bins);
  const AxisSample ax = sample_axis(logp.data.data(), policy.cfg.bins, rng);
  const AxisSample ay = sample_axis(logp.data.data() + policy.cfg.bins, policy.cfg.bins, rng);
  ActResult r;
  r.action = {ax.index, ay.index};
  r.logp = ax.logp + ay.logp;
  r.entropy = ax.entropy + ay.entropy;
  return r;
}

double evaluate_logp(const PolicyNet& policy, const std::vector<double>& input, Hidden& hidden,
                     ActionIndex a) {
  ad::Tensor x(1, policy.cfg.input_dim);
  x.data = input;
  const ad::Tensor logits = forward_step(policy, x, hidden);
  const ad::Tensor logp = ad::plain_log_softmax_two_axis(logits, policy.cfg.bins);
  return axis_logp(logp.data.data(), a.ix) + axis_logp(logp.data.data() + policy.cfg.bins, a.iy);
}

void RolloutBuffer::resize(int steps, int envs, int in_dim, int logits) {
  T = steps;
  N = envs;
  input_dim = in_dim;
  logits_dim = logits;
  const size_t tn = static_cast<size_t>(T) * N;
  inputs.assign(tn * in_dim, 0.0);
  actions.assign(tn, {});
  logp.assign(tn, 0.0);
  value.assign(tn, 0.0);
  reward.assign(tn, 0.0);
  done.assign(tn, 0);
  timeout.assign(tn, 0);
  bootstrap.assign(tn, 0.0);
  old_logits.assign(tn * logits, 0.0);
  tail_input.assign(static_cast<size_t>(N) * in_dim, 0.0);
  tail_value.assign(N, 0.0);
  advantage.assign(tn, 0.0);
  returns.assign(tn, 0.0);
}

void compute_gae(RolloutBuffer& b, const PolicyNet& value_net, double gamma, double lambda) {
  if (!b.tail_input.empty()) {
    ad::Tensor x(b.N, b.input_dim);
    x.data = b.tail_input;
    Hidden h = b.value_hidden_end;
    const ad::Tensor v = forward_step(value_net, x, h);
    for (int i = 0; i < b.N; ++i) b.tail_value[i] = v.at(i, 0);
  }
  std::vector<double> next_adv(b.N, 0.0);
  for (int t = b.T - 1; t >= 0; --t) {
    for (int i = 0; i < b.N; ++i) {
      const size_t k = b.idx(t, i);
      const bool terminal = b.done[k] != 0;
      const double nonterminal = terminal ? 0.0 : 1.0;
      double next_value;
      if (terminal) {
        // timeout episodes bootstrap with the value of the final observation
        next_value = b.timeout[k] != 0 ? b.bootstrap[k] : 0.0;
      } else {
        next_value = t == b.T - 1 ? b.tail_value[i] : b.value[b.idx(t + 1, i)];
      }
      const double delta = b.reward[k] + gamma * next_value - b.value[k];
      const double adv = delta + gamma * lambda * nonterminal * next_adv[i];
      b.advantage[k] = adv;
      b.returns[k] = adv + b.value[k];
      next_adv[i] = adv;
    }
  }
}

double kl_lr_update(double lr, double observed_kl, const PpoConfig& cfg) {
  if (observed_kl > 2.0 * cfg.kl_target) {
    lr = std::max(lr / 1.5, cfg.lr_min);
  } else if (observed_kl < cfg.kl_target / 2.0) {
    lr = std::min(lr * 1.5, cfg.lr_max);
  }
  return std::min(cfg.lr_max, std::max(cfg.lr_min, lr));
}

// ----- ppo update ----- //

namespace {

struct ChunkResult {
  std::vector<ad::Tensor> policy_grads, value_grads;
  double surr_sum = 0.0, vloss_sum = 0.0, ent_sum = 0.0, kl_sum = 0.0;
  double ratio_dev_sum = 0.0;
  long count = 0;
  bool finite = true;
};

struct NetRefs {
  ad::Ref w1, b1, wx, wh, lb, w2, b2, hw, hb;
  std::vector<ad::Ref> all() const { return {w1, b1, wx, wh, lb, w2, b2, hw, hb}; }
};

NetRefs leaf_net(ad::Tape& t, const PolicyNet& net) {
  const auto& P = net.params.values;
  NetRefs r;
  r.w1 = t.leaf(P[net.fc1.w]);
  r.b1 = t.leaf(P[net.fc1.b]);
  r.wx = t.leaf(P[net.lstm.wx]);
  r.wh = t.leaf(P[net.lstm.wh]);
  r.lb = t.leaf(P[net.lstm.b]);
  r.w2 = t.leaf(P[net.fc2.w]);
  r.b2 = t.leaf(P[net.fc2.b]);
  r.hw = t.leaf(P[net.head.w]);
  r.hb = t.leaf(P[net.head.b]);
  return r;
}

// Taped recurrent forward of one step.
ad::Ref taped_step(ad::Tape& t, const NetRefs& n, ad::Ref x, ad::LstmState& s, int hidden) {
  ad::Ref z = t.tanh_(ad::linear_forward(t, x, n.w1, n.b1));
  s = ad::lstm_step(t, z, s, n.wx, n.wh, n.lb, hidden);
  z = t.tanh_(ad::linear_forward(t, s.h, n.w2, n.b2));
  return ad::linear_forward(t, z, n.hw, n.hb);
}

// Exact KL(old || new) summed over both axes for every row.
double exact_kl_sum(const double* old_logits, const ad::Tensor& new_logits, int bins) {
  double acc = 0.0;
  for (int r = 0; r < new_logits.rows; ++r) {
    for (int axis = 0; axis < 2; ++axis) {
      const double* zo = old_logits + static_cast<size_t>(r) * 2 * bins + axis * bins;
      // stable log-softmax of both rows
      double mo = zo[0], mn = new_logits.at(r, axis * bins);
      for (int k = 1; k < bins; ++k) {
        mo = std::max(mo, zo[k]);
        mn = std::max(mn, new_logits.at(r, axis * bins + k));
      }
      double so = 0.0, sn = 0.0;
      for (int k = 0; k < bins; ++k) {
        so += std::exp(zo[k] - mo);
        sn += std::exp(new_logits.at(r, axis * bins + k) - mn);
      }
      const double lso = mo + std::log(so), lsn = mn + std::log(sn);
      for (int k = 0; k < bins; ++k) {
        const double lpo = zo[k] - lso;
        const double lpn = new_logits.at(r, axis * bins + k) - lsn;
        acc += std::exp(lpo) * (lpo - lpn);
      }
    }
  }
  return acc;
}

ChunkResult run_ppo_chunk(const PolicyNet& policy, const PolicyNet& value,
                          const RolloutBuffer& b, const std::vector<int>& envs,
                          const std::vector<double>& norm_adv, const PpoConfig& cfg) {
  const int B = static_cast<int>(envs.size());
  const int bins = policy.cfg.bins;
  ChunkResult out;
  ad::Tape tape;
  const NetRefs pn = leaf_net(tape, policy);
  const NetRefs vn = leaf_net(tape, value);

  auto rows_hidden = [&](const Hidden& h0) {
    ad::Tensor h(B, h0.h.cols), c(B, h0.c.cols);
    for (int r = 0; r < B; ++r)
      for (int k = 0; k < h0.h.cols; ++k) {
        h.at(r, k) = h0.h.at(envs[r], k);
        c.at(r, k) = h0.c.at(envs[r], k);
      }
    return ad::LstmState{tape.leaf(std::move(h)), tape.leaf(std::move(c))};
  };
  ad::LstmState ps = rows_hidden(b.policy_h0);
  ad::LstmState vs = rows_hidden(b.value_h0);

  ad::Ref surr = tape.leaf(ad::Tensor::scalar(0.0));
  ad::Ref vloss = tape.leaf(ad::Tensor::scalar(0.0));
  ad::Ref ent = tape.leaf(ad::Tensor::scalar(0.0));

  for (int t = 0; t < b.T; ++t) {
    if (t > 0) {
      // episodes that ended on the previous step restart with zero hidden
      ad::Tensor keep(B, 1);
      for (int r = 0; r < B; ++r) keep.at(r, 0) = b.done[b.idx(t - 1, envs[r])] ? 0.0 : 1.0;
      const ad::Ref keep_ref = tape.leaf(std::move(keep));
      ps.h = tape.mul_colvec(ps.h, keep_ref);
      ps.c = tape.mul_colvec(ps.c, keep_ref);
      vs.h = tape.mul_colvec(vs.h, keep_ref);
      vs.c = tape.mul_colvec(vs.c, keep_ref);
    }

    ad::Tensor x(B, b.input_dim);
    ad::Tensor adv(B, 1), ret(B, 1), old_lp(B, 1);
    std::vector<int> ix(B), iy(B);
    for (int r = 0; r < B; ++r) {
      const size_t k = b.idx(t, envs[r]);
      std::copy(b.inputs.begin() + k * b.input_dim, b.inputs.begin() + (k + 1) * b.input_dim,
                x.data.begin() + static_cast<size_t>(r) * b.input_dim);
      adv.at(r, 0) = norm_adv[k];
      ret.at(r, 0) = b.returns[k];
      old_lp.at(r, 0) = b.logp[k];
      ix[r] = b.actions[k].ix;
      iy[r] = b.actions[k].iy;
    }
    const ad::Ref xr = tape.leaf(std::move(x));

    const ad::Ref logits = taped_step(tape, pn, xr, ps, policy.cfg.lstm_size);
    const ad::Ref v = taped_step(tape, vn, xr, vs, value.cfg.lstm_size);

    const ad::Ref lax = tape.categorical_logprob(tape.slice_cols(logits, 0, bins), ix);
    const ad::Ref lay = tape.categorical_logprob(tape.slice_cols(logits, bins, bins), iy);
    const ad::Ref logp_new = tape.add(lax, lay);
    const ad::Ref ratio = tape.exp_(tape.sub(logp_new, tape.leaf(std::move(old_lp))));
    for (const double rv : tape.val(ratio).data) out.ratio_dev_sum += std::abs(rv - 1.0);
    const ad::Ref adv_ref = tape.leaf(std::move(adv));
    const ad::Ref unclipped = tape.mul(ratio, adv_ref);
    const ad::Ref clipped = tape.mul(tape.clamp_(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv_ref);
    surr = tape.add(surr, tape.sum(tape.minimum(unclipped, clipped)));

    const ad::Ref verr = tape.sub(v, tape.leaf(std::move(ret)));
    vloss = tape.add(vloss, tape.sum(tape.mul(verr, verr)));

    const ad::Ref hx = tape.categorical_entropy(tape.slice_cols(logits, 0, bins));
    const ad::Ref hy = tape.categorical_entropy(tape.slice_cols(logits, bins, bins));
    ent = tape.add(ent, tape.sum(tape.add(hx, hy)));

    // exact KL against the behavior logits, from values only
    {
      ad::Tensor gathered(B, 2 * bins);
      for (int r = 0; r < B; ++r) {
        const size_t k = b.idx(t, envs[r]);
        for (int c2 = 0; c2 < 2 * bins; ++c2)
          gathered.at(r, c2) = b.old_logits[k * b.logits_dim + c2];
      }
      out.kl_sum += exact_kl_sum(gathered.data.data(), tape.val(logits), bins);
    }
    out.count += B;
  }

  // root = -surr + 0.5*vf*vloss - ent_coef*ent  (scaled later by 1/(T*B_total))
  const ad::Ref root =
      tape.add(tape.add(tape.scale(surr, -1.0), tape.scale(vloss, 0.5 * cfg.value_coef)),
               tape.scale(ent, -cfg.entropy_coef));
  out.surr_sum = tape.val(surr).data[0];
  out.vloss_sum = tape.val(vloss).data[0];
  out.ent_sum = tape.val(ent).data[0];
  if (!std::isfinite(tape.val(root).data[0])) {
    out.finite = false;
    return out;
  }
  tape.backward(root);
  for (const ad::Ref r : pn.all()) out.policy_grads.push_back(tape.grad(r));
  for (const ad::Ref r : vn.all()) out.value_grads.push_back(tape.grad(r));
  return out;
}

}  // namespace

PpoStats ppo_update(PolicyNet& policy, PolicyNet& value, RolloutBuffer& b, const PpoConfig& cfg,
                    ad::AdamState& adam_policy, ad::AdamState& adam_value, double lr,
                    Rng& shuffle_rng) {
  PpoStats stats;
  const size_t tn = static_cast<size_t>(b.T) * b.N;

  // advantages normalized once per update batch
  double mean = 0.0;
  for (const double a : b.advantage) mean += a;
  mean /= static_cast<double>(tn);
  double var = 0.0;
  for (const double a : b.advantage) var += (a - mean) * (a - mean);
  var /= static_cast<double>(tn);
  const double inv_std = 1.0 / (std::sqrt(var) + 1e-8);
  std::vector<double> norm_adv(tn);
  for (size_t k = 0; k < tn; ++k) norm_adv[k] = (b.advantage[k] - mean) * inv_std;

  adam_policy.lr = lr;
  adam_value.lr = lr;

  std::vector<int> env_order(b.N);
  std::iota(env_order.begin(), env_order.end(), 0);
  double kl_acc = 0.0;
  long kl_count = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = b.N - 1; i > 0; --i)
      std::swap(env_order[i], env_order[shuffle_rng.uniform_int(i + 1)]);

    for (int start = 0; start < b.N; start += cfg.minibatch_envs) {
      const int mb = std::min(cfg.minibatch_envs, b.N - start);
      // fixed sub-chunks so the reduction order is thread-count independent
      const int chunks = std::min(cfg.threads, mb);
      const int per = (mb + chunks - 1) / chunks;
      std::vector<ChunkResult> parts(chunks);
      parallel_for(chunks, cfg.threads, [&](int ci) {
        const int lo = start + ci * per;
        const int hi = std::min(start + mb, lo + per);
        if (lo >= hi) return;
        std::vector<int> envs(env_order.begin() + lo, env_order.begin() + hi);
        parts[ci] = run_ppo_chunk(policy, value, b, envs, norm_adv, cfg);
      });

      std::vector<ad::Tensor> pg = ad::zero_grads_like(policy.params);
      std::vector<ad::Tensor> vg = ad::zero_grads_like(value.params);
      double surr = 0.0, vloss = 0.0, ent = 0.0;
      long count = 0;
      bool finite = true;
      double ratio_dev = 0.0;
      for (const ChunkResult& p : parts) {
        if (p.count == 0) continue;
        if (!p.finite) finite = false;
        if (!p.policy_grads.empty()) {
          ad::accumulate_grads(pg, p.policy_grads);
          ad::accumulate_grads(vg, p.value_grads);
        }
        surr += p.surr_sum;
        vloss += p.vloss_sum;
        ent += p.ent_sum;
        kl_acc += p.kl_sum;
        ratio_dev += p.ratio_dev_sum;
        count += p.count;
        kl_count += p.count;
      }
      if (epoch == 0 && start == 0 && count > 0)
        stats.first_ratio_dev = ratio_dev / static_cast<double>(count);
      if (!finite) {
        stats.aborted = true;
        return stats;
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto* grads : {&pg, &vg})
        for (ad::Tensor& g : *grads)
          for (double& v : g.data) v *= inv;
      double sq = 0.0;
      for (const auto* grads : {&pg, &vg})
        for (const ad::Tensor& g : *grads)
          for (const double v : g.data) sq += v * v;
      stats.grad_norm = std::sqrt(sq);
      if (stats.grad_norm > cfg.grad_clip && stats.grad_norm > 0.0) {
        const double s = cfg.grad_clip / stats.grad_norm;
        for (auto* grads : {&pg, &vg})
          for (ad::Tensor& g : *grads)
            for (double& v : g.data) v *= s;
      }
      ad::adam_step(policy.params, pg, adam_policy);
      ad::adam_step(value.params, vg, adam_value);

      stats.policy_loss = -surr * inv;
      stats.value_loss = 0.5 * vloss * inv;
      stats.entropy = ent * inv;
    }
  }
  // joint KL of the factored two-axis categorical = sum of the axis KLs
  stats.mean_kl = kl_count > 0 ? kl_acc / static_cast<double>(kl_count) : 0.0;
  return stats;
}

// ----- environment bank ----- //

int policy_input_dim(PolicyMode mode) {
  return mode == PolicyMode::kEstimatorStateUnc ? kPolicyInputDim + 4 : kPolicyInputDim;
}

VecEnv::VecEnv(const VecEnvConfig& cfg, const GeometrySpec& geom, const EstimatorNet* estimator,
               int num_envs, std::uint64_t seed)
    : cfg_(cfg), geom_(geom), estimator_(estimator), input_dim_(policy_input_dim(cfg.mode)) {
  const bool needs_estimator = cfg.mode == PolicyMode::kEstimatorState ||
                               cfg.mode == PolicyMode::kEstimatorStateUnc;
  if (needs_estimator && estimator_ == nullptr)
    throw std::invalid_argument("VecEnv: estimator mode without an estimator");
  envs_.resize(num_envs);
  noise_.resize(num_envs);
  occl_.resize(num_envs);
  inputs_.assign(num_envs, std::vector<double>(input_dim_, 0.0));
  terminal_inputs_.assign(num_envs, std::vector<double>(input_dim_, 0.0));
  outcomes_by_env_.resize(num_envs);
  for (int i = 0; i < num_envs; ++i) {
    env_rng_.emplace_back(derive_seed(seed, 0x100000ull + i));
    obs_rng_.emplace_back(derive_seed(seed, 0x200000ull + i));
    est_rng_.emplace_back(derive_seed(seed, 0x300000ull + i));
    if (needs_estimator)
      mc_.push_back(std::make_unique<McEstimator>(estimator_, cfg.mc_passes, cfg.mc_dropout));
    else
      mc_.push_back(nullptr);
  }
  for (int i = 0; i < num_envs; ++i) reset_env(i);
}

void VecEnv::reset_env(int i) {
  envs_[i] = reset(env_rng_[i], cfg_.episode, geom_);
  noise_[i] = init_episode_noise(obs_rng_[i], cfg_.noise);
  occl_[i] = OcclusionState{};
  if (mc_[i]) mc_[i]->reset(est_rng_[i]);
  observe_and_build_input(i);
}

void VecEnv::observe_and_build_input(int i) {
  if (cfg_.mode == PolicyMode::kPrivileged) {
    const ScaledObservation so = scaled_true_state(envs_[i], geom_);
    const auto in = policy_input(so, envs_[i].target, geom_);
    std::copy(in.begin(), in.end(), inputs_[i].begin());
    return;
  }
  auto [obs, next_occl] = observe(envs_[i].world, noise_[i], occl_[i], obs_rng_[i], cfg_.noise,
                                  cfg_.episode.dt, cfg_.scenario);
  occl_[i] = next_occl;
  ScaledObservation so = scale_observation(obs, geom_);
  if (mc_[i]) {
    const auto [mean, unc] = mc_[i]->step(so);
    for (int d = 0; d < 4; ++d) so[d] = mean[d];
    const auto in = policy_input(so, envs_[i].target, geom_);
    std::copy(in.begin(), in.end(), inputs_[i].begin());
    if (cfg_.mode == PolicyMode::kEstimatorStateUnc) {
      for (int d = 0; d < 4; ++d) {
        const double sd = std::sqrt(std::max(0.0, unc.sigma_total[d]));
        inputs_[i][kPolicyInputDim + d] = std::min(1.0, std::max(0.0, sd));
      }
    }
  } else {
    const auto in = policy_input(so, envs_[i].target, geom_);
    std::copy(in.begin(), in.end(), inputs_[i].begin());
  }
}

VecEnv::StepInfo VecEnv::step(int i, ActionIndex a) {
  const StepResult r = step_env(envs_[i], a, cfg_.episode, geom_);
  envs_[i] = r.state;
  StepInfo info;
  info.reward = r.reward;
  info.done = r.done;
  info.timeout = r.outcome == Outcome::kTimeout;
  info.outcome = r.outcome;
  observe_and_build_input(i);
  if (r.done) {
    terminal_inputs_[i] = inputs_[i];
    outcomes_by_env_[i].push_back(r.outcome);
    reset_env(i);
  }
  return info;
}

double VecEnv::rolling_success(int window) const {
  return rolling_outcome_rate(Outcome::kSuccess, window);
}

double VecEnv::rolling_outcome_rate(Outcome o, int window) const {
  const int per_env = std::max(1, window / std::max(1, num_envs()));
  long total = 0, hits = 0;
  for (const auto& v : outcomes_by_env_) {
    const size_t lo = v.size() > static_cast<size_t>(per_env) ? v.size() - per_env : 0;
    for (size_t k = lo; k < v.size(); ++k) {
      ++total;
      if (v[k] == o) ++hits;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

long VecEnv::episodes_completed() const {
  long n = 0;
  for (const auto& v : outcomes_by_env_) n += static_cast<long>(v.size());
  return n;
}

// ----- training ----- //

namespace {

// Collects one rollout into the buffer; returns summed rewards.
double collect_rollout(VecEnv& env, const PolicyNet& policy, const PolicyNet& value,
                       RolloutBuffer& b, Hidden& policy_hidden, Hidden& value_hidden,
                       std::vector<Rng>& action_rng, int threads) {
  const int N = env.num_envs();
  const int bins = policy.cfg.bins;
  b.policy_h0 = policy_hidden;
  b.value_h0 = value_hidden;
  double reward_sum = 0.0;

  for (int t = 0; t < b.T; ++t) {
    ad::Tensor x(N, b.input_dim);
    for (int i = 0; i < N; ++i)
      std::copy(env.input(i).begin(), env.input(i).end(),
                x.data.begin() + static_cast<size_t>(i) * b.input_dim);
    std::copy(x.data.begin(), x.data.end(), b.inputs.begin() + b.idx(t, 0) * b.input_dim);

    const ad::Tensor logits = forward_step(policy, x, policy_hidden);
    const ad::Tensor values = forward_step(value, x, value_hidden);
    const ad::Tensor logp = ad::plain_log_softmax_two_axis(logits, bins);

    std::copy(logits.data.begin(), logits.data.end(),
              b.old_logits.begin() + b.idx(t, 0) * b.logits_dim);

    std::vector<ActionIndex> acts(N);
    for (int i = 0; i < N; ++i) {
      const double* row = logp.data.data() + static_cast<size_t>(i) * 2 * bins;
      const AxisSample ax = sample_axis(row, bins, action_rng[i]);
      const AxisSample ay = sample_axis(row + bins, bins, action_rng[i]);
      acts[i] = {ax.index, ay.index};
      const size_t k = b.idx(t, i);
      b.actions[k] = acts[i];
      b.logp[k] = ax.logp + ay.logp;
      b.value[k] = values.at(i, 0);
    }

    std::vector<VecEnv::StepInfo> infos(N);
    parallel_for(N, threads, [&](int i) { infos[i] = env.step(i, acts[i]); });

    for (int i = 0; i < N; ++i) {
      const size_t k = b.idx(t, i);
      b.reward[k] = infos[i].reward;
      reward_sum += infos[i].reward;
      b.done[k] = infos[i].done ? 1 : 0;
      b.timeout[k] = infos[i].timeout ? 1 : 0;
      if (infos[i].timeout) {
        // value of the final observation, one extra step on a hidden copy
        ad::Tensor xt(1, b.input_dim);
        xt.data = env.terminal_input(i);
        Hidden h(1, value.cfg.lstm_size);
        for (int c = 0; c < value.cfg.lstm_size; ++c) {
          h.h.at(0, c) = value_hidden.h.at(i, c);
          h.c.at(0, c) = value_hidden.c.at(i, c);
        }
        const ad::Tensor v = forward_step(value, xt, h);
        b.bootstrap[k] = v.at(0, 0);
      }
      if (infos[i].done) {
        policy_hidden.zero_row(i);
        value_hidden.zero_row(i);
      }
    }
  }

  b.value_hidden_end = value_hidden;
  for (int i = 0; i < N; ++i)
    std::copy(env.input(i).begin(), env.input(i).end(),
              b.tail_input.begin() + static_cast<size_t>(i) * b.input_dim);
  return reward_sum;
}

}  // namespace

double evaluate_policy(const PolicyNet& policy, const VecEnvConfig& env_cfg,
                       const GeometrySpec& geom, const EstimatorNet* estimator, int episodes,
                       std::uint64_t seed, int threads) {
  if (episodes <= 0) throw std::invalid_argument("evaluate_policy: episodes must be positive");
  VecEnv env(env_cfg, geom, estimator, episodes, seed);
  const int N = episodes;
  Hidden hidden(N, policy.cfg.lstm_size);
  std::vector<Rng> rng;
  for (int i = 0; i < N; ++i) rng.emplace_back(derive_seed(seed, 0x400000ull + i));
  std::vector<std::uint8_t> finished(N, 0);
  std::vector<Outcome> first_outcome(N, Outcome::kRunning);

  const int bins = policy.cfg.bins;
  for (int step = 0; step < env_cfg.episode.horizon; ++step) {
    ad::Tensor x(N, env.input_dim());
    for (int i = 0; i < N; ++i)
      std::copy(env.input(i).begin(), env.input(i).end(),
                x.data.begin() + static_cast<size_t>(i) * env.input_dim());
    const ad::Tensor logits = forward_step(policy, x, hidden);
    const ad::Tensor logp = ad::plain_log_softmax_two_axis(logits, bins);
    std::vector<ActionIndex> acts(N);
    for (int i = 0; i < N; ++i) {
      if (finished[i]) continue;
      const double* row = logp.data.data() + static_cast<size_t>(i) * 2 * bins;
      acts[i] = {sample_axis(row, bins, rng[i]).index,
                 sample_axis(row + bins, bins, rng[i]).index};
    }
    std::vector<VecEnv::StepInfo> infos(N);
    parallel_for(N, threads, [&](int i) {
      if (finished[i]) return;
      infos[i] = env.step(i, acts[i]);
    });
    bool all_done = true;
    for (int i = 0; i < N; ++i) {
      if (finished[i]) continue;
      if (infos[i].done) {
        finished[i] = 1;
        first_outcome[i] = infos[i].outcome;
      } else {
        all_done = false;
      }
    }
    if (all_done) break;
  }
  long success = 0;
  for (int i = 0; i < N; ++i)
    if (first_outcome[i] == Outcome::kSuccess) ++success;
  return static_cast<double>(success) / static_cast<double>(N);
}

TrainResult train_policy_loop(const VecEnvConfig& env_cfg, const PpoConfig& ppo,
                              const GeometrySpec& geom, const EstimatorNet* estimator,
                              const std::string& out_dir) {
  TrainResult result;
  Rng init_rng(derive_seed(ppo.seed, 0x11));
  PolicyConfig pc;
  pc.input_dim = policy_input_dim(env_cfg.mode);
  PolicyNet policy = make_policy(pc, init_rng);
  PolicyNet value = make_value(pc, init_rng);

  VecEnv env(env_cfg, geom, estimator, ppo.num_envs, derive_seed(ppo.seed, 0x22));
  Hidden policy_hidden(ppo.num_envs, pc.lstm_size);
  Hidden value_hidden(ppo.num_envs, pc.lstm_size);
  std::vector<Rng> action_rng;
  for (int i = 0; i < ppo.num_envs; ++i)
    action_rng.emplace_back(derive_seed(ppo.seed, 0x500000ull + i));
  Rng shuffle_rng(derive_seed(ppo.seed, 0x33));

  RolloutBuffer buffer;
  buffer.resize(ppo.rollout_steps, ppo.num_envs, env.input_dim(), 2 * pc.bins);

  ad::AdamState adam_policy, adam_value;
  double lr = ppo.lr_init;

  const long steps_per_update = static_cast<long>(ppo.rollout_steps) * ppo.num_envs;
  const int total_updates =
      static_cast<int>((ppo.total_env_steps + steps_per_update - 1) / steps_per_update);
  const int save_every = std::max(1, total_updates / std::max(1, ppo.num_checkpoints));

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  std::ofstream curves;
  if (!out_dir.empty()) {
    curves.open(out_dir + "/curves.csv");
    curves << "update,env_steps,rolling_success,rolling_violation,eval_success,mean_reward,kl,lr\n";
  }

  auto save_ckpt = [&](int update, long env_steps) {
    if (out_dir.empty()) return;
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_%04d.ppck",
                  static_cast<int>(result.checkpoint_paths.size()));
    const std::string path = out_dir + "/" + name;
    save_policy(policy,
                {{"update", std::to_string(update)}, {"env_steps", std::to_string(env_steps)}},
                path);
    result.checkpoint_paths.push_back(path);
  };

  long env_steps = 0;
  save_ckpt(0, 0);  // untrained policy is part of the set
  for (int update = 0; update < total_updates; ++update) {
    const double reward_sum = collect_rollout(env, policy, value, buffer, policy_hidden,
                                              value_hidden, action_rng, ppo.threads);
    env_steps += steps_per_update;
    compute_gae(buffer, value, ppo.gamma, ppo.gae_lambda);
    const PpoStats stats =
        ppo_update(policy, value, buffer, ppo, adam_policy, adam_value, lr, shuffle_rng);
    if (stats.aborted && ppo.verbose)
      std::printf("update %d: non-finite loss, update skipped\n", update);
    lr = kl_lr_update(lr, stats.mean_kl, ppo);

    TrainLogRow row;
    row.update = update + 1;
    row.env_steps = env_steps;
    row.rolling_success = env.rolling_success();
    row.rolling_violation = env.rolling_outcome_rate(Outcome::kBoundaryViolation);
    row.mean_reward = reward_sum / static_cast<double>(steps_per_update);
    row.kl = stats.mean_kl;
    row.lr = lr;

    if ((update + 1) % save_every == 0) save_ckpt(update + 1, env_steps);

    const bool do_eval = ppo.eval_every_updates > 0 &&
                         ((update + 1) % ppo.eval_every_updates == 0 ||
                          update + 1 == total_updates);
    if (do_eval) {
      row.eval_success = evaluate_policy(policy, env_cfg, geom, estimator, ppo.eval_episodes,
                                         derive_seed(ppo.seed, 0x600000ull + update),
                                         ppo.threads);
      result.final_eval_success = row.eval_success;
    }
    result.log.push_back(row);
    if (curves.is_open()) {
      curves << row.update << "," << row.env_steps << "," << row.rolling_success << ","
             << row.rolling_violation << "," << row.eval_success << "," << row.mean_reward
             << "," << row.kl << "," << row.lr << "\n";
      curves.flush();
    }
    if (ppo.verbose)
      std::printf(
          "update %d/%d steps %ld roll %.3f viol %.3f eval %.3f rew %.4f kl %.5f lr %.2e "
          "ent %.3f vloss %.3f rdev %.2e\n",
          update + 1, total_updates, env_steps, row.rolling_success, row.rolling_violation,
          row.eval_success, row.mean_reward, row.kl, lr, stats.entropy, stats.value_loss,
          stats.first_ratio_dev);

    if (row.eval_success >= 0.0 && row.eval_success >= ppo.stop_at_success) break;
  }
  result.env_steps = env_steps;

  // final parameters become the last checkpoint when the cadence missed them
  if (!out_dir.empty()) {
    save_ckpt(total_updates, env_steps);
    save_policy(policy, {{"update", "final"}, {"env_steps", std::to_string(env_steps)}},
                out_dir + "/policy_final.ppck");
  }
  return result;
}

TrainResult train_priv(const EpisodeConfig& episode, const PpoConfig& ppo,
                       const GeometrySpec& geom, const std::string& out_dir) {
  VecEnvConfig cfg;
  cfg.episode = episode;
  cfg.noise = NoiseParams{};
  cfg.noise.force_sigma = cfg.noise.pos_sigma = cfg.noise.rot_sigma = 0.0;
  cfg.noise.occl_start_prob = 0.0;
  cfg.scenario = OcclusionScenario::none();
  cfg.mode = PolicyMode::kPrivileged;
  return train_policy_loop(cfg, ppo, geom, nullptr, out_dir);
}

TrainResult train_with_estimator(const EstimatorNet& estimator, bool with_uncertainty,
                                 const EpisodeConfig& episode, const NoiseParams& noise,
                                 const PpoConfig& ppo, const GeometrySpec& geom,
                                 const std::string& out_dir, int mc_passes, bool mc_dropout) {
  VecEnvConfig cfg;
  cfg.episode = episode;
  cfg.noise = noise;
  cfg.scenario = OcclusionScenario::standard();
  cfg.mode = with_uncertainty ? PolicyMode::kEstimatorStateUnc : PolicyMode::kEstimatorState;
  cfg.mc_passes = mc_passes;
  cfg.mc_dropout = mc_dropout;
  return train_policy_loop(cfg, ppo, geom, &estimator, out_dir);
}

TrainResult train_end_to_end(const EpisodeConfig& episode, const NoiseParams& noise,
                             const PpoConfig& ppo, const GeometrySpec& geom,
                             const std::string& out_dir) {
  VecEnvConfig cfg;
  cfg.episode = episode;
  cfg.noise = noise;
  cfg.scenario = OcclusionScenario::standard();
  cfg.mode = PolicyMode::kEndToEnd;
  return train_policy_loop(cfg, ppo, geom, nullptr, out_dir);
}

}  // namespace planarpush
