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

#include "planarpush/estimator.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "planarpush/parallel.h"

namespace planarpush {

namespace {

std::map<std::string, std::string> estimator_meta(const EstimatorConfig& cfg) {
  return {{"kind", "estimator"},
          {"input_dim", std::to_string(cfg.input_dim)},
          {"lstm_size", std::to_string(cfg.lstm_size)},
          {"dense1", std::to_string(cfg.dense1)},
          {"dense2", std::to_string(cfg.dense2)},
          {"dropout_p", std::to_string(cfg.dropout_p)},
          {"heteroscedastic", cfg.heteroscedastic ? "1" : "0"},
          {"log_var_min", std::to_string(cfg.log_var_min)},
          {"log_var_max", std::to_string(cfg.log_var_max)}};
}

double clamp_lv(const EstimatorConfig& cfg, double lv) {
  return std::min(cfg.log_var_max, std::max(cfg.log_var_min, lv));
}

// One plain forward step for a batch of rows with per-row dropout masks
// (pass nullptr masks for the deterministic path). h and c are B x lstm.
ad::Tensor plain_step(const EstimatorNet& net, const ad::Tensor& x, ad::Tensor& h, ad::Tensor& c,
                      const ad::Tensor* m1, const ad::Tensor* m2, const ad::Tensor* m3) {
  const auto& P = net.params.values;
  ad::plain_lstm_step(x, h, c, P[net.lstm.wx], P[net.lstm.wh], P[net.lstm.b]);
  ad::Tensor z = m1 ? ad::plain_mul(h, *m1) : h;
  z = ad::plain_tanh(ad::plain_linear(z, P[net.fc1.w], P[net.fc1.b]));
  if (m2) z = ad::plain_mul(z, *m2);
  z = ad::plain_tanh(ad::plain_linear(z, P[net.fc2.w], P[net.fc2.b]));
  if (m3) z = ad::plain_mul(z, *m3);
  return ad::plain_linear(z, P[net.head.w], P[net.head.b]);
}

}  // namespace

EstimatorNet make_estimator(const EstimatorConfig& cfg, Rng& rng) {
  EstimatorNet net;
  net.cfg = cfg;
  net.lstm = ad::add_lstm(net.params, "lstm", cfg.input_dim, cfg.lstm_size, rng);
  net.fc1 = ad::add_linear(net.params, "fc1", cfg.lstm_size, cfg.dense1, rng);
  net.fc2 = ad::add_linear(net.params, "fc2", cfg.dense1, cfg.dense2, rng);
  net.head = ad::add_linear(net.params, "head", cfg.dense2, cfg.out_dim(), rng);
  return net;
}

void save_estimator(const EstimatorNet& net, const std::string& path) {
  ad::save_checkpoint(net.params, estimator_meta(net.cfg), path);
}

EstimatorNet load_estimator(const std::string& path) {
  auto [params, meta] = ad::load_checkpoint(path);
  if (meta.at("kind") != "estimator")
    throw std::runtime_error("load_estimator: checkpoint is not an estimator: " + path);
  EstimatorConfig cfg;
  cfg.input_dim = std::stoi(meta.at("input_dim"));
  cfg.lstm_size = std::stoi(meta.at("lstm_size"));
  cfg.dense1 = std::stoi(meta.at("dense1"));
  cfg.dense2 = std::stoi(meta.at("dense2"));
  cfg.dropout_p = std::stod(meta.at("dropout_p"));
  cfg.heteroscedastic = meta.at("heteroscedastic") == "1";
  cfg.log_var_min = std::stod(meta.at("log_var_min"));
  cfg.log_var_max = std::stod(meta.at("log_var_max"));

  Rng dummy(0);
  EstimatorNet net = make_estimator(cfg, dummy);
  if (params.total_size() != net.params.total_size())
    throw std::runtime_error("load_estimator: parameter size mismatch in " + path);
  net.params = std::move(params);
  // restore layer indices by name
  net.lstm.wx = net.params.find("lstm.wx");
  net.lstm.wh = net.params.find("lstm.wh");
  net.lstm.b = net.params.find("lstm.b");
  net.fc1.w = net.params.find("fc1.w");
  net.fc1.b = net.params.find("fc1.b");
  net.fc2.w = net.params.find("fc2.w");
  net.fc2.b = net.params.find("fc2.b");
  net.head.w = net.params.find("head.w");
  net.head.b = net.params.find("head.b");
  return net;
}

double nll_loss(const EstimatorOutput& pred, const std::array<double, 4>& target) {
  double acc = 0.0;
  for (int d = 0; d < 4; ++d) {
    const double e = target[d] - pred.q_hat[d];
    acc += pred.log_var[d] + e * e * std::exp(-pred.log_var[d]);
  }
  return 0.5 * acc;
}

McPrediction mc_predict(const EstimatorNet& net, const std::vector<ScaledObservation>& seq,
                        int M, Rng& rng, McSamples* samples) {
  if (M < 1) throw std::invalid_argument("mc_predict: M must be >= 1");
  const int T = static_cast<int>(seq.size());
  const EstimatorConfig& cfg = net.cfg;

  // dropout off: all passes coincide with the deterministic pass; reuse it so
  // the predictive mean is bit-equal to the single pass
  const bool stochastic = cfg.dropout_p > 0.0;
  const int rows = stochastic ? M : 1;

  ad::Tensor h(rows, cfg.lstm_size), c(rows, cfg.lstm_size);
  ad::Tensor m1, m2, m3;
  const ad::Tensor* pm1 = nullptr;
  const ad::Tensor* pm2 = nullptr;
  const ad::Tensor* pm3 = nullptr;
  if (stochastic) {
    m1 = ad::make_dropout_mask(rows, cfg.lstm_size, cfg.dropout_p, rng);
    m2 = ad::make_dropout_mask(rows, cfg.dense1, cfg.dropout_p, rng);
    m3 = ad::make_dropout_mask(rows, cfg.dense2, cfg.dropout_p, rng);
    pm1 = &m1;
    pm2 = &m2;
    pm3 = &m3;
  }

  McPrediction out;
  out.mean.resize(T);
  out.uncertainty.resize(T);
  if (samples) {
    samples->q.assign(M, std::vector<std::array<double, 4>>(T));
    samples->log_var.assign(M, std::vector<std::array<double, 4>>(T));
  }

  for (int t = 0; t < T; ++t) {
    ad::Tensor x(rows, cfg.input_dim);
    for (int r = 0; r < rows; ++r)
      for (int k = 0; k < cfg.input_dim; ++k) x.at(r, k) = seq[t][k];
    const ad::Tensor y = plain_step(net, x, h, c, pm1, pm2, pm3);

    // per-pass outputs at this step (replicated when dropout is off)
    auto pass_q = [&](int i, int d) { return y.at(stochastic ? i : 0, d); };
    auto pass_lv = [&](int i, int d) {
      return cfg.heteroscedastic ? clamp_lv(cfg, y.at(stochastic ? i : 0, 4 + d)) : cfg.log_var_min;
    };

    UncertaintyEstimate& u = out.uncertainty[t];
    for (int d = 0; d < 4; ++d) {
      if (!stochastic) {
        // all passes coincide: the single pass is the exact predictive mean
        out.mean[t][d] = pass_q(0, d);
        u.sigma_epi[d] = 0.0;
        u.sigma_ale[d] = cfg.heteroscedastic ? std::exp(pass_lv(0, d)) : 0.0;
        u.sigma_total[d] = u.sigma_ale[d];
        continue;
      }
      // predictive mean (two-pass so the epistemic variance is stable)
      double mean = 0.0;
      for (int i = 0; i < M; ++i) mean += pass_q(i, d);
      mean /= M;
      double var = 0.0;
      for (int i = 0; i < M; ++i) {
        const double e = pass_q(i, d) - mean;
        var += e * e;
      }
      var /= M;
      double ale = 0.0;
      for (int i = 0; i < M; ++i)
        ale += cfg.heteroscedastic ? std::exp(pass_lv(i, d)) : 0.0;
      ale /= M;
      out.mean[t][d] = mean;
      u.sigma_epi[d] = var;
      u.sigma_ale[d] = ale;
      u.sigma_total[d] = u.sigma_ale[d] + u.sigma_epi[d];
    }
    if (samples) {
      for (int i = 0; i < M; ++i)
        for (int d = 0; d < 4; ++d) {
          samples->q[i][t][d] = pass_q(i, d);
          samples->log_var[i][t][d] = pass_lv(i, d);
        }
    }
  }
  return out;
}

std::vector<EstimatorOutput> forward_deterministic(const EstimatorNet& net,
                                                   const std::vector<ScaledObservation>& seq) {
  const EstimatorConfig& cfg = net.cfg;
  ad::Tensor h(1, cfg.lstm_size), c(1, cfg.lstm_size);
  std::vector<EstimatorOutput> out(seq.size());
  for (size_t t = 0; t < seq.size(); ++t) {
    ad::Tensor x(1, cfg.input_dim);
    for (int k = 0; k < cfg.input_dim; ++k) x.at(0, k) = seq[t][k];
    const ad::Tensor y = plain_step(net, x, h, c, nullptr, nullptr, nullptr);
    for (int d = 0; d < 4; ++d) {
      out[t].q_hat[d] = y.at(0, d);
      out[t].log_var[d] =
          cfg.heteroscedastic ? clamp_lv(cfg, y.at(0, 4 + d)) : cfg.log_var_min;
    }
  }
  return out;
}

DecodedPose decode_pose(const std::array<double, 4>& q_hat, const GeometrySpec& geom) {
  DecodedPose d;
  const Vec2 pos = unscale_position(q_hat[0], q_hat[1], geom);
  d.pose.x = pos.x;
  d.pose.y = pos.y;
  const double n = std::sqrt(q_hat[2] * q_hat[2] + q_hat[3] * q_hat[3]);
  if (n < 1e-6) {
    d.pose.theta = 0.0;
    d.degenerate = true;
  } else {
    d.pose.theta = std::atan2(q_hat[2] / n, q_hat[3] / n);
  }
  return d;
}

McEstimator::McEstimator(const EstimatorNet* net, int M, bool mc)
    : net_(net), passes_(mc ? M : 1), mc_(mc && net->cfg.dropout_p > 0.0) {
  if (M < 1) throw std::invalid_argument("McEstimator: M must be >= 1");
  if (!mc_) passes_ = 1;
  h_ = ad::Tensor(passes_, net_->cfg.lstm_size);
  c_ = ad::Tensor(passes_, net_->cfg.lstm_size);
}

void McEstimator::reset(Rng& rng) {
  h_ = ad::Tensor(passes_, net_->cfg.lstm_size);
  c_ = ad::Tensor(passes_, net_->cfg.lstm_size);
  if (mc_) {
    mask1_ = ad::make_dropout_mask(passes_, net_->cfg.lstm_size, net_->cfg.dropout_p, rng);
    mask2_ = ad::make_dropout_mask(passes_, net_->cfg.dense1, net_->cfg.dropout_p, rng);
    mask3_ = ad::make_dropout_mask(passes_, net_->cfg.dense2, net_->cfg.dropout_p, rng);
  }
}

std::pair<std::array<double, 4>, UncertaintyEstimate> McEstimator::step(
    const ScaledObservation& obs) {
  const EstimatorConfig& cfg = net_->cfg;
  ad::Tensor x(passes_, cfg.input_dim);
  for (int r = 0; r < passes_; ++r)
    for (int k = 0; k < cfg.input_dim; ++k) x.at(r, k) = obs[k];
  const ad::Tensor y = plain_step(*net_, x, h_, c_, mc_ ? &mask1_ : nullptr,
                                  mc_ ? &mask2_ : nullptr, mc_ ? &mask3_ : nullptr);
  std::array<double, 4> mean{};
  UncertaintyEstimate u;
  for (int d = 0; d < 4; ++d) {
    double m = 0.0;
    for (int i = 0; i < passes_; ++i) m += y.at(i, d);
    m /= passes_;
    double var = 0.0, ale = 0.0;
    for (int i = 0; i < passes_; ++i) {
      const double e = y.at(i, d) - m;
      var += e * e;
      ale += cfg.heteroscedastic ? std::exp(clamp_lv(cfg, y.at(i, 4 + d))) : 0.0;
    }
    mean[d] = m;
    u.sigma_epi[d] = mc_ ? var / passes_ : 0.0;
    u.sigma_ale[d] = ale / passes_;
    u.sigma_total[d] = u.sigma_ale[d] + u.sigma_epi[d];
  }
  return {mean, u};
}

// ----- training ----- //

namespace {

struct BatchGrad {
  std::vector<ad::Tensor> grads;
  double loss_sum = 0.0;  // unnormalized
  long samples = 0;
};

// Taped forward/backward over a chunk of sequences processed in lockstep.
// Returns the summed per-sample loss and its gradient.
BatchGrad run_chunk(const EstimatorNet& net, const std::vector<const SeqSample*>& seqs,
                    const std::vector<ad::Tensor>& masks) {
  const EstimatorConfig& cfg = net.cfg;
  const int B = static_cast<int>(seqs.size());
  int T = 0;
  for (const SeqSample* s : seqs) T = std::max(T, static_cast<int>(s->obs.size()));

  ad::Tape tape;
  const ad::Ref wx = tape.leaf(net.params.values[net.lstm.wx]);
  const ad::Ref wh = tape.leaf(net.params.values[net.lstm.wh]);
  const ad::Ref lb = tape.leaf(net.params.values[net.lstm.b]);
  const ad::Ref w1 = tape.leaf(net.params.values[net.fc1.w]);
  const ad::Ref b1 = tape.leaf(net.params.values[net.fc1.b]);
  const ad::Ref w2 = tape.leaf(net.params.values[net.fc2.w]);
  const ad::Ref b2 = tape.leaf(net.params.values[net.fc2.b]);
  const ad::Ref wh2 = tape.leaf(net.params.values[net.head.w]);
  const ad::Ref bh = tape.leaf(net.params.values[net.head.b]);
  const ad::Ref m1 = tape.leaf(masks[0]);
  const ad::Ref m2 = tape.leaf(masks[1]);
  const ad::Ref m3 = tape.leaf(masks[2]);

  ad::LstmState s{tape.leaf(ad::Tensor(B, cfg.lstm_size)), tape.leaf(ad::Tensor(B, cfg.lstm_size))};
  ad::Ref total = tape.leaf(ad::Tensor::scalar(0.0));
  long samples = 0;

  for (int t = 0; t < T; ++t) {
    ad::Tensor x(B, cfg.input_dim);
    ad::Tensor target(B, 4);
    ad::Tensor valid(B, 1);
    for (int r = 0; r < B; ++r) {
      if (t < static_cast<int>(seqs[r]->obs.size())) {
        for (int k = 0; k < cfg.input_dim; ++k) x.at(r, k) = seqs[r]->obs[t][k];
        for (int d = 0; d < 4; ++d) target.at(r, d) = seqs[r]->label[t][d];
        valid.at(r, 0) = 1.0;
        ++samples;
      }
    }
    const ad::Ref xr = tape.leaf(std::move(x));
    s = ad::lstm_step(tape, xr, s, wx, wh, lb, cfg.lstm_size);
    ad::Ref z = tape.mul(s.h, m1);
    z = tape.tanh_(ad::linear_forward(tape, z, w1, b1));
    z = tape.mul(z, m2);
    z = tape.tanh_(ad::linear_forward(tape, z, w2, b2));
    z = tape.mul(z, m3);
    const ad::Ref y = ad::linear_forward(tape, z, wh2, bh);

    const ad::Ref tgt = tape.leaf(std::move(target));
    const ad::Ref vmask = tape.leaf(std::move(valid));
    ad::Ref per_elem;  // B x 4
    if (cfg.heteroscedastic) {
      const ad::Ref q = tape.slice_cols(y, 0, 4);
      const ad::Ref lv = tape.clamp_(tape.slice_cols(y, 4, 4), cfg.log_var_min, cfg.log_var_max);
      const ad::Ref err = tape.sub(tgt, q);
      const ad::Ref wsq = tape.mul(tape.mul(err, err), tape.exp_(tape.scale(lv, -1.0)));
      per_elem = tape.scale(tape.add(lv, wsq), 0.5);
    } else {
      const ad::Ref err = tape.sub(tgt, y);
      per_elem = tape.scale(tape.mul(err, err), 0.25);  // mean over the 4 components
    }
    total = tape.add(total, tape.sum(tape.mul_colvec(per_elem, vmask)));
  }

  tape.backward(total);

  BatchGrad out;
  out.loss_sum = tape.val(total).data[0];
  out.samples = samples;
  out.grads.reserve(9);
  for (const ad::Ref r : {wx, wh, lb, w1, b1, w2, b2, wh2, bh}) out.grads.push_back(tape.grad(r));
  return out;
}

double validation_loss(const EstimatorNet& net, const std::vector<SeqSample>& val, int threads) {
  if (val.empty()) return 0.0;
  std::vector<double> losses(val.size(), 0.0);
  std::vector<long> counts(val.size(), 0);
  parallel_for(static_cast<int>(val.size()), threads, [&](int i) {
    const std::vector<EstimatorOutput> pred = forward_deterministic(net, val[i].obs);
    double acc = 0.0;
    for (size_t t = 0; t < pred.size(); ++t) {
      if (net.cfg.heteroscedastic) {
        acc += nll_loss(pred[t], val[i].label[t]);
      } else {
        double mse = 0.0;
        for (int d = 0; d < 4; ++d) {
          const double e = val[i].label[t][d] - pred[t].q_hat[d];
          mse += e * e;
        }
        acc += 0.25 * mse;
      }
    }
    losses[i] = acc;
    counts[i] = static_cast<long>(pred.size());
  });
  double total = 0.0;
  long n = 0;
  for (size_t i = 0; i < losses.size(); ++i) {
    total += losses[i];
    n += counts[i];
  }
  return total / std::max(1L, n);
}

}  // namespace

TrainCurves train_estimator(EstimatorNet& net, const std::vector<SeqSample>& train,
                            const std::vector<SeqSample>& val,
                            const EstimatorTrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("train_estimator: empty training set");
  Rng order_rng(derive_seed(cfg.seed, 0xe57));
  Rng mask_rng(derive_seed(cfg.seed, 0xd70));

  ad::AdamState adam;
  adam.lr = cfg.lr;
  TrainCurves curves;
  std::vector<ad::Tensor> best_params;
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the epoch stream
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[order_rng.uniform_int(i + 1)]);

    double epoch_loss = 0.0;
    long epoch_samples = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_sequences) {
      const size_t end = std::min(order.size(), start + cfg.batch_sequences);
      const int B = static_cast<int>(end - start);

      // per-sequence dropout masks, fixed across time within the batch
      std::vector<ad::Tensor> masks = {
          ad::make_dropout_mask(B, net.cfg.lstm_size, net.cfg.dropout_p, mask_rng),
          ad::make_dropout_mask(B, net.cfg.dense1, net.cfg.dropout_p, mask_rng),
          ad::make_dropout_mask(B, net.cfg.dense2, net.cfg.dropout_p, mask_rng)};

      // chunk the batch across threads; reduce in chunk order
      const int chunks = std::min(cfg.threads, B);
      std::vector<BatchGrad> parts(chunks);
      std::vector<std::pair<int, int>> ranges(chunks);
      const int per = (B + chunks - 1) / chunks;
      for (int ci = 0; ci < chunks; ++ci)
        ranges[ci] = {ci * per, std::min(B, (ci + 1) * per)};
      parallel_for(chunks, cfg.threads, [&](int ci) {
        const auto [lo, hi] = ranges[ci];
        if (lo >= hi) return;
        std::vector<const SeqSample*> seqs;
        std::vector<ad::Tensor> chunk_masks(3);
        for (int m = 0; m < 3; ++m) {
          chunk_masks[m] = ad::Tensor(hi - lo, masks[m].cols);
          for (int r = lo; r < hi; ++r)
            for (int k = 0; k < masks[m].cols; ++k)
              chunk_masks[m].at(r - lo, k) = masks[m].at(r, k);
        }
        for (int r = lo; r < hi; ++r) seqs.push_back(&train[order[start + r]]);
        parts[ci] = run_chunk(net, seqs, chunk_masks);
      });

      std::vector<ad::Tensor> grads = ad::zero_grads_like(net.params);
      double loss_sum = 0.0;
      long samples = 0;
      for (const BatchGrad& p : parts) {
        if (p.samples == 0) continue;
        ad::accumulate_grads(grads, p.grads);
        loss_sum += p.loss_sum;
        samples += p.samples;
      }
      const double inv = 1.0 / static_cast<double>(std::max(1L, samples));
      for (ad::Tensor& g : grads)
        for (double& v : g.data) v *= inv;
      ad::clip_global_norm(grads, cfg.grad_clip);
      ad::adam_step(net.params, grads, adam);
      epoch_loss += loss_sum;
      epoch_samples += samples;
    }

    curves.train_loss.push_back(epoch_loss / std::max(1L, epoch_samples));
    const double vl = validation_loss(net, val, cfg.threads);
    curves.val_loss.push_back(vl);
    if (cfg.verbose)
      std::printf("estimator epoch %d train %.5f val %.5f\n", epoch,
                  curves.train_loss.back(), vl);
    if (val.empty() || vl < best_val) {
      best_val = vl;
      best_params = net.params.values;
      curves.best_epoch = epoch;
    }
  }
  if (!best_params.empty()) net.params.values = std::move(best_params);
  return curves;
}

}  // namespace planarpush
