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

// Recurrent object-pose estimator with heteroscedastic uncertainty:
// negative-log-likelihood training of (pose, log-variance) outputs, and
// Monte Carlo dropout inference producing predictive mean, epistemic sample
// covariance and total uncertainty.

#ifndef PLANARPUSH_ESTIMATOR_H_
#define PLANARPUSH_ESTIMATOR_H_

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "planarpush/autodiff.h"
#include "planarpush/obsmodel.h"
#include "planarpush/physics.h"

namespace planarpush {

struct EstimatorConfig {
  int input_dim = kObsDim;
  int lstm_size = 128;  // paper scale: 1024
  int dense1 = 64;      // paper scale: 512
  int dense2 = 32;      // paper scale: 256
  double dropout_p = 0.2;
  bool heteroscedastic = true;  // false: 4 plain pose outputs, MSE training
  double log_var_min = -10.0;   // clamp on predicted log-variances
  double log_var_max = 4.0;

  int out_dim() const { return heteroscedastic ? 8 : 4; }
};

struct EstimatorNet {
  EstimatorConfig cfg;
  ad::ParamStore params;
  ad::LstmLayer lstm;
  ad::LinearLayer fc1, fc2, head;
};

EstimatorNet make_estimator(const EstimatorConfig& cfg, Rng& rng);

// Serialization of the net (architecture recorded in the metadata).
void save_estimator(const EstimatorNet& net, const std::string& path);
EstimatorNet load_estimator(const std::string& path);

// Pose encoding (x, y, sin, cos) in scaled units plus log-variances.
struct EstimatorOutput {
  std::array<double, 4> q_hat{};
  std::array<double, 4> log_var{};
};

// Diagonal Gaussian negative log-likelihood of one sample:
//   1/2 sum_d [ log_var_d + (target_d - q_hat_d)^2 / exp(log_var_d) ]
double nll_loss(const EstimatorOutput& pred, const std::array<double, 4>& target);

// Diagonal variances, in scaled units squared.
struct UncertaintyEstimate {
  std::array<double, 4> sigma_ale{};
  std::array<double, 4> sigma_epi{};
  std::array<double, 4> sigma_total{};  // ale + epi, exactly
};

struct McPrediction {
  std::vector<std::array<double, 4>> mean;      // predictive mean per step
  std::vector<UncertaintyEstimate> uncertainty; // per step
};

// Raw per-pass outputs for oracle checks: [pass][step].
struct McSamples {
  std::vector<std::vector<std::array<double, 4>>> q;
  std::vector<std::vector<std::array<double, 4>>> log_var;
};

// Runs M stochastic passes over the full sequence, each with its own
// recurrent state and dropout masks held fixed across time. Throws for
// M < 1. With dropout disabled the result equals the deterministic pass.
McPrediction mc_predict(const EstimatorNet& net, const std::vector<ScaledObservation>& seq,
                        int M, Rng& rng, McSamples* samples = nullptr);

// Single pass with dropout off.
std::vector<EstimatorOutput> forward_deterministic(const EstimatorNet& net,
                                                   const std::vector<ScaledObservation>& seq);

struct DecodedPose {
  Pose2D pose;
  bool degenerate = false;  // (sin, cos) pair was numerically zero
};

DecodedPose decode_pose(const std::array<double, 4>& q_hat, const GeometrySpec& geom);

// Streaming MC inference for estimator-in-the-loop control: all M passes
// advance one step per observation, masks resampled at reset.
class McEstimator {
 public:
  // mc = false collapses to a single deterministic pass (M forced to 1).
  McEstimator(const EstimatorNet* net, int M, bool mc = true);
  void reset(Rng& rng);
  std::pair<std::array<double, 4>, UncertaintyEstimate> step(const ScaledObservation& obs);
  int passes() const { return passes_; }

 private:
  const EstimatorNet* net_;
  int passes_;
  bool mc_;
  ad::Tensor h_, c_;
  ad::Tensor mask1_, mask2_, mask3_;
};

// ----- training ----- //

struct SeqSample {
  std::vector<ScaledObservation> obs;
  std::vector<std::array<double, 4>> label;  // ground-truth scaled pose
};

struct EstimatorTrainConfig {
  int epochs = 8;
  int batch_sequences = 32;
  double lr = 1e-3;
  double grad_clip = 1.0;
  int threads = 2;
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct TrainCurves {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch, dropout off
  int best_epoch = -1;
};

// Minimizes the NLL (or MSE for non-heteroscedastic nets) with Adam and
// returns per-epoch curves; the net keeps the best-validation parameters.
// Throws on an empty training set.
TrainCurves train_estimator(EstimatorNet& net, const std::vector<SeqSample>& train,
                            const std::vector<SeqSample>& val,
                            const EstimatorTrainConfig& cfg);

}  // namespace planarpush

#endif  // PLANARPUSH_ESTIMATOR_H_
