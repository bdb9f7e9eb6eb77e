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

// Reverse-mode differentiation over row-major matrices, sized for small
// recurrent networks: a single-use tape of tensor ops, LSTM/linear layers,
// dropout, categorical heads, Adam, and a self-describing checkpoint format.

#ifndef PLANARPUSH_AUTODIFF_H_
#define PLANARPUSH_AUTODIFF_H_

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "planarpush/rng.h"

namespace planarpush::ad {

struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
  size_t size() const { return data.size(); }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor row(const std::vector<double>& v);
  static Tensor scalar(double v);
};

// When enabled (tests), every op asserts its output is finite.
void set_nan_check(bool enabled);

using Ref = int;

// Single-use computation tape. Build the forward pass, call backward(root)
// once on a scalar node, then read grad(). Ops only reference earlier nodes,
// so reverse creation order is a valid reverse-topological order.
class Tape {
 public:
  Ref leaf(Tensor t);
  const Tensor& val(Ref r) const { return nodes_[r].value; }
  const Tensor& grad(Ref r) const { return nodes_[r].grad; }
  void backward(Ref root);
  int size() const { return static_cast<int>(nodes_.size()); }

  Ref matmul(Ref a, Ref b);
  Ref add(Ref a, Ref b);         // same shape
  Ref add_rowvec(Ref a, Ref b);  // (B x N) + (1 x N)
  Ref sub(Ref a, Ref b);
  Ref mul(Ref a, Ref b);         // elementwise, same shape
  Ref mul_colvec(Ref a, Ref b);  // (B x N) * (B x 1), broadcast over columns
  Ref scale(Ref a, double s);
  Ref add_const(Ref a, double c);
  Ref tanh_(Ref a);
  Ref sigmoid_(Ref a);
  Ref exp_(Ref a);
  Ref clamp_(Ref a, double lo, double hi);  // pass-through gradient strictly inside
  Ref minimum(Ref a, Ref b);                // elementwise min; ties route to a
  Ref slice_cols(Ref a, int c0, int n);
  Ref concat_cols(Ref a, Ref b);
  Ref sum(Ref a);   // 1 x 1
  Ref mean(Ref a);  // 1 x 1

  // log-probability of the indexed class per row, via a stable log-softmax
  Ref categorical_logprob(Ref logits, std::vector<int> index);
  // entropy of the softmax distribution per row
  Ref categorical_entropy(Ref logits);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;

  Ref push(Tensor value, std::function<void(Tape&)> back);
  Tensor& grad_mut(Ref r) { return nodes_[r].grad; }
  friend struct TapeAccess;
};

// ----- parameters ----- //

struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  int add(const std::string& name, Tensor t);
  int find(const std::string& name) const;  // -1 when absent
  size_t total_size() const;
};

struct LinearLayer {
  int w = -1, b = -1;  // ParamStore indices
  int in = 0, out = 0;
};

struct LstmLayer {
  int wx = -1, wh = -1, b = -1;  // gate layout [input, forget, cell, output]
  int in = 0, hidden = 0;
};

// Weights ~ U(+-1/sqrt(fan_in)), zero biases.
LinearLayer add_linear(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng);
LstmLayer add_lstm(ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng);

// ----- taped layer ops ----- //

Ref linear_forward(Tape& t, Ref x, Ref w, Ref b);
inline Ref tanh_forward(Tape& t, Ref x) { return t.tanh_(x); }

struct LstmState {
  Ref h = -1;
  Ref c = -1;
};
LstmState lstm_step(Tape& t, Ref x, LstmState state, Ref wx, Ref wh, Ref b, int hidden);

// Inverted dropout; stays stochastic whenever train_mode is true (Monte
// Carlo inference reuses the same path). Throws for p outside [0, 1).
Tensor make_dropout_mask(int rows, int cols, double p, Rng& rng);
std::pair<Ref, Tensor> dropout_forward(Tape& t, Ref x, double p_drop, Rng& rng, bool train_mode);

// ----- plain (tape-free) forward ops for inference ----- //

Tensor plain_linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor plain_tanh(Tensor x);
// updates h, c in place
void plain_lstm_step(const Tensor& x, Tensor& h, Tensor& c, const Tensor& wx, const Tensor& wh,
                     const Tensor& b);
Tensor plain_mul(const Tensor& a, const Tensor& b);
// row-wise log-softmax
Tensor plain_log_softmax(const Tensor& logits);
// log-softmax applied independently to columns [0, bins) and [bins, 2*bins)
Tensor plain_log_softmax_two_axis(const Tensor& logits, int bins);

// ----- optimizer ----- //

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<double> m, v;  // flat moments, sized on first use
};

// grads runs parallel to store.values.
void adam_step(ParamStore& store, const std::vector<Tensor>& grads, AdamState& state);

// Scales grads so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

// Element-wise accumulate: acc += g. Shapes must match.
void accumulate_grads(std::vector<Tensor>& acc, const std::vector<Tensor>& g);
std::vector<Tensor> zero_grads_like(const ParamStore& store);

// ----- checkpoints ----- //
// Layout: one JSON header line (format, version, named shapes, metadata),
// then little-endian float64 payloads in declaration order.

void save_checkpoint(const ParamStore& store, const std::map<std::string, std::string>& meta,
                     const std::string& path);
std::pair<ParamStore, std::map<std::string, std::string>> load_checkpoint(
    const std::string& path);

}  // namespace planarpush::ad

#endif  // PLANARPUSH_AUTODIFF_H_
