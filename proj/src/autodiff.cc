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

#include "planarpush/autodiff.h"

#include <Eigen/Core>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

// checkpoint payloads are declared little-endian
static_assert(std::endian::native == std::endian::little);

namespace planarpush::ad {

namespace {

using EMat = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CEMat =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

EMat emap(Tensor& t) { return {t.data.data(), t.rows, t.cols}; }
CEMat emap(const Tensor& t) { return {t.data.data(), t.rows, t.cols}; }

std::atomic<bool> g_nan_check{false};

void check_finite(const Tensor& t, const char* op) {
  if (!g_nan_check.load(std::memory_order_relaxed)) return;
  for (const double v : t.data) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite value after ") + op);
  }
}

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor Tensor::row(const std::vector<double>& v) {
  Tensor t(1, static_cast<int>(v.size()));
  t.data = v;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t(1, 1);
  t.data[0] = v;
  return t;
}

void set_nan_check(bool enabled) { g_nan_check.store(enabled); }

Ref Tape::push(Tensor value, std::function<void(Tape&)> back) {
  check_finite(value, "tape op");
  Node n;
  n.grad = Tensor(value.rows, value.cols);
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Ref>(nodes_.size()) - 1;
}

Ref Tape::leaf(Tensor t) { return push(std::move(t), nullptr); }

void Tape::backward(Ref root) {
  require(!backward_done_, "Tape::backward: tape is single-use");
  require(nodes_[root].value.size() == 1, "Tape::backward: root must be scalar");
  backward_done_ = true;
  nodes_[root].grad.data[0] = 1.0;
  for (int i = root; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
}

Ref Tape::matmul(Ref a, Ref b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.cols == tb.rows, "matmul: inner dimensions differ");
  Tensor out(ta.rows, tb.cols);
  emap(out).noalias() = emap(ta) * emap(tb);
  const Ref self = size();
  return push(std::move(out), [a, b, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    emap(t.nodes_[a].grad).noalias() += emap(g) * emap(t.val(b)).transpose();
    emap(t.nodes_[b].grad).noalias() += emap(t.val(a)).transpose() * emap(g);
  });
}

Ref Tape::add(Ref a, Ref b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.rows == tb.rows && ta.cols == tb.cols, "add: shape mismatch");
  Tensor out = ta;
  emap(out) += emap(tb);
  const Ref self = size();
  return push(std::move(out), [a, b, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    emap(t.nodes_[a].grad) += emap(g);
    emap(t.nodes_[b].grad) += emap(g);
  });
}

Ref Tape::add_rowvec(Ref a, Ref b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(tb.rows == 1 && ta.cols == tb.cols, "add_rowvec: expected 1 x N bias");
  Tensor out = ta;
  emap(out).rowwise() += emap(tb).row(0);
  const Ref self = size();
  return push(std::move(out), [a, b, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    emap(t.nodes_[a].grad) += emap(g);
    emap(t.nodes_[b].grad).row(0) += emap(g).colwise().sum();
  });
}

Ref Tape::sub(Ref a, Ref b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.rows == tb.rows && ta.cols == tb.cols, "sub: shape mismatch");
  Tensor out = ta;
  emap(out) -= emap(tb);
  const Ref self = size();
  return push(std::move(out), [a, b, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    emap(t.nodes_[a].grad) += emap(g);
    emap(t.nodes_[b].grad) -= emap(g);
  });
}

Ref Tape::mul(Ref a, Ref b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.rows == tb.rows && ta.cols == tb.cols, "mul: shape mismatch");
  Tensor out = ta;
  emap(out).array() *= emap(tb).array();
  const Ref self = size();
  return push(std::move(out), [a, b, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    emap(t.nodes_[a].grad).array() += emap(g).array() * emap(t.val(b)).array();
    emap(t.nodes_[b].grad).array() += emap(g).array() * emap(t.val(a)).array();
  });
}

Ref Tape::mul_colvec(Ref a, Ref b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(tb.cols == 1 && ta.rows == tb.rows, "mul_colvec: expected B x 1 scale");
  Tensor out = ta;
  emap(out).array().colwise() *= emap(tb).col(0).array();
  const Ref self = size();
  return push(std::move(out), [a, b, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    emap(t.nodes_[a].grad).array() += emap(g).array().colwise() * emap(t.val(b)).col(0).array();
    emap(t.nodes_[b].grad).col(0).array() +=
        (emap(g).array() * emap(t.val(a)).array()).rowwise().sum();
  });
}

Ref Tape::scale(Ref a, double s) {
  Tensor out = val(a);
  emap(out) *= s;
  const Ref self = size();
  return push(std::move(out), [a, s, self](Tape& t) {
    emap(t.nodes_[a].grad) += s * emap(t.nodes_[self].grad);
  });
}

Ref Tape::add_const(Ref a, double c) {
  Tensor out = val(a);
  emap(out).array() += c;
  const Ref self = size();
  return push(std::move(out), [a, self](Tape& t) {
    emap(t.nodes_[a].grad) += emap(t.nodes_[self].grad);
  });
}

Ref Tape::tanh_(Ref a) {
  Tensor out = val(a);
  for (double& v : out.data) v = std::tanh(v);
  const Ref self = size();
  return push(std::move(out), [a, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.val(self);
    Tensor& ga = t.nodes_[a].grad;
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
  });
}

Ref Tape::sigmoid_(Ref a) {
  Tensor out = val(a);
  for (double& v : out.data) v = stable_sigmoid(v);
  const Ref self = size();
  return push(std::move(out), [a, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.val(self);
    Tensor& ga = t.nodes_[a].grad;
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

Ref Tape::exp_(Ref a) {
  Tensor out = val(a);
  for (double& v : out.data) v = std::exp(v);
  const Ref self = size();
  return push(std::move(out), [a, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& y = t.val(self);
    Tensor& ga = t.nodes_[a].grad;
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] * y.data[i];
  });
}

Ref Tape::clamp_(Ref a, double lo, double hi) {
  Tensor out = val(a);
  for (double& v : out.data) v = std::min(hi, std::max(lo, v));
  const Ref self = size();
  return push(std::move(out), [a, lo, hi, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& x = t.val(a);
    Tensor& ga = t.nodes_[a].grad;
    for (size_t i = 0; i < ga.data.size(); ++i) {
      if (x.data[i] > lo && x.data[i] < hi) ga.data[i] += g.data[i];
    }
  });
}

Ref Tape::minimum(Ref a, Ref b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.rows == tb.rows && ta.cols == tb.cols, "minimum: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::min(ta.data[i], tb.data[i]);
  const Ref self = size();
  return push(std::move(out), [a, b, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& xa = t.val(a);
    const Tensor& xb = t.val(b);
    Tensor& ga = t.nodes_[a].grad;
    Tensor& gb = t.nodes_[b].grad;
    for (size_t i = 0; i < g.data.size(); ++i) {
      if (xa.data[i] <= xb.data[i]) {
        ga.data[i] += g.data[i];
      } else {
        gb.data[i] += g.data[i];
      }
    }
  });
}

Ref Tape::slice_cols(Ref a, int c0, int n) {
  const Tensor& ta = val(a);
  require(c0 >= 0 && c0 + n <= ta.cols, "slice_cols: range outside tensor");
  Tensor out(ta.rows, n);
  emap(out) = emap(ta).middleCols(c0, n);
  const Ref self = size();
  return push(std::move(out), [a, c0, n, self](Tape& t) {
    emap(t.nodes_[a].grad).middleCols(c0, n) += emap(t.nodes_[self].grad);
  });
}

Ref Tape::concat_cols(Ref a, Ref b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.rows == tb.rows, "concat_cols: row mismatch");
  Tensor out(ta.rows, ta.cols + tb.cols);
  emap(out).leftCols(ta.cols) = emap(ta);
  emap(out).rightCols(tb.cols) = emap(tb);
  const Ref self = size();
  const int ca = ta.cols, cb = tb.cols;
  return push(std::move(out), [a, b, ca, cb, self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    emap(t.nodes_[a].grad) += emap(g).leftCols(ca);
    emap(t.nodes_[b].grad) += emap(g).rightCols(cb);
  });
}

Ref Tape::sum(Ref a) {
  const Ref self = size();
  return push(Tensor::scalar(emap(val(a)).sum()), [a, self](Tape& t) {
    emap(t.nodes_[a].grad).array() += t.nodes_[self].grad.data[0];
  });
}

Ref Tape::mean(Ref a) {
  const double inv = 1.0 / static_cast<double>(val(a).size());
  const Ref self = size();
  return push(Tensor::scalar(emap(val(a)).sum() * inv), [a, inv, self](Tape& t) {
    emap(t.nodes_[a].grad).array() += t.nodes_[self].grad.data[0] * inv;
  });
}

Ref Tape::categorical_logprob(Ref logits, std::vector<int> index) {
  const Tensor& z = val(logits);
  require(static_cast<int>(index.size()) == z.rows, "categorical_logprob: one index per row");
  Tensor logp(z.rows, z.cols);
  Tensor out(z.rows, 1);
  for (int r = 0; r < z.rows; ++r) {
    require(index[r] >= 0 && index[r] < z.cols, "categorical_logprob: index out of range");
    double m = z.at(r, 0);
    for (int k = 1; k < z.cols; ++k) m = std::max(m, z.at(r, k));
    double acc = 0.0;
    for (int k = 0; k < z.cols; ++k) acc += std::exp(z.at(r, k) - m);
    const double lse = m + std::log(acc);
    for (int k = 0; k < z.cols; ++k) logp.at(r, k) = z.at(r, k) - lse;
    out.at(r, 0) = logp.at(r, index[r]);
  }
  const Ref self = size();
  return push(std::move(out),
              [logits, idx = std::move(index), lp = std::move(logp), self](Tape& t) {
                const Tensor& g = t.nodes_[self].grad;
                Tensor& gz = t.nodes_[logits].grad;
                for (int r = 0; r < gz.rows; ++r) {
                  const double gr = g.at(r, 0);
                  if (gr == 0.0) continue;
                  for (int k = 0; k < gz.cols; ++k) {
                    const double p = std::exp(lp.at(r, k));
                    gz.at(r, k) += gr * ((k == idx[r] ? 1.0 : 0.0) - p);
                  }
                }
              });
}

Ref Tape::categorical_entropy(Ref logits) {
  const Tensor& z = val(logits);
  Tensor logp(z.rows, z.cols);
  Tensor out(z.rows, 1);
  for (int r = 0; r < z.rows; ++r) {
    double m = z.at(r, 0);
    for (int k = 1; k < z.cols; ++k) m = std::max(m, z.at(r, k));
    double acc = 0.0;
    for (int k = 0; k < z.cols; ++k) acc += std::exp(z.at(r, k) - m);
    const double lse = m + std::log(acc);
    double h = 0.0;
    for (int k = 0; k < z.cols; ++k) {
      const double lp = z.at(r, k) - lse;
      logp.at(r, k) = lp;
      h -= std::exp(lp) * lp;
    }
    out.at(r, 0) = h;
  }
  const Ref self = size();
  return push(std::move(out), [logits, lp = std::move(logp), self](Tape& t) {
    const Tensor& g = t.nodes_[self].grad;
    const Tensor& h = t.val(self);
    Tensor& gz = t.nodes_[logits].grad;
    for (int r = 0; r < gz.rows; ++r) {
      const double gr = g.at(r, 0);
      if (gr == 0.0) continue;
      for (int k = 0; k < gz.cols; ++k) {
        const double p = std::exp(lp.at(r, k));
        gz.at(r, k) += gr * (-p * (lp.at(r, k) + h.at(r, 0)));
      }
    }
  });
}

// ----- parameters ----- //

int ParamStore::add(const std::string& name, Tensor t) {
  names.push_back(name);
  values.push_back(std::move(t));
  return static_cast<int>(values.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const Tensor& t : values) n += t.size();
  return n;
}

namespace {

Tensor uniform_init(int rows, int cols, double bound, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

LinearLayer add_linear(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng) {
  LinearLayer l;
  l.in = in;
  l.out = out;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.w = store.add(prefix + ".w", uniform_init(in, out, bound, rng));
  l.b = store.add(prefix + ".b", Tensor(1, out));
  return l;
}

LstmLayer add_lstm(ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng) {
  LstmLayer l;
  l.in = in;
  l.hidden = hidden;
  l.wx = store.add(prefix + ".wx", uniform_init(in, 4 * hidden, 1.0 / std::sqrt(in), rng));
  l.wh =
      store.add(prefix + ".wh", uniform_init(hidden, 4 * hidden, 1.0 / std::sqrt(hidden), rng));
  l.b = store.add(prefix + ".b", Tensor(1, 4 * hidden));
  return l;
}

// ----- taped layers ----- //

Ref linear_forward(Tape& t, Ref x, Ref w, Ref b) {
  return t.add_rowvec(t.matmul(x, w), b);
}

LstmState lstm_step(Tape& t, Ref x, LstmState s, Ref wx, Ref wh, Ref b, int hidden) {
  const Ref gates = t.add_rowvec(t.add(t.matmul(x, wx), t.matmul(s.h, wh)), b);
  const Ref gi = t.sigmoid_(t.slice_cols(gates, 0, hidden));
  const Ref gf = t.sigmoid_(t.slice_cols(gates, hidden, hidden));
  const Ref gg = t.tanh_(t.slice_cols(gates, 2 * hidden, hidden));
  const Ref go = t.sigmoid_(t.slice_cols(gates, 3 * hidden, hidden));
  LstmState out;
  out.c = t.add(t.mul(gf, s.c), t.mul(gi, gg));
  out.h = t.mul(go, t.tanh_(out.c));
  return out;
}

Tensor make_dropout_mask(int rows, int cols, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  Tensor m(rows, cols);
  if (p == 0.0) {
    for (double& v : m.data) v = 1.0;
    return m;
  }
  const double keep = 1.0 / (1.0 - p);
  for (double& v : m.data) v = rng.uniform() < p ? 0.0 : keep;
  return m;
}

std::pair<Ref, Tensor> dropout_forward(Tape& t, Ref x, double p_drop, Rng& rng,
                                       bool train_mode) {
  const Tensor& xv = t.val(x);
  if (!train_mode || p_drop == 0.0) {
    Tensor ones(xv.rows, xv.cols);
    for (double& v : ones.data) v = 1.0;
    return {x, std::move(ones)};
  }
  Tensor mask = make_dropout_mask(xv.rows, xv.cols, p_drop, rng);
  const Ref m = t.leaf(mask);
  return {t.mul(x, m), std::move(mask)};
}

// ----- plain forward ----- //

Tensor plain_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out(x.rows, w.cols);
  emap(out).noalias() = emap(x) * emap(w);
  emap(out).rowwise() += emap(b).row(0);
  return out;
}

Tensor plain_tanh(Tensor x) {
  for (double& v : x.data) v = std::tanh(v);
  return x;
}

void plain_lstm_step(const Tensor& x, Tensor& h, Tensor& c, const Tensor& wx, const Tensor& wh,
                     const Tensor& b) {
  const int hidden = h.cols;
  Tensor gates(x.rows, 4 * hidden);
  emap(gates).noalias() = emap(x) * emap(wx);
  emap(gates).noalias() += emap(h) * emap(wh);
  emap(gates).rowwise() += emap(b).row(0);
  for (int r = 0; r < x.rows; ++r) {
    for (int k = 0; k < hidden; ++k) {
      const double gi = stable_sigmoid(gates.at(r, k));
      const double gf = stable_sigmoid(gates.at(r, hidden + k));
      const double gg = std::tanh(gates.at(r, 2 * hidden + k));
      const double go = stable_sigmoid(gates.at(r, 3 * hidden + k));
      const double cc = gf * c.at(r, k) + gi * gg;
      c.at(r, k) = cc;
      h.at(r, k) = go * std::tanh(cc);
    }
  }
}

Tensor plain_mul(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  emap(out).array() *= emap(b).array();
  return out;
}

Tensor plain_log_softmax(const Tensor& logits) {
  Tensor out = logits;
  for (int r = 0; r < logits.rows; ++r) {
    double m = logits.at(r, 0);
    for (int k = 1; k < logits.cols; ++k) m = std::max(m, logits.at(r, k));
    double acc = 0.0;
    for (int k = 0; k < logits.cols; ++k) acc += std::exp(logits.at(r, k) - m);
    const double lse = m + std::log(acc);
    for (int k = 0; k < logits.cols; ++k) out.at(r, k) = logits.at(r, k) - lse;
  }
  return out;
}

Tensor plain_log_softmax_two_axis(const Tensor& logits, int bins) {
  if (logits.cols != 2 * bins)
    throw std::invalid_argument("plain_log_softmax_two_axis: expected 2*bins columns");
  Tensor out = logits;
  for (int r = 0; r < logits.rows; ++r) {
    for (int axis = 0; axis < 2; ++axis) {
      const int base = axis * bins;
      double m = logits.at(r, base);
      for (int k = 1; k < bins; ++k) m = std::max(m, logits.at(r, base + k));
      double acc = 0.0;
      for (int k = 0; k < bins; ++k) acc += std::exp(logits.at(r, base + k) - m);
      const double lse = m + std::log(acc);
      for (int k = 0; k < bins; ++k) out.at(r, base + k) = logits.at(r, base + k) - lse;
    }
  }
  return out;
}

// ----- optimizer ----- //

void adam_step(ParamStore& store, const std::vector<Tensor>& grads, AdamState& state) {
  if (grads.size() != store.values.size())
    throw std::invalid_argument("adam_step: grads do not match params");
  const size_t total = store.total_size();
  if (state.m.empty()) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
  }
  if (state.m.size() != total) throw std::invalid_argument("adam_step: state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  size_t off = 0;
  for (size_t i = 0; i < store.values.size(); ++i) {
    Tensor& p = store.values[i];
    const Tensor& g = grads[i];
    if (g.rows != p.rows || g.cols != p.cols)
      throw std::invalid_argument("adam_step: grad shape mismatch");
    for (size_t k = 0; k < p.data.size(); ++k) {
      double& m = state.m[off + k];
      double& v = state.v[off + k];
      const double gk = g.data[k];
      m = state.beta1 * m + (1.0 - state.beta1) * gk;
      v = state.beta2 * v + (1.0 - state.beta2) * gk * gk;
      p.data[k] -= state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps);
    }
    off += p.data.size();
  }
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (const double v : g.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.data) v *= s;
  }
  return norm;
}

void accumulate_grads(std::vector<Tensor>& acc, const std::vector<Tensor>& g) {
  if (acc.size() != g.size()) throw std::invalid_argument("accumulate_grads: size mismatch");
  for (size_t i = 0; i < acc.size(); ++i) {
    if (acc[i].size() != g[i].size())
      throw std::invalid_argument("accumulate_grads: shape mismatch");
    for (size_t k = 0; k < acc[i].data.size(); ++k) acc[i].data[k] += g[i].data[k];
  }
}

std::vector<Tensor> zero_grads_like(const ParamStore& store) {
  std::vector<Tensor> out;
  out.reserve(store.values.size());
  for (const Tensor& t : store.values) out.emplace_back(t.rows, t.cols);
  return out;
}

// ----- checkpoints ----- //

void save_checkpoint(const ParamStore& store, const std::map<std::string, std::string>& meta,
                     const std::string& path) {
  nlohmann::json header;
  header["format"] = "ppckpt";
  header["version"] = 1;
  nlohmann::json params = nlohmann::json::array();
  for (size_t i = 0; i < store.values.size(); ++i) {
    params.push_back({{"name", store.names[i]},
                      {"rows", store.values[i].rows},
                      {"cols", store.values[i].cols}});
  }
  header["params"] = params;
  header["meta"] = meta;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f << header.dump() << "\n";
  static_assert(sizeof(double) == 8);
  for (const Tensor& t : store.values) {
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::pair<ParamStore, std::map<std::string, std::string>> load_checkpoint(
    const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("load_checkpoint: missing header");
  nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("format", "") != "ppckpt" || header.value("version", 0) != 1)
    throw std::runtime_error("load_checkpoint: unsupported format/version in " + path);

  ParamStore store;
  for (const auto& p : header["params"]) {
    Tensor t(p["rows"].get<int>(), p["cols"].get<int>());
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
    store.add(p["name"].get<std::string>(), std::move(t));
  }
  std::map<std::string, std::string> meta;
  if (header.contains("meta")) {
    for (const auto& [k, v] : header["meta"].items()) meta[k] = v.get<std::string>();
  }
  return {std::move(store), std::move(meta)};
}

}  // namespace planarpush::ad
