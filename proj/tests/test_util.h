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

// Shared helpers for unit and acceptance tests: central finite-difference
// gradient checking against the tape.

#ifndef PLANARPUSH_TESTS_TEST_UTIL_H_
#define PLANARPUSH_TESTS_TEST_UTIL_H_

#include <cmath>
#include <functional>
#include <vector>

#include "planarpush/autodiff.h"

namespace planarpush::testutil {

// Builds a scalar function of the given leaf tensors. `build` receives a
// fresh tape and the leaf refs (in input order) and returns the scalar root.
using ScalarGraph =
    std::function<ad::Ref(ad::Tape&, const std::vector<ad::Ref>&)>;

inline double eval_scalar(const std::vector<ad::Tensor>& inputs, const ScalarGraph& build) {
  ad::Tape tape;
  std::vector<ad::Ref> refs;
  refs.reserve(inputs.size());
  for (const ad::Tensor& t : inputs) refs.push_back(tape.leaf(t));
  return tape.val(build(tape, refs)).data[0];
}

// Maximum scaled error between tape gradients and central finite differences
// over every element of every input: |a - n| / max(1, |a|, |n|).
inline double max_grad_error(const std::vector<ad::Tensor>& inputs, const ScalarGraph& build,
                             double h = 1e-5) {
  // analytic pass
  ad::Tape tape;
  std::vector<ad::Ref> refs;
  for (const ad::Tensor& t : inputs) refs.push_back(tape.leaf(t));
  tape.backward(build(tape, refs));

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const ad::Tensor& analytic = tape.grad(refs[i]);
    for (size_t k = 0; k < inputs[i].data.size(); ++k) {
      std::vector<ad::Tensor> plus = inputs;
      std::vector<ad::Tensor> minus = inputs;
      plus[i].data[k] += h;
      minus[i].data[k] -= h;
      const double numeric = (eval_scalar(plus, build) - eval_scalar(minus, build)) / (2.0 * h);
      const double a = analytic.data[k];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline ad::Tensor random_tensor(int rows, int cols, Rng& rng, double scale = 1.0) {
  ad::Tensor t(rows, cols);
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace planarpush::testutil

#endif  // PLANARPUSH_TESTS_TEST_UTIL_H_
