#pragma once

// Central finite-difference oracle for the autodiff tape. Builds the loss
// twice per perturbed entry and compares against the analytic gradient. Kept
// independent of the backward implementation it checks.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nbslu/graph.hpp"
#include "nbslu/rng.hpp"
#include "nbslu/tensor.hpp"

namespace nbslu::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string where;
};

// `build` maps a tape plus leaves over `inputs` to a scalar loss value.
using LossBuilder = std::function<Val(Tape&, const std::vector<Val>&)>;

inline GradCheckResult finite_diff_check(std::vector<Tensor>& inputs, const LossBuilder& build,
                                         double h = 1e-5) {
  for (Tensor& t : inputs) {
    t.requires_grad = true;
    t.grad.clear();
    t.ensure_grad();
  }
  // Evaluate while the tape is alive; only the scalar escapes.
  auto eval = [&]() {
    Tape tape;
    std::vector<Val> leaves;
    leaves.reserve(inputs.size());
    for (Tensor& t : inputs) leaves.push_back(tape.leaf(&t));
    return build(tape, leaves).t().values[0];
  };
  {
    Tape tape;
    std::vector<Val> leaves;
    for (Tensor& t : inputs) leaves.push_back(tape.leaf(&t));
    Val loss = build(tape, leaves);
    tape.backward(loss);
  }
  GradCheckResult res;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    for (size_t i = 0; i < t.values.size(); ++i) {
      double keep = t.values[i];
      t.values[i] = keep + h;
      double up = eval();
      t.values[i] = keep - h;
      double dn = eval();
      t.values[i] = keep;
      double fd = (up - dn) / (2.0 * h);
      double an = t.grad[i];
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.where = "input " + std::to_string(ti) + " elem " + std::to_string(i);
      }
    }
  }
  return res;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace nbslu::testing
