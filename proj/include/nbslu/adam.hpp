#pragma once

#include <stdexcept>
#include <vector>

#include "nbslu/tensor.hpp"

namespace nbslu {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction over a fixed group of parameter tensors.
// Moments are laid out parallel to the group; t increments once per step().
class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamConfig cfg);

  // Applies one update from the accumulated grads, then zeroes them.
  void step();

  long long t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<double>& moment1(size_t i) const { return m_[i]; }
  const std::vector<double>& moment2(size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor*> params_;
  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales grads of `params` so their global L2 norm is at most `max_norm`.
// Returns the pre-clip norm.
double clip_global_norm(const std::vector<Tensor*>& params, double max_norm);

// Divides accumulated grads by `n` (batch averaging).
void scale_grads(const std::vector<Tensor*>& params, double factor);

}  // namespace nbslu
