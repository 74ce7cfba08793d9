#include "nbslu/adam.hpp"

#include <cmath>

namespace nbslu {

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Tensor* p : params_) {
    m_.emplace_back(p->values.size(), 0.0);
    v_.emplace_back(p->values.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    if (p.grad.size() != p.values.size())
      throw std::invalid_argument("adam: grad missing or shape mismatch for parameter " + std::to_string(i));
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < p.values.size(); ++k) {
      double g = p.grad[k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      p.values[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p.zero_grad();
  }
}

double clip_global_norm(const std::vector<Tensor*>& params, double max_norm) {
  double sq = 0.0;
  for (Tensor* p : params)
    for (double g : p->grad) sq += g * g;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (Tensor* p : params)
      for (double& g : p->grad) g *= s;
  }
  return norm;
}

void scale_grads(const std::vector<Tensor*>& params, double factor) {
  for (Tensor* p : params)
    for (double& g : p->grad) g *= factor;
}

}  // namespace nbslu
