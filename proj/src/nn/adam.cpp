#include "flowids/nn/adam.hpp"

#include <cmath>

#include "flowids/errors.hpp"

namespace flowids::nn {

void AdamOptimizer::step(const std::vector<ParamRef>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const ParamRef& p : params) {
    if (!p.grad->all_finite()) {
      throw TrainingError("non-finite gradient for parameter '" + p.name +
                          "'");
    }
    auto [mit, fresh] = m_.try_emplace(p.name, Tensor(p.value->shape()));
    auto vit = v_.try_emplace(p.name, Tensor(p.value->shape())).first;
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (!fresh && !m.same_shape(*p.value)) {
      throw TrainingError("optimizer state for '" + p.name +
                          "' has shape " + shape_str(m.shape()) +
                          " but parameter is " + shape_str(p.value->shape()));
    }
    Tensor& theta = *p.value;
    const Tensor& g = *p.grad;
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
    }
  }
}

void AdamOptimizer::restore(std::int64_t t, std::map<std::string, Tensor> m,
                            std::map<std::string, Tensor> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace flowids::nn
