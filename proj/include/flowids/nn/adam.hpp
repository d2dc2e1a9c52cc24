#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowids/nn/layers.hpp"
#include "flowids/tensor.hpp"

namespace flowids::nn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. First and second moments are kept per parameter
// name; the step counter is shared (incremented once per step() call, before
// the update).
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<ParamRef>& params);

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps_taken() const { return t_; }

  // Checkpoint access. Moments are created lazily on the first step.
  std::map<std::string, Tensor>& first_moments() { return m_; }
  std::map<std::string, Tensor>& second_moments() { return v_; }
  const std::map<std::string, Tensor>& first_moments() const { return m_; }
  const std::map<std::string, Tensor>& second_moments() const { return v_; }
  void restore(std::int64_t t, std::map<std::string, Tensor> m,
               std::map<std::string, Tensor> v);

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

}  // namespace flowids::nn
