#pragma once

#include <cstdint>
#include <vector>

#include "flowids/tensor.hpp"

namespace flowids::nn {

// Predictions are clipped to [kProbClip, 1 - kProbClip] before the log so a
// confident miss never produces an infinite loss.
inline constexpr double kProbClip = 1e-7;

// Mean-over-batch loss on probability outputs. backward() returns the
// gradient w.r.t. the predictions passed to the last forward().
class Loss {
 public:
  virtual ~Loss() = default;
  virtual double forward(const Tensor& pred, const Tensor& target) = 0;
  virtual Tensor backward() const = 0;
  // Clip indicators from the last forward; see Layer::append_kink_signature.
  virtual void append_kink_signature(std::vector<std::int64_t>& sig) const {
    (void)sig;
  }
};

// -sum target*ln(clip(pred)), averaged over the batch. Targets must be
// one-hot rows.
class CategoricalCrossentropy : public Loss {
 public:
  double forward(const Tensor& pred, const Tensor& target) override;
  Tensor backward() const override;
  void append_kink_signature(std::vector<std::int64_t>& sig) const override;

 private:
  Tensor pred_, target_;
};

// -[t*ln(clip(p)) + (1-t)*ln(clip(1-p))], averaged over the batch. Targets
// are single columns with entries in {0, 1}.
class BinaryCrossentropy : public Loss {
 public:
  double forward(const Tensor& pred, const Tensor& target) override;
  Tensor backward() const override;
  void append_kink_signature(std::vector<std::int64_t>& sig) const override;

 private:
  Tensor pred_, target_;
};

// Builds one-hot targets [n, k] from class indices.
Tensor one_hot_targets(const std::vector<int>& labels, std::size_t k);

}  // namespace flowids::nn
