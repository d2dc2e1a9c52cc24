#include "flowids/nn/losses.hpp"

#include <cmath>

#include "flowids/errors.hpp"

namespace flowids::nn {

namespace {

double clip_prob(double p) {
  if (p < kProbClip) return kProbClip;
  if (p > 1.0 - kProbClip) return 1.0 - kProbClip;
  return p;
}

// 0 inside the clip window, -1/+1 outside; a clipped coordinate has zero
// gradient, which is a kink for the checker.
std::int64_t clip_state(double p) {
  if (p < kProbClip) return -1;
  if (p > 1.0 - kProbClip) return 1;
  return 0;
}

}  // namespace

double CategoricalCrossentropy::forward(const Tensor& pred,
                                        const Tensor& target) {
  if (pred.rank() != 2 || !pred.same_shape(target)) {
    throw ShapeError("cross-entropy prediction " + shape_str(pred.shape()) +
                     " and target " + shape_str(target.shape()) +
                     " must both be [batch, K]");
  }
  const std::size_t n = pred.dim(0), k = pred.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double t = target.at(i, j);
      if (t != 0.0 && t != 1.0) {
        throw LabelError("target row " + std::to_string(i) +
                         " is not one-hot: entry " +
                         std::to_string(target.at(i, j)));
      }
      row_sum += t;
    }
    if (row_sum != 1.0) {
      throw LabelError("target row " + std::to_string(i) +
                       " is not one-hot: row sum " + std::to_string(row_sum));
    }
  }
  pred_ = pred;
  target_ = target;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (target.at(i, j) == 1.0) loss -= std::log(clip_prob(pred.at(i, j)));
    }
  }
  return loss / static_cast<double>(n);
}

Tensor CategoricalCrossentropy::backward() const {
  const std::size_t n = pred_.dim(0), k = pred_.dim(1);
  Tensor grad({n, k});
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double p = pred_.at(i, j);
      if (target_.at(i, j) == 1.0 && clip_state(p) == 0) {
        grad.at(i, j) = -inv_n / p;
      }
    }
  }
  return grad;
}

void CategoricalCrossentropy::append_kink_signature(
    std::vector<std::int64_t>& sig) const {
  for (std::size_t i = 0; i < pred_.numel(); ++i) {
    sig.push_back(clip_state(pred_[i]));
  }
}

double BinaryCrossentropy::forward(const Tensor& pred, const Tensor& target) {
  if (pred.rank() != 2 || pred.dim(1) != 1 || !pred.same_shape(target)) {
    throw ShapeError("binary cross-entropy wants [batch, 1] inputs, got " +
                     shape_str(pred.shape()) + " and " +
                     shape_str(target.shape()));
  }
  const std::size_t n = pred.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = target.at(i, 0);
    if (t != 0.0 && t != 1.0) {
      throw LabelError("binary target at row " + std::to_string(i) +
                       " must be 0 or 1, got " + std::to_string(t));
    }
  }
  pred_ = pred;
  target_ = target;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pred.at(i, 0);
    if (target.at(i, 0) == 1.0) {
      loss -= std::log(clip_prob(p));
    } else {
      loss -= std::log(clip_prob(1.0 - p));
    }
  }
  return loss / static_cast<double>(n);
}

Tensor BinaryCrossentropy::backward() const {
  const std::size_t n = pred_.dim(0);
  Tensor grad({n, 1});
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pred_.at(i, 0);
    if (target_.at(i, 0) == 1.0) {
      if (clip_state(p) == 0) grad.at(i, 0) = -inv_n / p;
    } else {
      if (clip_state(1.0 - p) == 0) grad.at(i, 0) = inv_n / (1.0 - p);
    }
  }
  return grad;
}

void BinaryCrossentropy::append_kink_signature(
    std::vector<std::int64_t>& sig) const {
  for (std::size_t i = 0; i < pred_.numel(); ++i) {
    const double p = pred_[i];
    sig.push_back(target_[i] == 1.0 ? clip_state(p) : clip_state(1.0 - p));
  }
}

Tensor one_hot_targets(const std::vector<int>& labels, std::size_t k) {
  Tensor t({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw LabelError("class index " + std::to_string(y) + " at row " +
                       std::to_string(i) + " outside [0, " +
                       std::to_string(k) + ")");
    }
    t.at(i, static_cast<std::size_t>(y)) = 1.0;
  }
  return t;
}

}  // namespace flowids::nn
