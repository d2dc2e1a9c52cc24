#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "flowids/tensor.hpp"

namespace flowids::lime {

struct LimeConfig {
  std::size_t n_samples = 5000;
  double kernel_width = 0.0;  // <= 0 picks the 0.75 * sqrt(d) heuristic
  std::size_t top_k = 10;
  double perturbation_scale = 1.0;
  double ridge = 1e-8;
  std::uint64_t seed = 0;
};

double resolve_kernel_width(const LimeConfig& cfg, std::size_t d);

struct Perturbation {
  Tensor samples;  // row 0 is the instance itself
  std::vector<double> distances;
};

// Gaussian perturbations in the scaled feature space; distances are
// Euclidean to the instance.
Perturbation perturb(const std::vector<double>& instance,
                     const LimeConfig& cfg);

// exp(-distance^2 / width^2), strictly decreasing, 1 at distance 0.
double proximity_kernel(double distance, double width);

struct SurrogateFit {
  std::vector<std::size_t> selected;
  std::vector<double> coefficients;  // aligned with selected
  double intercept = 0.0;
  double r2 = 0.0;  // weighted, against the weighted mean baseline
};

// Forward selection on weighted squared-error reduction up to top_k
// features, then exact weighted least squares on the selected set (normal
// equations with ridge damping on the solve). Rank deficiency never hard
// fails; the damping resolves it.
SurrogateFit fit_surrogate(const Tensor& samples,
                           const std::vector<double>& target,
                           const std::vector<double>& weights,
                           std::size_t top_k, double ridge);

struct Explanation {
  std::size_t instance_id = 0;
  int explained_class = 0;
  std::vector<double> probabilities;  // model output on the instance
  std::vector<std::pair<std::string, double>> features;  // |w| descending
  double intercept = 0.0;
  double r2 = 0.0;
  bool low_fidelity = false;  // r2 < 0.5
};

// Model adapter: [n, d] -> per-class probabilities. A single-column output
// is treated as the binary positive-class probability.
using PredictProbaFn = std::function<Tensor(const Tensor&)>;

Explanation explain_instance(const PredictProbaFn& model,
                             const std::vector<double>& instance,
                             int class_idx, const LimeConfig& cfg,
                             const std::vector<std::string>& feature_names,
                             std::size_t instance_id = 0);

std::string explanation_to_json(const Explanation& ex, const LimeConfig& cfg,
                                std::size_t d);
// Signed bar list per class, in the style of the usual tabular LIME plots.
std::string render_explanation(const Explanation& ex,
                               const std::vector<std::string>& class_names);

}  // namespace flowids::lime
