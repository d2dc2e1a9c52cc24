#include "flowids/explain/lime.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "flowids/errors.hpp"
#include "flowids/rng.hpp"
#include "flowids/util.hpp"

namespace flowids::lime {

using nlohmann::json;

double resolve_kernel_width(const LimeConfig& cfg, std::size_t d) {
  if (cfg.kernel_width > 0.0) return cfg.kernel_width;
  return 0.75 * std::sqrt(static_cast<double>(d));
}

Perturbation perturb(const std::vector<double>& instance,
                     const LimeConfig& cfg) {
  if (cfg.n_samples < 10) {
    throw ConfigError("lime needs at least 10 samples, got " +
                      std::to_string(cfg.n_samples));
  }
  const std::size_t d = instance.size();
  Perturbation out;
  out.samples = Tensor({cfg.n_samples, d});
  out.distances.assign(cfg.n_samples, 0.0);
  Rng rng(cfg.seed);
  for (std::size_t j = 0; j < d; ++j) out.samples.at(0, j) = instance[j];
  for (std::size_t i = 1; i < cfg.n_samples; ++i) {
    double dist2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double eps = cfg.perturbation_scale * rng.normal();
      out.samples.at(i, j) = instance[j] + eps;
      dist2 += eps * eps;
    }
    out.distances[i] = std::sqrt(dist2);
  }
  return out;
}

double proximity_kernel(double distance, double width) {
  if (!(width > 0.0)) {
    throw ConfigError("kernel width must be positive, got " +
                      util::format_double(width));
  }
  return std::exp(-(distance * distance) / (width * width));
}

namespace {

// Dense Cholesky solve for the small SPD systems of the surrogate fit.
// Escalates the damping instead of failing on rank-deficient designs.
std::vector<double> solve_spd_damped(std::vector<double> a,
                                     const std::vector<double>& b,
                                     double ridge) {
  const std::size_t k = b.size();
  double damping = ridge;
  for (int attempt = 0; attempt < 24; ++attempt) {
    std::vector<double> chol = a;
    for (std::size_t i = 0; i < k; ++i) chol[i * k + i] += damping;
    bool ok = true;
    for (std::size_t i = 0; i < k && ok; ++i) {
      for (std::size_t j = i; j < k; ++j) {
        double sum = chol[j * k + i];
        for (std::size_t p = 0; p < i; ++p) {
          sum -= chol[i * k + p] * chol[j * k + p];
        }
        if (i == j) {
          if (sum <= 0.0) {
            ok = false;
            break;
          }
          chol[i * k + i] = std::sqrt(sum);
        } else {
          chol[j * k + i] = sum / chol[i * k + i];
        }
      }
    }
    if (!ok) {
      damping = damping <= 0.0 ? 1e-12 : damping * 10.0;
      continue;
    }
    std::vector<double> y(k), x(k);
    for (std::size_t i = 0; i < k; ++i) {
      double sum = b[i];
      for (std::size_t p = 0; p < i; ++p) sum -= chol[i * k + p] * y[p];
      y[i] = sum / chol[i * k + i];
    }
    for (std::size_t i = k; i-- > 0;) {
      double sum = y[i];
      for (std::size_t p = i + 1; p < k; ++p) sum -= chol[p * k + i] * x[p];
      x[i] = sum / chol[i * k + i];
    }
    return x;
  }
  throw DataError("surrogate normal equations never became positive definite");
}

struct GramSystem {
  std::size_t d = 0;
  std::vector<double> g;  // (d+1)^2, index 0 is the intercept column
  std::vector<double> c;  // d+1
  double yty = 0.0;
  double sw = 0.0;
  double sy = 0.0;
};

GramSystem build_gram(const Tensor& samples, const std::vector<double>& target,
                      const std::vector<double>& weights) {
  const std::size_t n = samples.dim(0), d = samples.dim(1);
  GramSystem sys;
  sys.d = d;
  const std::size_t m = d + 1;
  sys.g.assign(m * m, 0.0);
  sys.c.assign(m, 0.0);
  std::vector<double> row(m);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights[i];
    if (w == 0.0) continue;
    row[0] = 1.0;
    for (std::size_t j = 0; j < d; ++j) row[j + 1] = samples.at(i, j);
    for (std::size_t a = 0; a < m; ++a) {
      const double wa = w * row[a];
      for (std::size_t b = a; b < m; ++b) sys.g[a * m + b] += wa * row[b];
      sys.c[a] += wa * target[i];
    }
    sys.yty += w * target[i] * target[i];
    sys.sw += w;
    sys.sy += w * target[i];
  }
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < a; ++b) sys.g[a * m + b] = sys.g[b * m + a];
  }
  return sys;
}

struct SubsetSolve {
  std::vector<double> beta;
  double sse = 0.0;
};

SubsetSolve solve_subset(const GramSystem& sys,
                         const std::vector<std::size_t>& subset,
                         double ridge) {
  const std::size_t k = subset.size();
  const std::size_t m = sys.d + 1;
  std::vector<double> a(k * k);
  std::vector<double> b(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      a[i * k + j] = sys.g[subset[i] * m + subset[j]];
    }
    b[i] = sys.c[subset[i]];
  }
  SubsetSolve out;
  out.beta = solve_spd_damped(std::move(a), b, ridge);
  // SSE from the quadratic form; exact given the Gram matrix.
  double lin = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    lin += out.beta[i] * b[i];
    double gi = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      gi += sys.g[subset[i] * m + subset[j]] * out.beta[j];
    }
    quad += out.beta[i] * gi;
  }
  out.sse = sys.yty - 2.0 * lin + quad;
  return out;
}

}  // namespace

SurrogateFit fit_surrogate(const Tensor& samples,
                           const std::vector<double>& target,
                           const std::vector<double>& weights,
                           std::size_t top_k, double ridge) {
  const std::size_t n = samples.dim(0), d = samples.dim(1);
  if (target.size() != n || weights.size() != n) {
    throw ShapeError("surrogate fit: " + std::to_string(n) + " samples vs " +
                     std::to_string(target.size()) + " targets and " +
                     std::to_string(weights.size()) + " weights");
  }
  if (top_k < 1 || top_k > d) {
    throw ConfigError("top_k must be in [1, " + std::to_string(d) + "], got " +
                      std::to_string(top_k));
  }
  std::size_t positive = 0;
  for (double w : weights) {
    if (w < 0.0) throw DataError("proximity weights must be nonnegative");
    if (w > 0.0) ++positive;
  }
  if (positive == 0) {
    throw DataError("all proximity weights are zero; nothing to fit");
  }
  if (positive < top_k + 1) {
    throw DataError("need at least top_k + 1 positively weighted samples (" +
                    std::to_string(top_k + 1) + "), got " +
                    std::to_string(positive));
  }

  const GramSystem sys = build_gram(samples, target, weights);

  std::vector<std::size_t> subset{0};  // intercept column
  std::vector<bool> used(d + 1, false);
  used[0] = true;
  for (std::size_t round = 0; round < top_k; ++round) {
    double best_sse = 0.0;
    std::size_t best = 0;
    bool found = false;
    for (std::size_t j = 1; j <= d; ++j) {
      if (used[j]) continue;
      std::vector<std::size_t> candidate = subset;
      candidate.push_back(j);
      const double sse = solve_subset(sys, candidate, ridge).sse;
      if (!found || sse < best_sse) {
        found = true;
        best_sse = sse;
        best = j;
      }
    }
    if (!found) break;
    used[best] = true;
    subset.push_back(best);
  }
  std::sort(subset.begin() + 1, subset.end());

  const SubsetSolve final_fit = solve_subset(sys, subset, ridge);
  SurrogateFit fit;
  fit.intercept = final_fit.beta[0];
  for (std::size_t i = 1; i < subset.size(); ++i) {
    fit.selected.push_back(subset[i] - 1);
    fit.coefficients.push_back(final_fit.beta[i]);
  }
  const double sst = sys.yty - sys.sy * sys.sy / sys.sw;
  fit.r2 = sst <= 0.0 ? 1.0 : 1.0 - final_fit.sse / sst;
  return fit;
}

Explanation explain_instance(const PredictProbaFn& model,
                             const std::vector<double>& instance,
                             int class_idx, const LimeConfig& cfg,
                             const std::vector<std::string>& feature_names,
                             std::size_t instance_id) {
  const std::size_t d = instance.size();
  if (feature_names.size() != d) {
    throw ShapeError("got " + std::to_string(feature_names.size()) +
                     " feature names for " + std::to_string(d) + " features");
  }
  const Perturbation pert = perturb(instance, cfg);
  const Tensor raw = model(pert.samples);
  if (raw.rank() != 2 || raw.dim(0) != cfg.n_samples) {
    throw ShapeError("model returned " + shape_str(raw.shape()) + " for " +
                     std::to_string(cfg.n_samples) + " samples");
  }

  const bool binary_column = raw.dim(1) == 1;
  const std::size_t n_classes = binary_column ? 2 : raw.dim(1);
  if (class_idx < 0 || static_cast<std::size_t>(class_idx) >= n_classes) {
    throw ConfigError("class index " + std::to_string(class_idx) +
                      " outside [0, " + std::to_string(n_classes) + ")");
  }
  std::vector<double> target(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    if (binary_column) {
      const double p = raw.at(i, 0);
      target[i] = class_idx == 1 ? p : 1.0 - p;
    } else {
      target[i] = raw.at(i, static_cast<std::size_t>(class_idx));
    }
  }

  const double width = resolve_kernel_width(cfg, d);
  std::vector<double> weights(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    weights[i] = proximity_kernel(pert.distances[i], width);
  }

  const std::size_t top_k = std::min(cfg.top_k, d);
  const SurrogateFit fit =
      fit_surrogate(pert.samples, target, weights, top_k, cfg.ridge);

  Explanation ex;
  ex.instance_id = instance_id;
  ex.explained_class = class_idx;
  if (binary_column) {
    const double p = raw.at(0, 0);
    ex.probabilities = {1.0 - p, p};
  } else {
    ex.probabilities.assign(raw.dim(1), 0.0);
    for (std::size_t j = 0; j < raw.dim(1); ++j) {
      ex.probabilities[j] = raw.at(0, j);
    }
  }
  std::vector<std::size_t> order(fit.selected.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double wa = std::abs(fit.coefficients[a]);
    const double wb = std::abs(fit.coefficients[b]);
    if (wa != wb) return wa > wb;
    return fit.selected[a] < fit.selected[b];
  });
  for (std::size_t i : order) {
    ex.features.emplace_back(feature_names[fit.selected[i]],
                             fit.coefficients[i]);
  }
  ex.intercept = fit.intercept;
  ex.r2 = fit.r2;
  ex.low_fidelity = fit.r2 < 0.5;
  return ex;
}

std::string explanation_to_json(const Explanation& ex, const LimeConfig& cfg,
                                std::size_t d) {
  json features = json::array();
  for (const auto& [name, weight] : ex.features) {
    features.push_back({{"name", name}, {"weight", weight}});
  }
  const json doc{{"instance_id", ex.instance_id},
                 {"class", ex.explained_class},
                 {"probabilities", ex.probabilities},
                 {"features", features},
                 {"intercept", ex.intercept},
                 {"r2", ex.r2},
                 {"low_fidelity", ex.low_fidelity},
                 {"config",
                  {{"n_samples", cfg.n_samples},
                   {"kernel_width", resolve_kernel_width(cfg, d)},
                   {"top_k", cfg.top_k},
                   {"perturbation_scale", cfg.perturbation_scale},
                   {"ridge", cfg.ridge},
                   {"seed", cfg.seed}}}};
  return doc.dump(2) + "\n";
}

std::string render_explanation(const Explanation& ex,
                               const std::vector<std::string>& class_names) {
  std::ostringstream out;
  auto class_name = [&](std::size_t c) {
    return c < class_names.size() ? class_names[c]
                                  : "class " + std::to_string(c);
  };
  out << "instance " << ex.instance_id << "\n";
  out << "class probabilities:";
  for (std::size_t c = 0; c < ex.probabilities.size(); ++c) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %s=%.4f", class_name(c).c_str(),
                  ex.probabilities[c]);
    out << buf;
  }
  out << "\n";
  char head[128];
  std::snprintf(head, sizeof(head), "explained class: %s  (surrogate r2=%.4f)",
                class_name(static_cast<std::size_t>(ex.explained_class)).c_str(),
                ex.r2);
  out << head << "\n";
  if (ex.low_fidelity) {
    out << "warning: low surrogate fidelity (r2 < 0.5); treat weights with care\n";
  }
  double max_abs = 0.0;
  for (const auto& [name, weight] : ex.features) {
    max_abs = std::max(max_abs, std::abs(weight));
  }
  std::size_t name_width = 0;
  for (const auto& [name, weight] : ex.features) {
    name_width = std::max(name_width, name.size());
  }
  for (const auto& [name, weight] : ex.features) {
    const int bar =
        max_abs == 0.0
            ? 0
            : static_cast<int>(std::round(std::abs(weight) / max_abs * 24.0));
    char line[256];
    std::snprintf(line, sizeof(line), "  %-*s %+.5f |%s", (int)name_width,
                  name.c_str(), weight, std::string(bar, '#').c_str());
    out << line << "\n";
  }
  char tail[64];
  std::snprintf(tail, sizeof(tail), "intercept %+.5f", ex.intercept);
  out << tail << "\n";
  return out.str();
}

}  // namespace flowids::lime
