#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowids/errors.hpp"
#include "flowids/explain/lime.hpp"
#include "flowids/nn/layers.hpp"
#include "flowids/rng.hpp"

using namespace flowids;
using namespace flowids::lime;

namespace {

// Full weighted least squares via Gaussian elimination; independent of the
// Cholesky/forward-selection path under test.
std::vector<double> wls_oracle(const Tensor& x, const std::vector<double>& y,
                               const std::vector<double>& w) {
  const std::size_t n = x.dim(0), d = x.dim(1), m = d + 1;
  std::vector<double> a(m * m, 0.0), b(m, 0.0);
  std::vector<double> row(m);
  for (std::size_t i = 0; i < n; ++i) {
    row[0] = 1.0;
    for (std::size_t j = 0; j < d; ++j) row[j + 1] = x.at(i, j);
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t q = 0; q < m; ++q) {
        a[p * m + q] += w[i] * row[p] * row[q];
      }
      b[p] += w[i] * row[p] * y[i];
    }
  }
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(a[r * m + col]) > std::abs(a[pivot * m + col])) pivot = r;
    }
    for (std::size_t q = 0; q < m; ++q) std::swap(a[col * m + q], a[pivot * m + q]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = 0; r < m; ++r) {
      if (r == col || a[r * m + col] == 0.0) continue;
      const double factor = a[r * m + col] / a[col * m + col];
      for (std::size_t q = 0; q < m; ++q) a[r * m + q] -= factor * a[col * m + q];
      b[r] -= factor * b[col];
    }
  }
  std::vector<double> beta(m);
  for (std::size_t p = 0; p < m; ++p) beta[p] = b[p] / a[p * m + p];
  return beta;
}

PredictProbaFn linear_softmax_model(const Tensor& w,
                                    const std::vector<double>& bias) {
  return [w, bias](const Tensor& x) {
    Tensor z = matmul(x, w);
    for (std::size_t i = 0; i < z.dim(0); ++i) {
      for (std::size_t j = 0; j < z.dim(1); ++j) z.at(i, j) += bias[j];
    }
    return nn::softmax(z);
  };
}

// d p_c / d x at the instance, for a linear-softmax model.
std::vector<double> softmax_gradient(const Tensor& w,
                                     const std::vector<double>& bias,
                                     const std::vector<double>& x0,
                                     std::size_t cls) {
  const std::size_t d = w.dim(0), k = w.dim(1);
  Tensor xin({1, d});
  for (std::size_t j = 0; j < d; ++j) xin.at(0, j) = x0[j];
  const Tensor p = linear_softmax_model(w, bias)(xin);
  std::vector<double> grad(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double mean_w = 0.0;
    for (std::size_t c = 0; c < k; ++c) mean_w += p.at(0, c) * w.at(j, c);
    grad[j] = p.at(0, cls) * (w.at(j, cls) - mean_w);
  }
  return grad;
}

}  // namespace

TEST_CASE("perturbation sampling") {
  LimeConfig cfg;
  cfg.n_samples = 50;
  cfg.seed = 5;
  const std::vector<double> instance{1.0, -2.0, 0.5};
  SUBCASE("row zero is the instance at distance zero") {
    Perturbation p = perturb(instance, cfg);
    CHECK(p.distances[0] == 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(p.samples.at(0, j) == instance[j]);
    }
    for (std::size_t i = 1; i < 50; ++i) CHECK(p.distances[i] > 0.0);
  }
  SUBCASE("zero scale collapses onto the instance") {
    cfg.perturbation_scale = 0.0;
    Perturbation p = perturb(instance, cfg);
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(p.distances[i] == 0.0);
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(p.samples.at(i, j) == instance[j]);
      }
    }
  }
  SUBCASE("seeded runs are identical") {
    Perturbation a = perturb(instance, cfg);
    Perturbation b = perturb(instance, cfg);
    for (std::size_t i = 0; i < a.samples.numel(); ++i) {
      CHECK(a.samples[i] == b.samples[i]);
    }
  }
  SUBCASE("fewer than 10 samples is rejected") {
    cfg.n_samples = 5;
    CHECK_THROWS_AS(perturb(instance, cfg), ConfigError);
  }
}

TEST_CASE("proximity kernel") {
  CHECK(proximity_kernel(0.0, 2.0) == doctest::Approx(1.0));
  CHECK(proximity_kernel(2.0, 2.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  SUBCASE("strictly decreasing") {
    double prev = proximity_kernel(0.0, 1.5);
    for (double d = 0.1; d < 5.0; d += 0.1) {
      const double w = proximity_kernel(d, 1.5);
      CHECK(w < prev);
      CHECK(w > 0.0);
      prev = w;
    }
  }
  SUBCASE("non-positive width rejected") {
    CHECK_THROWS_AS(proximity_kernel(1.0, 0.0), ConfigError);
    CHECK_THROWS_AS(proximity_kernel(1.0, -1.0), ConfigError);
  }
}

TEST_CASE("surrogate fitting") {
  Rng rng(9);
  const std::size_t n = 400, d = 5;
  Tensor x({n, d});
  for (double& v : x.values()) v = rng.normal();
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) weights[i] = 0.2 + rng.uniform();

  SUBCASE("planted linear signal is found with a tight coefficient") {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = 3.0 * x.at(i, 1) + 0.01 * rng.normal();
    }
    SurrogateFit fit = fit_surrogate(x, y, weights, 1, 1e-8);
    REQUIRE(fit.selected == std::vector<std::size_t>{1});
    CHECK(fit.coefficients[0] == doctest::Approx(3.0).epsilon(0.1));
    CHECK(fit.r2 > 0.99);
  }
  SUBCASE("constant target gives zero weights and the right intercept") {
    std::vector<double> y(n, 2.5);
    SurrogateFit fit = fit_surrogate(x, y, weights, 3, 1e-8);
    for (double c : fit.coefficients) CHECK(std::abs(c) < 1e-6);
    CHECK(fit.intercept == doctest::Approx(2.5).epsilon(1e-9));
  }
  SUBCASE("full budget with vanishing damping matches the WLS oracle") {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = 0.7 * x.at(i, 0) - 1.2 * x.at(i, 3) + 0.4 + 0.05 * rng.normal();
    }
    SurrogateFit fit = fit_surrogate(x, y, weights, d, 1e-12);
    const std::vector<double> oracle = wls_oracle(x, y, weights);
    CHECK(std::abs(fit.intercept - oracle[0]) < 1e-6);
    for (std::size_t i = 0; i < fit.selected.size(); ++i) {
      CHECK(std::abs(fit.coefficients[i] - oracle[fit.selected[i] + 1]) < 1e-6);
    }
  }
  SUBCASE("zero-weight duplicate rows change nothing") {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = x.at(i, 2) - 0.5 * x.at(i, 4) + 0.02 * rng.normal();
    }
    SurrogateFit base = fit_surrogate(x, y, weights, 2, 1e-8);

    Tensor x2({n + 1, d});
    std::vector<double> y2 = y;
    std::vector<double> w2 = weights;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) x2.at(i, j) = x.at(i, j);
    }
    for (std::size_t j = 0; j < d; ++j) x2.at(n, j) = 1e6;  // far-away junk
    y2.push_back(-1e6);
    w2.push_back(0.0);
    SurrogateFit padded = fit_surrogate(x2, y2, w2, 2, 1e-8);
    CHECK(padded.selected == base.selected);
    for (std::size_t i = 0; i < base.coefficients.size(); ++i) {
      CHECK(padded.coefficients[i] == base.coefficients[i]);
    }
  }
  SUBCASE("degenerate weights are rejected") {
    std::vector<double> y(n, 1.0);
    CHECK_THROWS_AS(fit_surrogate(x, y, std::vector<double>(n, 0.0), 2, 1e-8),
                    DataError);
    std::vector<double> few(n, 0.0);
    few[0] = few[1] = 1.0;
    CHECK_THROWS_AS(fit_surrogate(x, y, few, 2, 1e-8), DataError);
  }
  SUBCASE("rank-deficient design still solves") {
    Tensor xdup({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      xdup.at(i, 0) = x.at(i, 0);
      xdup.at(i, 1) = x.at(i, 0);  // exact duplicate column
    }
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x.at(i, 0);
    SurrogateFit fit = fit_surrogate(xdup, y, weights, 2, 1e-8);
    CHECK(fit.coefficients.size() == 2);
    CHECK(std::isfinite(fit.coefficients[0]));
    CHECK(std::isfinite(fit.coefficients[1]));
  }
}

TEST_CASE("explain_instance") {
  LimeConfig cfg;
  cfg.n_samples = 1500;
  cfg.seed = 3;
  const std::size_t d = 6;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("f" + std::to_string(j));

  SUBCASE("constant model gets zero attributions") {
    PredictProbaFn constant = [](const Tensor& x) {
      Tensor p({x.dim(0), 3});
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        p.at(i, 0) = 0.2;
        p.at(i, 1) = 0.5;
        p.at(i, 2) = 0.3;
      }
      return p;
    };
    const std::vector<double> instance(d, 0.3);
    Explanation ex = explain_instance(constant, instance, 1, cfg, names);
    for (const auto& [name, weight] : ex.features) {
      CHECK(std::abs(weight) < 1e-6);
    }
    CHECK(ex.probabilities[1] == doctest::Approx(0.5));
  }
  SUBCASE("linear softmax signs match the true gradient") {
    int agree = 0, total = 0;
    for (std::uint64_t trial = 1; trial <= 5; ++trial) {
      Rng rng(trial * 13);
      Tensor w({d, 3});
      for (double& v : w.values()) v = 0.4 * rng.normal();
      std::vector<double> bias{0.1, -0.1, 0.0};
      std::vector<double> instance(d);
      for (double& v : instance) v = rng.normal();
      cfg.seed = trial;
      cfg.top_k = 4;
      Explanation ex = explain_instance(linear_softmax_model(w, bias),
                                        instance, 2, cfg, names);
      const std::vector<double> grad = softmax_gradient(w, bias, instance, 2);
      for (const auto& [name, weight] : ex.features) {
        const std::size_t j = static_cast<std::size_t>(name[1] - '0');
        ++total;
        if ((weight > 0) == (grad[j] > 0)) ++agree;
      }
    }
    CHECK(agree >= total * 9 / 10);
  }
  SUBCASE("complementary binary classes negate each other") {
    Rng rng(77);
    Tensor w({d, 1});
    for (double& v : w.values()) v = 0.5 * rng.normal();
    PredictProbaFn binary = [w](const Tensor& x) {
      Tensor z = matmul(x, w);
      Tensor p({x.dim(0), 1});
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        p.at(i, 0) = 1.0 / (1.0 + std::exp(-z.at(i, 0)));
      }
      return p;
    };
    std::vector<double> instance(d);
    for (double& v : instance) v = rng.normal();
    cfg.top_k = d;
    cfg.seed = 21;
    Explanation pos = explain_instance(binary, instance, 1, cfg, names);
    Explanation neg = explain_instance(binary, instance, 0, cfg, names);
    REQUIRE(pos.features.size() == neg.features.size());
    for (std::size_t i = 0; i < pos.features.size(); ++i) {
      CHECK(pos.features[i].first == neg.features[i].first);
      CHECK(std::abs(pos.features[i].second + neg.features[i].second) < 1e-9);
    }
    CHECK(std::abs(pos.probabilities[1] - neg.probabilities[1]) < 1e-15);
  }
  SUBCASE("deterministic explanations serialize identically") {
    PredictProbaFn wiggly = [](const Tensor& x) {
      Tensor p({x.dim(0), 2});
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.dim(1); ++j) s += x.at(i, j);
        const double v = 0.5 + 0.4 * std::tanh(s);
        p.at(i, 0) = 1.0 - v;
        p.at(i, 1) = v;
      }
      return p;
    };
    const std::vector<double> instance(d, 0.1);
    cfg.seed = 4;
    Explanation a = explain_instance(wiggly, instance, 1, cfg, names);
    Explanation b = explain_instance(wiggly, instance, 1, cfg, names);
    CHECK(explanation_to_json(a, cfg, d) == explanation_to_json(b, cfg, d));
  }
  SUBCASE("hostile nonlinear model trips the low-fidelity flag") {
    PredictProbaFn thrash = [](const Tensor& x) {
      Tensor p({x.dim(0), 2});
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.dim(1); ++j) s += x.at(i, j) * x.at(i, j);
        const double v = 0.5 + 0.45 * std::sin(7.0 * s);
        p.at(i, 0) = 1.0 - v;
        p.at(i, 1) = v;
      }
      return p;
    };
    const std::vector<double> instance(d, 0.0);
    cfg.seed = 6;
    Explanation ex = explain_instance(thrash, instance, 1, cfg, names);
    CHECK(ex.r2 < 0.5);
    CHECK(ex.low_fidelity);
    CHECK(ex.r2 <= 1.0);
  }
  SUBCASE("rendering mentions the class and the top feature") {
    PredictProbaFn constant = [](const Tensor& x) {
      Tensor p({x.dim(0), 2});
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        p.at(i, 0) = 0.25;
        p.at(i, 1) = 0.75;
      }
      return p;
    };
    const std::vector<double> instance(d, 0.0);
    Explanation ex = explain_instance(constant, instance, 1, cfg, names);
    const std::string text = render_explanation(ex, {"normal", "abnormal"});
    CHECK(text.find("abnormal") != std::string::npos);
    CHECK(text.find("intercept") != std::string::npos);
  }
}
