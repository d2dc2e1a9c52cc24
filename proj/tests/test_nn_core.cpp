#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowids/errors.hpp"
#include "flowids/nn/adam.hpp"
#include "flowids/nn/grad_check.hpp"
#include "flowids/nn/layers.hpp"
#include "flowids/nn/losses.hpp"
#include "flowids/rng.hpp"
#include "flowids/tensor.hpp"

using namespace flowids;
using namespace flowids::nn;

namespace {

// Test-only loss: plain sum of all outputs. Exactly linear, so analytic and
// numeric gradients must agree to machine precision on linear nets.
class SumLoss : public Loss {
 public:
  double forward(const Tensor& pred, const Tensor& target) override {
    (void)target;
    shape_ = pred.shape();
    double s = 0.0;
    for (double v : pred.values()) s += v;
    return s;
  }
  Tensor backward() const override {
    Tensor g(shape_);
    g.fill(1.0);
    return g;
  }

 private:
  std::vector<std::size_t> shape_;
};

// Fixed random linear functional of the outputs; touches every output
// coordinate so gradients cannot hide.
class ProjectionLoss : public Loss {
 public:
  explicit ProjectionLoss(std::uint64_t seed) : seed_(seed) {}
  double forward(const Tensor& pred, const Tensor& target) override {
    (void)target;
    shape_ = pred.shape();
    Rng rng(seed_);
    weights_.assign(pred.numel(), 0.0);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      weights_[i] = rng.uniform(-1.0, 1.0);
      s += weights_[i] * pred[i];
    }
    return s;
  }
  Tensor backward() const override {
    Tensor g(shape_);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = weights_[i];
    return g;
  }

 private:
  std::uint64_t seed_;
  std::vector<std::size_t> shape_;
  std::vector<double> weights_;
};

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                     double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

void set_all_params(Sequential& net, double value) {
  for (const ParamRef& p : net.params()) p.value->fill(value);
}

}  // namespace

TEST_CASE("dense forward matches hand examples") {
  SUBCASE("identity weights pass input through") {
    Dense d(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}),
            Activation::kNone);
    Tensor y = d.forward(Tensor({1, 2}, {1, 2}));
    CHECK(y.at(0, 0) == doctest::Approx(1.0));
    CHECK(y.at(0, 1) == doctest::Approx(2.0));
  }
  SUBCASE("zero input passes bias through relu") {
    Dense d(Tensor({2, 2}, {5, -2, 7, 4}), Tensor({2}, {3, -1}),
            Activation::kRelu);
    Tensor y = d.forward(Tensor({1, 2}, {0, 0}));
    CHECK(y.at(0, 0) == doctest::Approx(3.0));
    CHECK(y.at(0, 1) == doctest::Approx(0.0));
  }
  SUBCASE("reference matrix multiply") {
    Dense d(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2}, {0, 0}),
            Activation::kNone);
    Tensor y = d.forward(Tensor({1, 2}, {1, 1}));
    CHECK(y.at(0, 0) == doctest::Approx(4.0));
    CHECK(y.at(0, 1) == doctest::Approx(6.0));
  }
  SUBCASE("shape mismatch names both shapes") {
    Dense d(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}),
            Activation::kNone);
    CHECK_THROWS_AS(d.forward(Tensor({1, 3}, {1, 2, 3})), ShapeError);
    try {
      d.forward(Tensor({1, 3}, {1, 2, 3}));
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[1, 3]") != std::string::npos);
      CHECK(msg.find("[2, 2]") != std::string::npos);
    }
  }
}

TEST_CASE("conv1d forward matches hand examples") {
  SUBCASE("delta kernel slices the input") {
    Conv1D conv(Tensor({1, 3, 1}, {0, 1, 0}), Tensor({1}, {0}),
                Activation::kNone);
    Tensor y = conv.forward(Tensor({1, 4, 1}, {1, 2, 3, 4}));
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 2, 1});
    CHECK(y.at(0, 0, 0) == doctest::Approx(2.0));
    CHECK(y.at(0, 1, 0) == doctest::Approx(3.0));
  }
  SUBCASE("all-ones kernel is a moving sum") {
    Conv1D conv(Tensor({1, 3, 1}, {1, 1, 1}), Tensor({1}, {0}),
                Activation::kNone);
    Tensor y = conv.forward(Tensor({1, 4, 1}, {1, 2, 3, 4}));
    CHECK(y.at(0, 0, 0) == doctest::Approx(6.0));
    CHECK(y.at(0, 1, 0) == doctest::Approx(9.0));
  }
  SUBCASE("relu clamps negative pre-activation") {
    Conv1D conv(Tensor({1, 3, 1}, {1, 1, 1}), Tensor({1}, {-100}),
                Activation::kRelu);
    Tensor y = conv.forward(Tensor({1, 4, 1}, {1, 2, 3, 4}));
    CHECK(y.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(y.at(0, 1, 0) == doctest::Approx(0.0));
  }
  SUBCASE("input shorter than kernel is an error") {
    Conv1D conv(Tensor({1, 3, 1}, {1, 1, 1}), Tensor({1}, {0}),
                Activation::kNone);
    CHECK_THROWS_AS(conv.forward(Tensor({1, 2, 1}, {1, 2})), ShapeError);
  }
}

TEST_CASE("conv1d moving-sum property against brute-force oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t length = 9;
    const std::size_t klen = 3;
    Tensor x = random_tensor({2, length, 1}, rng);
    Conv1D conv(Tensor({1, klen, 1}, {1, 1, 1}), Tensor({1}, {0}),
                Activation::kNone);
    Tensor y = conv.forward(x);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t t = 0; t + klen <= length; ++t) {
        double expect = 0.0;
        for (std::size_t j = 0; j < klen; ++j) expect += x.at(b, t + j, 0);
        CHECK(y.at(b, t, 0) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("maxpool1d windows, remainder, and negatives") {
  MaxPool1D pool(2);
  SUBCASE("windowed max") {
    Tensor y = pool.forward(Tensor({1, 4, 1}, {1, 3, 2, 5}));
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 2, 1});
    CHECK(y.at(0, 0, 0) == doctest::Approx(3.0));
    CHECK(y.at(0, 1, 0) == doctest::Approx(5.0));
  }
  SUBCASE("remainder dropped") {
    Tensor y = pool.forward(Tensor({1, 1, 1}, {7}));
    CHECK(y.shape() == std::vector<std::size_t>{1, 0, 1});
    CHECK(y.numel() == 0);
  }
  SUBCASE("max of negatives") {
    Tensor y = pool.forward(Tensor({1, 4, 1}, {-1, -2, -3, -4}));
    CHECK(y.at(0, 0, 0) == doctest::Approx(-1.0));
    CHECK(y.at(0, 1, 0) == doctest::Approx(-3.0));
  }
  SUBCASE("non-positive pool size rejected") {
    CHECK_THROWS_AS(MaxPool1D(0), ConfigError);
    CHECK_THROWS_AS(MaxPool1D(-2), ConfigError);
  }
  SUBCASE("backward routes gradient to the argmax") {
    Tensor x({1, 4, 1}, {1, 3, 2, 5});
    pool.forward(x);
    Tensor g({1, 2, 1}, {10, 20});
    Tensor dx = pool.backward(g);
    CHECK(dx.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(dx.at(0, 1, 0) == doctest::Approx(10.0));
    CHECK(dx.at(0, 2, 0) == doctest::Approx(0.0));
    CHECK(dx.at(0, 3, 0) == doctest::Approx(20.0));
  }
}

TEST_CASE("lstm cell closed forms at zero weights") {
  Rng rng(1);
  LstmCell cell(1, 1, rng);
  std::vector<ParamRef> params;
  cell.collect_params("cell", params);
  for (const ParamRef& p : params) p.value->fill(0.0);

  Tensor x({1, 1}, {0.7});
  Tensor h({1, 1}, {0.0});
  Tensor h2, c2;

  SUBCASE("zero state stays zero") {
    Tensor c({1, 1}, {0.0});
    lstm_cell_forward(cell, x, h, c, h2, c2);
    CHECK(h2.at(0, 0) == doctest::Approx(0.0));
    CHECK(c2.at(0, 0) == doctest::Approx(0.0));
  }
  SUBCASE("carry c=2 through half-open gates") {
    Tensor c({1, 1}, {2.0});
    lstm_cell_forward(cell, x, h, c, h2, c2);
    CHECK(c2.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(h2.at(0, 0) == doctest::Approx(0.5 * std::tanh(1.0)).epsilon(1e-9));
    CHECK(h2.at(0, 0) == doctest::Approx(0.38079707797788).epsilon(1e-6));
  }
  SUBCASE("saturated forget gate carries the full cell state") {
    for (const ParamRef& p : params) {
      if (p.name == "cell.b_f") p.value->fill(50.0);
    }
    Tensor c({1, 1}, {1.0});
    lstm_cell_forward(cell, x, h, c, h2, c2);
    CHECK(c2.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("bilstm shapes and symmetries") {
  SUBCASE("empty sequence rejected") {
    Rng rng(3);
    BiLstm net(2, 3, true, rng);
    CHECK_THROWS_AS(net.forward(Tensor({1, 0, 2})), ShapeError);
  }
  SUBCASE("zero weights give zero outputs") {
    Rng rng(3);
    Sequential net;
    net.add("bilstm", std::make_unique<BiLstm>(2, 3, true, rng));
    set_all_params(net, 0.0);
    Tensor y = net.forward(Tensor({2, 4, 2},
                                  std::vector<double>(2 * 4 * 2, 1.25)));
    REQUIRE(y.shape() == std::vector<std::size_t>{2, 4, 6});
    for (double v : y.values()) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("single step makes both halves equal") {
    Rng rng(5);
    BiLstm net(2, 3, true, rng);
    // Copy forward-cell parameters onto the backward cell.
    std::vector<ParamRef> params;
    net.collect_params("b", params);
    const std::size_t half = params.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
      *params[half + i].value = *params[i].value;
    }
    Tensor x = random_tensor({1, 1, 2}, rng);
    Tensor y = net.forward(x);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(y.at(0, 0, j) == doctest::Approx(y.at(0, 0, 3 + j)).epsilon(1e-12));
    }
  }
  SUBCASE("time reversal swaps and reverses the halves") {
    Rng rng(6);
    BiLstm net(2, 3, true, rng);
    std::vector<ParamRef> params;
    net.collect_params("b", params);
    const std::size_t half = params.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
      *params[half + i].value = *params[i].value;
    }
    const std::size_t steps = 5;
    Tensor x = random_tensor({1, steps, 2}, rng);
    Tensor x_rev({1, steps, 2});
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t c = 0; c < 2; ++c) {
        x_rev.at(0, t, c) = x.at(0, steps - 1 - t, c);
      }
    }
    Tensor y = net.forward(x);
    Tensor y_rev = net.forward(x_rev);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(y_rev.at(0, t, j) ==
              doctest::Approx(y.at(0, steps - 1 - t, 3 + j)).epsilon(1e-10));
        CHECK(y_rev.at(0, t, 3 + j) ==
              doctest::Approx(y.at(0, steps - 1 - t, j)).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("softmax stability and exact ratios") {
  SUBCASE("uniform logits") {
    Tensor y = softmax(Tensor({1, 3}, {0, 0, 0}));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(y.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
  }
  SUBCASE("huge logit does not overflow") {
    Tensor y = softmax(Tensor({1, 3}, {1000, 0, 0}));
    CHECK(y.all_finite());
    CHECK(y.at(0, 0) == doctest::Approx(1.0));
    CHECK(y.at(0, 1) == doctest::Approx(0.0));
  }
  SUBCASE("log-ratio logits give exact proportions") {
    Tensor y = softmax(
        Tensor({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
    CHECK(y.at(0, 0) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(2.0 / 6).epsilon(1e-12));
    CHECK(y.at(0, 2) == doctest::Approx(3.0 / 6).epsilon(1e-12));
  }
  SUBCASE("rows sum to one and shifting logits changes nothing") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor z = random_tensor({3, 5}, rng, 3.0);
      Tensor y = softmax(z);
      Tensor z_shift = z;
      for (std::size_t i = 0; i < 3; ++i) {
        const double c = rng.uniform(-50.0, 50.0);
        for (std::size_t j = 0; j < 5; ++j) z_shift.at(i, j) += c;
      }
      Tensor y_shift = softmax(z_shift);
      for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
          s += y.at(i, j);
          CHECK(std::abs(y.at(i, j) - y_shift.at(i, j)) < 1e-9);
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("cross-entropy analytic values") {
  CategoricalCrossentropy cce;
  SUBCASE("perfect prediction is clip-limited, not zero") {
    const double loss = cce.forward(Tensor({1, 3}, {1, 0, 0}),
                                    Tensor({1, 3}, {1, 0, 0}));
    CHECK(loss > 0.0);
    CHECK(loss <= 1e-6);
  }
  SUBCASE("uniform prediction costs ln K for any target") {
    const Tensor uniform({2, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3,
                                  1.0 / 3});
    for (int cls = 0; cls < 3; ++cls) {
      const Tensor target = one_hot_targets({cls, (cls + 1) % 3}, 3);
      CHECK(cce.forward(uniform, target) ==
            doctest::Approx(std::log(3.0)).epsilon(1e-12));
    }
  }
  SUBCASE("rejects non-one-hot targets") {
    CHECK_THROWS_AS(cce.forward(Tensor({1, 3}, {0.5, 0.25, 0.25}),
                                Tensor({1, 3}, {0.5, 0.5, 0})),
                    LabelError);
    CHECK_THROWS_AS(cce.forward(Tensor({1, 3}, {0.5, 0.25, 0.25}),
                                Tensor({1, 3}, {1, 1, 0})),
                    LabelError);
  }
  SUBCASE("loss is nonnegative on random probability rows") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor p = softmax(random_tensor({4, 3}, rng, 2.0));
      const Tensor target = one_hot_targets(
          {static_cast<int>(rng.uniform_index(3)),
           static_cast<int>(rng.uniform_index(3)),
           static_cast<int>(rng.uniform_index(3)),
           static_cast<int>(rng.uniform_index(3))},
          3);
      CHECK(cce.forward(p, target) >= 0.0);
    }
  }
}

TEST_CASE("binary cross-entropy analytic values") {
  BinaryCrossentropy bce;
  SUBCASE("p=0.5 costs ln 2") {
    CHECK(bce.forward(Tensor({1, 1}, {0.5}), Tensor({1, 1}, {1})) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce.forward(Tensor({1, 1}, {0.5}), Tensor({1, 1}, {0})) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("rejects targets outside {0,1}") {
    CHECK_THROWS_AS(bce.forward(Tensor({1, 1}, {0.5}), Tensor({1, 1}, {0.3})),
                    LabelError);
  }
}

TEST_CASE("adam closed-form first step and identities") {
  SUBCASE("first step magnitude is the learning rate") {
    Tensor theta({1}, {1.0});
    Tensor grad({1}, {1.0});
    AdamOptimizer opt;
    opt.step({{"theta", &theta, &grad}});
    const double expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
    CHECK(std::abs(theta[0] - expected) < 1e-12);
  }
  SUBCASE("zero gradients leave parameters untouched") {
    Tensor theta({3}, {1.0, -2.0, 0.5});
    Tensor grad({3});
    AdamOptimizer opt;
    for (int i = 0; i < 5; ++i) opt.step({{"theta", &theta, &grad}});
    CHECK(theta[0] == 1.0);
    CHECK(theta[1] == -2.0);
    CHECK(theta[2] == 0.5);
  }
  SUBCASE("quadratic descent is monotone for 100 steps") {
    Tensor theta({1}, {1.0});
    Tensor grad({1});
    AdamOptimizer opt;
    double prev = std::abs(theta[0]);
    for (int i = 0; i < 100; ++i) {
      grad[0] = theta[0];  // gradient of 0.5*theta^2
      opt.step({{"theta", &theta, &grad}});
      CHECK(std::abs(theta[0]) < prev);
      prev = std::abs(theta[0]);
    }
  }
  SUBCASE("non-finite gradient names the parameter") {
    Tensor theta({1}, {1.0});
    Tensor grad({1}, {std::numeric_limits<double>::quiet_NaN()});
    AdamOptimizer opt;
    try {
      opt.step({{"conv.bias", &theta, &grad}});
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("conv.bias") != std::string::npos);
    }
  }
}

TEST_CASE("gradient check per layer") {
  Rng rng(2024);

  SUBCASE("dense relu") {
    Sequential net;
    net.add("dense", std::make_unique<Dense>(4, 3, Activation::kRelu, rng));
    ProjectionLoss loss(1);
    Tensor x = random_tensor({2, 4}, rng);
    auto report = grad_check(net, loss, x, Tensor(), 1e-5);
    CHECK(report.max_rel_error < 1e-4);
    CHECK(report.evaluated > 0);
  }
  SUBCASE("linear layer with sum loss is exact") {
    Sequential net;
    net.add("dense", std::make_unique<Dense>(4, 3, Activation::kNone, rng));
    SumLoss loss;
    Tensor x = random_tensor({2, 4}, rng);
    auto report = grad_check(net, loss, x, Tensor(), 1e-5);
    CHECK(report.max_rel_error < 1e-9);
  }
  SUBCASE("dense softmax with categorical cross-entropy") {
    Sequential net;
    net.add("head", std::make_unique<Dense>(5, 3, Activation::kSoftmax, rng));
    CategoricalCrossentropy loss;
    Tensor x = random_tensor({2, 5}, rng);
    const Tensor target = one_hot_targets({1, 2}, 3);
    auto report = grad_check(net, loss, x, target, 1e-5);
    CHECK(report.max_rel_error < 1e-4);
  }
  SUBCASE("dense sigmoid with binary cross-entropy") {
    Sequential net;
    net.add("head", std::make_unique<Dense>(5, 1, Activation::kSigmoid, rng));
    BinaryCrossentropy loss;
    Tensor x = random_tensor({2, 5}, rng);
    const Tensor target({2, 1}, {1, 0});
    auto report = grad_check(net, loss, x, target, 1e-5);
    CHECK(report.max_rel_error < 1e-4);
  }
  SUBCASE("conv + pool chain") {
    Sequential net;
    net.add("conv", std::make_unique<Conv1D>(1, 2, 3, Activation::kRelu, rng));
    net.add("pool", std::make_unique<MaxPool1D>(2));
    net.add("flatten", std::make_unique<Flatten>());
    ProjectionLoss loss(2);
    Tensor x = random_tensor({2, 9, 1}, rng);
    auto report = grad_check(net, loss, x, Tensor(), 1e-5);
    CHECK(report.max_rel_error < 1e-4);
  }
  SUBCASE("lstm cell through a single bilstm step") {
    Sequential net;
    net.add("bilstm", std::make_unique<BiLstm>(3, 2, true, rng));
    ProjectionLoss loss(3);
    Tensor x = random_tensor({1, 1, 3}, rng);
    auto report = grad_check(net, loss, x, Tensor(), 1e-5);
    CHECK(report.max_rel_error < 1e-4);
  }
  SUBCASE("bilstm over a sequence") {
    Sequential net;
    net.add("bilstm", std::make_unique<BiLstm>(2, 3, true, rng));
    net.add("flatten", std::make_unique<Flatten>());
    ProjectionLoss loss(4);
    Tensor x = random_tensor({2, 4, 2}, rng);
    auto report = grad_check(net, loss, x, Tensor(), 1e-5);
    CHECK(report.max_rel_error < 1e-4);
  }
  SUBCASE("eps outside (0, 1e-2] rejected") {
    Sequential net;
    net.add("dense", std::make_unique<Dense>(2, 2, Activation::kNone, rng));
    SumLoss loss;
    Tensor x = random_tensor({1, 2}, rng);
    CHECK_THROWS_AS(grad_check(net, loss, x, Tensor(), 0.0), ConfigError);
    CHECK_THROWS_AS(grad_check(net, loss, x, Tensor(), 0.5), ConfigError);
  }
}

TEST_CASE("deterministic construction and forward") {
  auto build_and_run = [](std::uint64_t seed) {
    Rng rng(seed);
    Sequential net;
    net.add("conv", std::make_unique<Conv1D>(1, 4, 3, Activation::kRelu, rng));
    net.add("pool", std::make_unique<MaxPool1D>(2));
    net.add("bilstm", std::make_unique<BiLstm>(4, 3, true, rng));
    net.add("flatten", std::make_unique<Flatten>());
    net.add("head", std::make_unique<Dense>(2 * 3 * 3, 3, Activation::kSoftmax,
                                            rng));
    Rng data_rng(seed + 1);
    Tensor x = random_tensor({2, 9, 1}, data_rng);
    return net.forward(x);
  };
  Tensor a = build_and_run(99);
  Tensor b = build_and_run(99);
  REQUIRE(a.numel() == b.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}
