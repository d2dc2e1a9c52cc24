#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "flowids/data/pipeline.hpp"
#include "flowids/nn/adam.hpp"
#include "flowids/nn/layers.hpp"
#include "flowids/rng.hpp"
#include "flowids/tensor.hpp"

namespace flowids::gan {

// Noise vector width; fixed by the architecture.
inline constexpr std::size_t kNoiseDim = 100;

struct GanConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 32;
  int target_class = 0;
  // beta1 = 0.5 keeps the adversarial game from orbiting; with the usual 0.9
  // the generator mean oscillates around the data instead of settling.
  nn::AdamConfig generator_adam{0.0005, 0.5, 0.999, 1e-8};
  nn::AdamConfig discriminator_adam{0.001, 0.5, 0.999, 1e-8};
  // The output layer is ReLU per the architecture; linear is available for
  // standard-scaled data where truncating negatives costs fidelity.
  nn::Activation output_activation = nn::Activation::kRelu;
};

// Dense(100 -> 128, ReLU), Dense(128 -> d, output activation). The reshape
// to the flat feature vector is the identity for tabular rows.
class Generator {
 public:
  Generator(std::size_t out_dim, nn::Activation out_act, Rng& rng);

  Tensor forward(const Tensor& noise);
  Tensor backward(const Tensor& grad_out);
  std::vector<nn::ParamRef> params() { return net_.params(); }
  void zero_grad() { net_.zero_grad(); }

  std::size_t out_dim() const { return out_dim_; }
  nn::Activation output_activation() const { return out_act_; }

 private:
  nn::Sequential net_;
  std::size_t out_dim_;
  nn::Activation out_act_;
};

// Dense(d -> 128, ReLU), Dense(128 -> K, softmax). The flatten stage is the
// identity on feature rows.
class Discriminator {
 public:
  Discriminator(std::size_t in_dim, std::size_t n_classes, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  std::vector<nn::ParamRef> params() { return net_.params(); }
  void zero_grad() { net_.zero_grad(); }

  std::size_t in_dim() const { return in_dim_; }
  std::size_t n_classes() const { return n_classes_; }

 private:
  nn::Sequential net_;
  std::size_t in_dim_;
  std::size_t n_classes_;
};

struct GanTrainResult {
  std::vector<double> discriminator_loss;
  std::vector<double> generator_loss;
  int fake_proxy_class = -1;
};

Tensor sample_noise(std::size_t n, Rng& rng);

// One generator/discriminator pair trained for a single target class.
//
// The discriminator keeps the K-class softmax head: real rows are trained
// to their true labels while generated rows are assigned the most populous
// non-target class as a fake proxy. The generator drives the discriminator
// output on its samples toward the target class, discriminator frozen.
class Gan {
 public:
  Gan(std::size_t data_dim, std::size_t n_classes, const GanConfig& cfg,
      std::uint64_t seed);

  GanTrainResult train(const data::Dataset& real);

  // n rows from seeded noise. All entries are >= 0 under the ReLU output.
  Tensor synthesize(std::int64_t n, std::uint64_t seed);

  void save(const std::filesystem::path& path);
  static Gan load(const std::filesystem::path& path);

  Generator& generator() { return gen_; }
  Discriminator& discriminator() { return disc_; }
  const GanConfig& config() const { return cfg_; }
  const GanTrainResult& history() const { return history_; }
  std::uint64_t seed() const { return seed_; }

 private:
  GanConfig cfg_;
  std::uint64_t seed_;
  Generator gen_;
  Discriminator disc_;
  nn::AdamOptimizer gen_opt_, disc_opt_;
  GanTrainResult history_;
};

struct AugmentResult {
  data::Dataset combined;
  std::vector<std::int64_t> synthesized_per_class;
};

// Upsamples every minority class to the majority count using that class's
// trained generator. Real rows pass through bit-identical; the combined set
// is shuffled only when synthetic rows were added, and every row carries a
// real/synthetic provenance flag.
AugmentResult augment_dataset(const data::Dataset& real,
                              const std::map<int, Gan*>& gans,
                              std::uint64_t seed);

}  // namespace flowids::gan
