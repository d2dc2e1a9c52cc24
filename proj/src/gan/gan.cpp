#include "flowids/gan/gan.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "flowids/errors.hpp"
#include "flowids/model/checkpoint.hpp"
#include "flowids/nn/losses.hpp"

namespace flowids::gan {

using nlohmann::json;

Generator::Generator(std::size_t out_dim, nn::Activation out_act, Rng& rng)
    : out_dim_(out_dim), out_act_(out_act) {
  if (out_act != nn::Activation::kRelu && out_act != nn::Activation::kNone) {
    throw ConfigError("generator output activation must be relu or linear");
  }
  net_.add("dense1", std::make_unique<nn::Dense>(kNoiseDim, 128,
                                                 nn::Activation::kRelu, rng));
  net_.add("dense2",
           std::make_unique<nn::Dense>(128, out_dim, out_act, rng));
}

Tensor Generator::forward(const Tensor& noise) {
  if (noise.rank() != 2 || noise.dim(1) != kNoiseDim) {
    throw ShapeError("generator noise must be [n, " +
                     std::to_string(kNoiseDim) + "], got " +
                     shape_str(noise.shape()));
  }
  return net_.forward(noise);
}

Tensor Generator::backward(const Tensor& grad_out) {
  return net_.backward(grad_out);
}

Discriminator::Discriminator(std::size_t in_dim, std::size_t n_classes,
                             Rng& rng)
    : in_dim_(in_dim), n_classes_(n_classes) {
  net_.add("dense1",
           std::make_unique<nn::Dense>(in_dim, 128, nn::Activation::kRelu, rng));
  net_.add("head", std::make_unique<nn::Dense>(128, n_classes,
                                               nn::Activation::kSoftmax, rng));
}

Tensor Discriminator::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_dim_) {
    throw ShapeError("discriminator input must be [n, " +
                     std::to_string(in_dim_) + "], got " +
                     shape_str(x.shape()));
  }
  return net_.forward(x);
}

Tensor Discriminator::backward(const Tensor& grad_out) {
  return net_.backward(grad_out);
}

Tensor sample_noise(std::size_t n, Rng& rng) {
  Tensor noise({n, kNoiseDim});
  for (double& v : noise.values()) v = rng.normal();
  return noise;
}

Gan::Gan(std::size_t data_dim, std::size_t n_classes, const GanConfig& cfg,
         std::uint64_t seed)
    : cfg_(cfg),
      seed_(seed),
      gen_([&] {
        Rng rng(Rng::derive_seed(seed, "generator-init"));
        return Generator(data_dim, cfg.output_activation, rng);
      }()),
      disc_([&] {
        Rng rng(Rng::derive_seed(seed, "discriminator-init"));
        return Discriminator(data_dim, n_classes, rng);
      }()),
      gen_opt_(cfg.generator_adam),
      disc_opt_(cfg.discriminator_adam) {
  if (cfg.batch_size < 1) throw ConfigError("gan batch_size must be positive");
  if (cfg.target_class < 0 ||
      static_cast<std::size_t>(cfg.target_class) >= n_classes) {
    throw ConfigError("gan target class " + std::to_string(cfg.target_class) +
                      " outside [0, " + std::to_string(n_classes) + ")");
  }
}

namespace {

int pick_fake_proxy(const std::vector<std::int64_t>& counts, int target) {
  int proxy = -1;
  std::int64_t best = -1;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (static_cast<int>(c) == target) continue;
    if (counts[c] > best) {
      best = counts[c];
      proxy = static_cast<int>(c);
    }
  }
  // Single-class data: fall back to the next head index.
  if (best <= 0) proxy = (target + 1) % static_cast<int>(counts.size());
  return proxy;
}

}  // namespace

GanTrainResult Gan::train(const data::Dataset& real) {
  const std::size_t n = real.rows();
  if (n == 0) throw DataError("gan training set is empty");
  if (real.cols() != gen_.out_dim()) {
    throw ShapeError("gan built for " + std::to_string(gen_.out_dim()) +
                     " features, data has " + std::to_string(real.cols()));
  }
  const std::vector<std::int64_t> counts = real.class_counts();
  if (counts[static_cast<std::size_t>(cfg_.target_class)] == 0) {
    throw DataError("target class " + std::to_string(cfg_.target_class) +
                    " has no rows in the training data");
  }
  const int proxy = pick_fake_proxy(counts, cfg_.target_class);

  GanTrainResult result;
  result.fake_proxy_class = proxy;
  Rng rng(Rng::derive_seed(seed_, "gan-train"));
  nn::CategoricalCrossentropy loss;
  const std::size_t batch = cfg_.batch_size;
  const std::size_t k = disc_.n_classes();

  for (std::size_t step = 0; step < cfg_.steps; ++step) {
    // Discriminator update: real rows with true labels, generated rows with
    // the fake-proxy label.
    Tensor disc_x({2 * batch, real.cols()});
    std::vector<int> disc_y(2 * batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t row = rng.uniform_index(n);
      for (std::size_t j = 0; j < real.cols(); ++j) {
        disc_x.at(i, j) = real.X.at(row, j);
      }
      disc_y[i] = real.y[row];
    }
    const Tensor fake = gen_.forward(sample_noise(batch, rng));
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t j = 0; j < real.cols(); ++j) {
        disc_x.at(batch + i, j) = fake.at(i, j);
      }
      disc_y[batch + i] = proxy;
    }
    const double d_loss =
        loss.forward(disc_.forward(disc_x), nn::one_hot_targets(disc_y, k));
    if (!std::isfinite(d_loss)) {
      throw TrainingError("non-finite discriminator loss at step " +
                          std::to_string(step));
    }
    disc_.zero_grad();
    disc_.backward(loss.backward());
    disc_opt_.step(disc_.params());

    // Generator update: push discriminator output on fresh samples toward
    // the target class, discriminator frozen.
    const Tensor gen_x = gen_.forward(sample_noise(batch, rng));
    const std::vector<int> target_y(batch, cfg_.target_class);
    const double g_loss =
        loss.forward(disc_.forward(gen_x), nn::one_hot_targets(target_y, k));
    if (!std::isfinite(g_loss)) {
      throw TrainingError("non-finite generator loss at step " +
                          std::to_string(step));
    }
    gen_.zero_grad();
    disc_.zero_grad();
    gen_.backward(disc_.backward(loss.backward()));
    gen_opt_.step(gen_.params());
    disc_.zero_grad();

    result.discriminator_loss.push_back(d_loss);
    result.generator_loss.push_back(g_loss);
  }
  history_.fake_proxy_class = proxy;
  history_.discriminator_loss.insert(history_.discriminator_loss.end(),
                                     result.discriminator_loss.begin(),
                                     result.discriminator_loss.end());
  history_.generator_loss.insert(history_.generator_loss.end(),
                                 result.generator_loss.begin(),
                                 result.generator_loss.end());
  return result;
}

Tensor Gan::synthesize(std::int64_t n, std::uint64_t seed) {
  if (n < 0) {
    throw ConfigError("cannot synthesize a negative number of rows: " +
                      std::to_string(n));
  }
  Rng rng(seed);
  if (n == 0) return Tensor({0, gen_.out_dim()});
  return gen_.forward(sample_noise(static_cast<std::size_t>(n), rng));
}

namespace {

json adam_to_json(const nn::AdamConfig& cfg) {
  return json{{"lr", cfg.lr},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"epsilon", cfg.epsilon}};
}

nn::AdamConfig adam_from_json(const json& j) {
  nn::AdamConfig cfg;
  cfg.lr = j.at("lr").get<double>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.epsilon = j.at("epsilon").get<double>();
  return cfg;
}

model::OptimizerStateBlob optimizer_blob(const std::string& name,
                                         const nn::AdamOptimizer& opt) {
  model::OptimizerStateBlob blob;
  blob.name = name;
  blob.config = opt.config();
  blob.t = opt.steps_taken();
  for (const auto& [pname, m] : opt.first_moments()) {
    model::MomentPair mp;
    mp.name = pname;
    mp.m = m;
    mp.v = opt.second_moments().at(pname);
    blob.moments.push_back(std::move(mp));
  }
  return blob;
}

void restore_optimizer(nn::AdamOptimizer& opt,
                       const model::OptimizerStateBlob& blob) {
  std::map<std::string, Tensor> m, v;
  for (const model::MomentPair& mp : blob.moments) {
    m.emplace(mp.name, mp.m);
    v.emplace(mp.name, mp.v);
  }
  opt = nn::AdamOptimizer(blob.config);
  opt.restore(blob.t, std::move(m), std::move(v));
}

}  // namespace

void Gan::save(const std::filesystem::path& path) {
  model::CheckpointData data;
  data.kind = "gan";
  data.seed = seed_;
  data.meta_json =
      json{{"data_dim", gen_.out_dim()},
           {"n_classes", disc_.n_classes()},
           {"config",
            {{"steps", cfg_.steps},
             {"batch_size", cfg_.batch_size},
             {"target_class", cfg_.target_class},
             {"generator_adam", adam_to_json(cfg_.generator_adam)},
             {"discriminator_adam", adam_to_json(cfg_.discriminator_adam)},
             {"output_activation", nn::to_string(cfg_.output_activation)}}},
           {"history",
            {{"discriminator_loss", history_.discriminator_loss},
             {"generator_loss", history_.generator_loss},
             {"fake_proxy_class", history_.fake_proxy_class}}}}
          .dump();
  for (const nn::ParamRef& p : gen_.params()) {
    data.tensors.emplace_back("gen." + p.name, *p.value);
  }
  for (const nn::ParamRef& p : disc_.params()) {
    data.tensors.emplace_back("disc." + p.name, *p.value);
  }
  data.optimizers.push_back(optimizer_blob("gen_adam", gen_opt_));
  data.optimizers.push_back(optimizer_blob("disc_adam", disc_opt_));
  model::save_checkpoint(path, data);
}

Gan Gan::load(const std::filesystem::path& path) {
  const model::CheckpointData data = model::load_checkpoint(path);
  if (data.kind != "gan") {
    throw CheckpointError(path.string() + ": checkpoint kind '" + data.kind +
                          "' is not a gan");
  }
  const json meta = json::parse(data.meta_json);
  GanConfig cfg;
  const json& jcfg = meta.at("config");
  cfg.steps = jcfg.at("steps").get<std::size_t>();
  cfg.batch_size = jcfg.at("batch_size").get<std::size_t>();
  cfg.target_class = jcfg.at("target_class").get<int>();
  cfg.generator_adam = adam_from_json(jcfg.at("generator_adam"));
  cfg.discriminator_adam = adam_from_json(jcfg.at("discriminator_adam"));
  cfg.output_activation = nn::activation_from_string(
      jcfg.at("output_activation").get<std::string>());

  Gan gan(meta.at("data_dim").get<std::size_t>(),
          meta.at("n_classes").get<std::size_t>(), cfg, data.seed);
  gan.history_.discriminator_loss =
      meta.at("history").at("discriminator_loss").get<std::vector<double>>();
  gan.history_.generator_loss =
      meta.at("history").at("generator_loss").get<std::vector<double>>();
  gan.history_.fake_proxy_class =
      meta.at("history").at("fake_proxy_class").get<int>();

  std::map<std::string, nn::ParamRef> by_name;
  for (const nn::ParamRef& p : gan.gen_.params()) {
    by_name.emplace("gen." + p.name, p);
  }
  for (const nn::ParamRef& p : gan.disc_.params()) {
    by_name.emplace("disc." + p.name, p);
  }
  std::size_t restored = 0;
  for (const auto& [name, tensor] : data.tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointError(path.string() + ": unknown parameter '" + name +
                            "'");
    }
    if (!it->second.value->same_shape(tensor)) {
      throw CheckpointError(path.string() + ": parameter '" + name +
                            "' shape mismatch");
    }
    *it->second.value = tensor;
    ++restored;
  }
  if (restored != by_name.size()) {
    throw CheckpointError(path.string() + ": incomplete parameter set");
  }
  for (const model::OptimizerStateBlob& blob : data.optimizers) {
    if (blob.name == "gen_adam") restore_optimizer(gan.gen_opt_, blob);
    if (blob.name == "disc_adam") restore_optimizer(gan.disc_opt_, blob);
  }
  return gan;
}

AugmentResult augment_dataset(const data::Dataset& real,
                              const std::map<int, Gan*>& gans,
                              std::uint64_t seed) {
  const std::vector<std::int64_t> counts = real.class_counts();
  const std::int64_t majority =
      *std::max_element(counts.begin(), counts.end());

  AugmentResult result;
  result.synthesized_per_class.assign(counts.size(), 0);
  std::vector<Tensor> synthetic;
  std::vector<int> synthetic_labels;
  std::int64_t total_new = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const std::int64_t deficit = majority - counts[c];
    if (deficit <= 0) continue;
    auto it = gans.find(static_cast<int>(c));
    if (it == gans.end() || it->second == nullptr) {
      throw ConfigError("class " + std::to_string(c) + " is short " +
                        std::to_string(deficit) +
                        " rows but has no trained generator");
    }
    synthetic.push_back(it->second->synthesize(
        deficit,
        Rng::derive_seed(seed, "synthesize-class-" + std::to_string(c))));
    synthetic_labels.insert(synthetic_labels.end(),
                            static_cast<std::size_t>(deficit),
                            static_cast<int>(c));
    result.synthesized_per_class[c] = deficit;
    total_new += deficit;
  }

  data::Dataset combined;
  combined.feature_names = real.feature_names;
  combined.codec = real.codec;
  const std::size_t n = real.rows() + static_cast<std::size_t>(total_new);
  combined.X = Tensor({n, real.cols()});
  combined.y.resize(n);
  combined.provenance.assign(n, 0);
  for (std::size_t i = 0; i < real.rows(); ++i) {
    for (std::size_t j = 0; j < real.cols(); ++j) {
      combined.X.at(i, j) = real.X.at(i, j);
    }
    combined.y[i] = real.y[i];
  }
  std::size_t row = real.rows();
  std::size_t label_pos = 0;
  for (const Tensor& block : synthetic) {
    for (std::size_t i = 0; i < block.dim(0); ++i, ++row, ++label_pos) {
      for (std::size_t j = 0; j < real.cols(); ++j) {
        combined.X.at(row, j) = block.at(i, j);
      }
      combined.y[row] = synthetic_labels[label_pos];
      combined.provenance[row] = 1;
    }
  }

  if (total_new == 0) {
    result.combined = std::move(combined);
    return result;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(Rng::derive_seed(seed, "augment-shuffle"));
  shuffle_rng.shuffle(order);
  result.combined = data::take_rows(combined, order);
  return result;
}

}  // namespace flowids::gan
