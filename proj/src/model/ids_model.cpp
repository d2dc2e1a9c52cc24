#include "flowids/model/ids_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "flowids/errors.hpp"
#include "flowids/model/checkpoint.hpp"
#include "flowids/rng.hpp"

namespace flowids::ids {

using nlohmann::json;

std::size_t branch_sequence_length(const ModelConfig& cfg, std::size_t kernel) {
  if (cfg.n_features < kernel) return 0;
  return (cfg.n_features - kernel + 1) / cfg.pool;
}

std::size_t derived_sequence_length(const ModelConfig& cfg) {
  std::size_t t = branch_sequence_length(cfg, cfg.conv_kernel);
  for (std::size_t kernel : cfg.extra_branches) {
    t = std::min(t, branch_sequence_length(cfg, kernel));
  }
  return t;
}

namespace {

// [batch, d] feature rows fed to the conv stack as length-d, single-channel
// sequences.
class ToSequence : public nn::Layer {
 public:
  Tensor forward(const Tensor& x) override {
    if (x.rank() != 2) {
      throw ShapeError("model input must be [batch, features], got " +
                       shape_str(x.shape()));
    }
    width_ = x.dim(1);
    return Tensor({x.dim(0), x.dim(1), 1}, x.values());
  }
  Tensor backward(const Tensor& grad_out) override {
    return Tensor({grad_out.dim(0), width_}, grad_out.values());
  }

 private:
  std::size_t width_ = 0;
};

// Parallel conv+pool branches over the same input, concatenated channel-wise.
// Branches with larger kernels produce shorter sequences; every branch is
// truncated to the shortest so the steps align.
class MultiScaleConv : public nn::Layer {
 public:
  MultiScaleConv(const ModelConfig& cfg, Rng& rng) {
    std::vector<std::size_t> kernels{cfg.conv_kernel};
    kernels.insert(kernels.end(), cfg.extra_branches.begin(),
                   cfg.extra_branches.end());
    for (std::size_t kernel : kernels) {
      Branch branch;
      branch.conv = std::make_unique<nn::Conv1D>(1, cfg.conv_filters, kernel,
                                                 nn::Activation::kRelu, rng);
      branch.pool = std::make_unique<nn::MaxPool1D>(static_cast<int>(cfg.pool));
      branches_.push_back(std::move(branch));
    }
    filters_ = cfg.conv_filters;
  }

  Tensor forward(const Tensor& x) override {
    std::vector<Tensor> outs;
    std::size_t min_t = SIZE_MAX;
    for (Branch& branch : branches_) {
      outs.push_back(branch.pool->forward(branch.conv->forward(x)));
      min_t = std::min(min_t, outs.back().dim(1));
    }
    branch_lengths_.clear();
    for (const Tensor& out : outs) branch_lengths_.push_back(out.dim(1));
    const std::size_t batch = x.dim(0);
    Tensor out({batch, min_t, filters_ * branches_.size()});
    for (std::size_t br = 0; br < outs.size(); ++br) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < min_t; ++t) {
          for (std::size_t f = 0; f < filters_; ++f) {
            out.at(b, t, br * filters_ + f) = outs[br].at(b, t, f);
          }
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out) override {
    const std::size_t batch = grad_out.dim(0);
    const std::size_t min_t = grad_out.dim(1);
    Tensor dx;
    for (std::size_t br = 0; br < branches_.size(); ++br) {
      Tensor g({batch, branch_lengths_[br], filters_});
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < min_t; ++t) {
          for (std::size_t f = 0; f < filters_; ++f) {
            g.at(b, t, f) = grad_out.at(b, t, br * filters_ + f);
          }
        }
      }
      Tensor branch_dx =
          branches_[br].conv->backward(branches_[br].pool->backward(g));
      if (br == 0) {
        dx = std::move(branch_dx);
      } else {
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += branch_dx[i];
      }
    }
    return dx;
  }

  void collect_params(const std::string& prefix,
                      std::vector<nn::ParamRef>& out) override {
    for (std::size_t br = 0; br < branches_.size(); ++br) {
      branches_[br].conv->collect_params(
          prefix + ".branch" + std::to_string(br), out);
    }
  }

  void zero_grad() override {
    for (Branch& branch : branches_) branch.conv->zero_grad();
  }

  void append_kink_signature(std::vector<std::int64_t>& sig) const override {
    for (const Branch& branch : branches_) {
      branch.conv->append_kink_signature(sig);
      branch.pool->append_kink_signature(sig);
    }
  }

 private:
  struct Branch {
    std::unique_ptr<nn::Conv1D> conv;
    std::unique_ptr<nn::MaxPool1D> pool;
  };
  std::vector<Branch> branches_;
  std::size_t filters_ = 0;
  std::vector<std::size_t> branch_lengths_;
};

json config_to_json(const ModelConfig& cfg) {
  return json{{"mode", to_string(cfg.mode)},
              {"n_features", cfg.n_features},
              {"conv_filters", cfg.conv_filters},
              {"conv_kernel", cfg.conv_kernel},
              {"pool", cfg.pool},
              {"lstm_units", cfg.lstm_units},
              {"extra_branches", cfg.extra_branches}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.mode = task_mode_from_string(j.at("mode").get<std::string>());
  cfg.n_features = j.at("n_features").get<std::size_t>();
  cfg.conv_filters = j.at("conv_filters").get<std::size_t>();
  cfg.conv_kernel = j.at("conv_kernel").get<std::size_t>();
  cfg.pool = j.at("pool").get<std::size_t>();
  cfg.lstm_units = j.at("lstm_units").get<std::size_t>();
  cfg.extra_branches = j.at("extra_branches").get<std::vector<std::size_t>>();
  return cfg;
}

json history_to_json(const std::vector<eval::EpochRow>& history) {
  json rows = json::array();
  for (const eval::EpochRow& row : history) {
    rows.push_back({{"epoch", row.epoch},
                    {"train_loss", row.train_loss},
                    {"train_accuracy", row.train_accuracy},
                    {"val_loss", row.val_loss},
                    {"val_accuracy", row.val_accuracy},
                    {"detection_rate", row.detection_rate}});
  }
  return rows;
}

std::vector<eval::EpochRow> history_from_json(const json& rows) {
  std::vector<eval::EpochRow> history;
  for (const json& row : rows) {
    eval::EpochRow r;
    r.epoch = row.at("epoch").get<std::size_t>();
    r.train_loss = row.at("train_loss").get<double>();
    r.train_accuracy = row.at("train_accuracy").get<double>();
    r.val_loss = row.at("val_loss").get<double>();
    r.val_accuracy = row.at("val_accuracy").get<double>();
    r.detection_rate = row.at("detection_rate").get<double>();
    history.push_back(r);
  }
  return history;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  Tensor out({rows.size(), x.dim(1)});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < x.dim(1); ++j) {
      out.at(i, j) = x.at(rows[i], j);
    }
  }
  return out;
}

}  // namespace

IdsModel::IdsModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  std::size_t max_kernel = cfg.conv_kernel;
  for (std::size_t kernel : cfg.extra_branches) {
    max_kernel = std::max(max_kernel, kernel);
  }
  const std::size_t min_features = max_kernel + cfg.pool - 1;
  if (derived_sequence_length(cfg) < 1) {
    throw ConfigError("model needs at least " + std::to_string(min_features) +
                      " features for kernel " + std::to_string(max_kernel) +
                      " and pool " + std::to_string(cfg.pool) + ", got " +
                      std::to_string(cfg.n_features));
  }

  Rng rng(seed);
  net_.add("input", std::make_unique<ToSequence>());
  std::size_t channels = cfg.conv_filters;
  if (cfg.extra_branches.empty()) {
    net_.add("conv", std::make_unique<nn::Conv1D>(1, cfg.conv_filters,
                                                  cfg.conv_kernel,
                                                  nn::Activation::kRelu, rng));
    net_.add("pool",
             std::make_unique<nn::MaxPool1D>(static_cast<int>(cfg.pool)));
  } else {
    net_.add("conv", std::make_unique<MultiScaleConv>(cfg, rng));
    channels = cfg.conv_filters * (1 + cfg.extra_branches.size());
  }
  net_.add("bilstm",
           std::make_unique<nn::BiLstm>(channels, cfg.lstm_units, true, rng));
  net_.add("flatten", std::make_unique<nn::Flatten>());
  const std::size_t flat = derived_sequence_length(cfg) * 2 * cfg.lstm_units;
  const nn::Activation head_act = cfg.mode == TaskMode::kMulticlass
                                      ? nn::Activation::kSoftmax
                                      : nn::Activation::kSigmoid;
  net_.add("head",
           std::make_unique<nn::Dense>(flat, cfg.head_width(), head_act, rng));
  if (cfg.mode == TaskMode::kMulticlass) {
    loss_ = std::make_unique<nn::CategoricalCrossentropy>();
  } else {
    loss_ = std::make_unique<nn::BinaryCrossentropy>();
  }
}

Tensor IdsModel::predict_proba(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != cfg_.n_features) {
    throw ShapeError("model expects [n, " + std::to_string(cfg_.n_features) +
                     "], got " + shape_str(x.shape()));
  }
  return net_.forward(x);
}

Tensor IdsModel::predict_class_proba(const Tensor& x) {
  const Tensor proba = predict_proba(x);
  if (cfg_.mode == TaskMode::kMulticlass) return proba;
  Tensor out({proba.dim(0), 2});
  for (std::size_t i = 0; i < proba.dim(0); ++i) {
    out.at(i, 0) = 1.0 - proba.at(i, 0);
    out.at(i, 1) = proba.at(i, 0);
  }
  return out;
}

std::vector<int> IdsModel::predict(const Tensor& x, double threshold) {
  const Tensor proba = predict_proba(x);
  std::vector<int> labels(proba.dim(0), 0);
  if (cfg_.mode == TaskMode::kMulticlass) {
    for (std::size_t i = 0; i < proba.dim(0); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < proba.dim(1); ++j) {
        if (proba.at(i, j) > proba.at(i, best)) best = j;
      }
      labels[i] = static_cast<int>(best);
    }
  } else {
    for (std::size_t i = 0; i < proba.dim(0); ++i) {
      labels[i] = proba.at(i, 0) >= threshold ? 1 : 0;
    }
  }
  return labels;
}

Tensor IdsModel::make_targets(const std::vector<int>& labels) const {
  if (cfg_.mode == TaskMode::kMulticlass) {
    return nn::one_hot_targets(labels, cfg_.n_classes());
  }
  Tensor t({labels.size(), 1});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw LabelError("binary label must be 0 or 1, got " +
                       std::to_string(labels[i]) + " at row " +
                       std::to_string(i));
    }
    t.at(i, 0) = static_cast<double>(labels[i]);
  }
  return t;
}

double IdsModel::evaluate_loss(const data::Dataset& ds, double* accuracy) {
  const Tensor proba = predict_proba(ds.X);
  const double loss = loss_->forward(proba, make_targets(ds.y));
  if (accuracy != nullptr) {
    const std::vector<int> pred = predict(ds.X);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == ds.y[i]) ++hits;
    }
    *accuracy = ds.rows() == 0
                    ? 0.0
                    : static_cast<double>(hits) / static_cast<double>(ds.rows());
  }
  return loss;
}

double detection_rate(const std::vector<int>& y_true,
                      const std::vector<int>& y_pred, std::size_t k) {
  if (k < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t c = 1; c < k; ++c) {
    std::int64_t support = 0, hit = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      if (y_true[i] == static_cast<int>(c)) {
        ++support;
        if (y_pred[i] == static_cast<int>(c)) ++hit;
      }
    }
    sum += support == 0 ? 0.0
                        : static_cast<double>(hit) / static_cast<double>(support);
  }
  return sum / static_cast<double>(k - 1);
}

std::vector<eval::EpochRow> IdsModel::train(const data::Dataset& train_in,
                                            const TrainConfig& cfg,
                                            const data::Dataset* val_ds) {
  if (train_in.rows() == 0) {
    throw DataError("training dataset is empty");
  }
  if (cfg.batch_size < 1) {
    throw ConfigError("batch_size must be at least 1");
  }

  data::Dataset train_local, val_local;
  const data::Dataset* train = &train_in;
  const data::Dataset* val = val_ds;
  if (val == nullptr && cfg.val_fraction > 0.0) {
    std::tie(train_local, val_local) = data::train_val_split(
        train_in, cfg.val_fraction, Rng::derive_seed(cfg.seed, "train-val"));
    train = &train_local;
    val = &val_local;
  }

  Rng shuffle_rng(Rng::derive_seed(cfg.seed, "epoch-shuffle"));
  std::vector<eval::EpochRow> rows;
  std::vector<std::size_t> order(train->rows());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle_per_epoch) shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> batch(order.begin() + start,
                                           order.begin() + stop);
      std::vector<int> batch_y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        batch_y[i] = train->y[batch[i]];
      }
      const Tensor batch_x = gather_rows(train->X, batch);
      const Tensor proba = net_.forward(batch_x);
      const double loss = loss_->forward(proba, make_targets(batch_y));
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(start / cfg.batch_size));
      }
      net_.zero_grad();
      net_.backward(loss_->backward());
      optimizer_.step(net_.params());
    }

    eval::EpochRow row;
    row.epoch = epoch;
    row.train_loss = evaluate_loss(*train, &row.train_accuracy);
    const data::Dataset* metric_ds = val != nullptr ? val : train;
    if (metric_ds == train) {
      row.val_loss = row.train_loss;
      row.val_accuracy = row.train_accuracy;
    } else {
      row.val_loss = evaluate_loss(*metric_ds, &row.val_accuracy);
    }
    row.detection_rate = detection_rate(
        metric_ds->y, predict(metric_ds->X), cfg_.n_classes());
    rows.push_back(row);
    history_.push_back(row);
  }
  return rows;
}

void IdsModel::save(const std::filesystem::path& path) {
  model::CheckpointData data;
  data.kind = "ids_model";
  data.seed = seed_;
  data.meta_json = json{{"config", config_to_json(cfg_)},
                        {"history", history_to_json(history_)}}
                       .dump();
  for (const nn::ParamRef& p : net_.params()) {
    data.tensors.emplace_back(p.name, *p.value);
  }
  model::OptimizerStateBlob opt;
  opt.name = "adam";
  opt.config = optimizer_.config();
  opt.t = optimizer_.steps_taken();
  for (const auto& [name, m] : optimizer_.first_moments()) {
    model::MomentPair mp;
    mp.name = name;
    mp.m = m;
    mp.v = optimizer_.second_moments().at(name);
    opt.moments.push_back(std::move(mp));
  }
  data.optimizers.push_back(std::move(opt));
  model::save_checkpoint(path, data);
}

IdsModel IdsModel::load(const std::filesystem::path& path) {
  const model::CheckpointData data = model::load_checkpoint(path);
  if (data.kind != "ids_model") {
    throw CheckpointError(path.string() + ": checkpoint kind '" + data.kind +
                          "' is not an ids_model");
  }
  const json meta = json::parse(data.meta_json);
  IdsModel model(config_from_json(meta.at("config")), data.seed);
  model.history_ = history_from_json(meta.at("history"));

  std::map<std::string, nn::ParamRef> by_name;
  for (const nn::ParamRef& p : model.net_.params()) by_name.emplace(p.name, p);
  std::size_t restored = 0;
  for (const auto& [name, tensor] : data.tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointError(path.string() + ": unknown parameter '" + name +
                            "'");
    }
    if (!it->second.value->same_shape(tensor)) {
      throw CheckpointError(path.string() + ": parameter '" + name +
                            "' has shape " + shape_str(tensor.shape()) +
                            ", model expects " +
                            shape_str(it->second.value->shape()));
    }
    *it->second.value = tensor;
    ++restored;
  }
  if (restored != by_name.size()) {
    throw CheckpointError(path.string() + ": checkpoint restores " +
                          std::to_string(restored) + " of " +
                          std::to_string(by_name.size()) + " parameters");
  }
  if (!data.optimizers.empty()) {
    const model::OptimizerStateBlob& opt = data.optimizers.front();
    std::map<std::string, Tensor> m, v;
    for (const model::MomentPair& mp : opt.moments) {
      m.emplace(mp.name, mp.m);
      v.emplace(mp.name, mp.v);
    }
    model.optimizer_ = nn::AdamOptimizer(opt.config);
    model.optimizer_.restore(opt.t, std::move(m), std::move(v));
  }
  return model;
}

}  // namespace flowids::ids
