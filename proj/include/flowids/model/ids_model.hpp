#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "flowids/data/pipeline.hpp"
#include "flowids/eval/metrics.hpp"
#include "flowids/nn/adam.hpp"
#include "flowids/nn/layers.hpp"
#include "flowids/nn/losses.hpp"
#include "flowids/task.hpp"

namespace flowids::ids {

// Conv1D -> MaxPool -> BiLSTM (return sequences) -> Flatten -> head.
// extra_branches adds parallel conv+pool branches with other kernel sizes
// whose outputs are concatenated channel-wise (truncated to the shortest
// branch) before the BiLSTM.
struct ModelConfig {
  TaskMode mode = TaskMode::kMulticlass;
  std::size_t n_features = 0;
  std::size_t conv_filters = 32;
  std::size_t conv_kernel = 3;
  std::size_t pool = 2;
  std::size_t lstm_units = 32;
  std::vector<std::size_t> extra_branches;

  std::size_t n_classes() const {
    return mode == TaskMode::kMulticlass ? 3 : 2;
  }
  std::size_t head_width() const {
    return mode == TaskMode::kMulticlass ? 3 : 1;
  }
};

// Pooled sequence length for one conv branch, and the shortest across all
// configured branches (the length the BiLSTM actually sees).
std::size_t branch_sequence_length(const ModelConfig& cfg, std::size_t kernel);
std::size_t derived_sequence_length(const ModelConfig& cfg);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double val_fraction = 0.2;
  bool shuffle_per_epoch = true;
  std::uint64_t seed = 0;
  nn::AdamConfig adam;
};

class IdsModel {
 public:
  IdsModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  // [n, K] softmax rows (multiclass) or [n, 1] sigmoid scores (binary).
  Tensor predict_proba(const Tensor& x);
  // Always [n, n_classes]; the binary column pair is (1-p, p).
  Tensor predict_class_proba(const Tensor& x);
  // Argmax with the lowest index winning ties; binary applies p >= threshold.
  std::vector<int> predict(const Tensor& x, double threshold = 0.5);

  // One Adam step per mini-batch, the final partial batch included. Appends
  // one history row per epoch with metrics computed after the epoch's last
  // update. When val_ds is null and cfg.val_fraction > 0 a stratified split
  // is carved out of train_ds; with no validation data at all the val
  // columns mirror the training metrics.
  std::vector<eval::EpochRow> train(const data::Dataset& train_ds,
                                    const TrainConfig& cfg,
                                    const data::Dataset* val_ds = nullptr);

  const std::vector<eval::EpochRow>& history() const { return history_; }

  double evaluate_loss(const data::Dataset& ds, double* accuracy = nullptr);

  void save(const std::filesystem::path& path);
  static IdsModel load(const std::filesystem::path& path);

  nn::Sequential& net() { return net_; }
  nn::Loss& loss() { return *loss_; }
  Tensor make_targets(const std::vector<int>& labels) const;

 private:
  ModelConfig cfg_;
  std::uint64_t seed_;
  nn::Sequential net_;
  std::unique_ptr<nn::Loss> loss_;
  nn::AdamOptimizer optimizer_;
  std::vector<eval::EpochRow> history_;
};

// Recall averaged over the attack classes (every class except index 0).
double detection_rate(const std::vector<int>& y_true,
                      const std::vector<int>& y_pred, std::size_t k);

}  // namespace flowids::ids
