#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "flowids/task.hpp"

namespace flowids::cli {

// Every pipeline knob with its documented default. Published architecture
// values (batch 32, 100 epochs, 0.2 validation, Pearson 0.5) are the
// defaults; everything can come from a config file, an environment variable
// or a flag.
struct RunConfig {
  TaskMode task = TaskMode::kMulticlass;
  std::string input;
  std::string work_dir = "work";
  std::uint64_t seed = 42;
  std::string label_column = "label";
  double pearson_threshold = 0.5;
  bool pearson_signed = false;
  double val_fraction = 0.2;

  std::size_t gan_steps = 5000;
  std::size_t gan_batch_size = 32;
  double gan_gen_lr = 0.0005;
  double gan_disc_lr = 0.001;
  double gan_gen_beta1 = 0.5;
  double gan_disc_beta1 = 0.5;
  std::string gan_output_activation = "relu";  // relu | linear

  std::string augment_strategy = "balance";  // balance | none

  std::string extra_branches;  // comma-separated kernel sizes, e.g. "5,7"
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  bool shuffle_per_epoch = true;

  std::size_t lime_samples = 5000;
  std::size_t lime_top_k = 10;
  double lime_kernel_width = 0.0;  // 0 = 0.75 * sqrt(d)
  double lime_perturbation_scale = 1.0;
  double lime_ridge = 1e-8;

  // Per-invocation selections; these name output files and are deliberately
  // outside the stage hashes.
  std::size_t explain_instance = 0;
  int explain_class = -1;  // -1 explains the predicted class

  bool force = false;  // CLI-only, never hashed

  std::vector<std::size_t> parsed_extra_branches() const;
};

// key = value document, '#' comments, flat dotted keys. Unknown keys are
// usage errors.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// FLOWIDS_<KEY> with dots as underscores, e.g. FLOWIDS_GAN_STEPS.
void apply_env_overrides(RunConfig& cfg);

void set_config_key(RunConfig& cfg, const std::string& key,
                    const std::string& value);

// All keys in declaration order, "key = value" per line.
std::string canonical_config(const RunConfig& cfg);
std::map<std::string, std::string> config_echo(const RunConfig& cfg);

// Stage hashes chain: each covers the keys that shape that stage's outputs
// plus the hash of its upstream stage, so a change anywhere upstream is
// visible downstream.
std::string preprocess_hash(const RunConfig& cfg);
std::string gan_hash(const RunConfig& cfg);
std::string augment_hash(const RunConfig& cfg);
std::string train_hash(const RunConfig& cfg);
std::string evaluate_hash(const RunConfig& cfg);
std::string explain_hash(const RunConfig& cfg);

}  // namespace flowids::cli
