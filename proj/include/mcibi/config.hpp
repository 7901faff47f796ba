#ifndef MCIBI_CONFIG_HPP_
#define MCIBI_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mcibi/segmentor.hpp"

namespace mcibi {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MemoryConfig {
  double momentum = 0.1;
  double epsilon_std = kDefaultEpsilonStd;
  std::string init_policy = "lazy";  // lazy | prescan
  bool update = true;
};

struct TrainingConfig {
  double lr = 0.02;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  int iterations = 400;
  int batch_size = 4;
  uint64_t seed = 1;
  int log_interval = 50;
  int checkpoint_interval = 200;
};

struct InferenceConfig {
  int iis_stages = 2;
  bool deterministic_sampling = false;  // mean-mode C_dl
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | manifest
  uint64_t seed = 7;
  int train_images = 24;
  int val_images = 8;
  int size = 64;
  double noise_level = 0.25;
  double class_presence_prob = 0.95;
  std::string manifest_train;
  std::string manifest_val;
  int ignore_index = kDefaultIgnoreIndex;
};

struct VideoConfig {
  int history = 0;  // 0 disables the video path
  bool raw_features = false;
};

struct ExperimentConfig {
  ModelConfig model;
  MemoryConfig memory;
  TrainingConfig training;
  InferenceConfig inference;
  DataConfig data;
  VideoConfig video;

  void validate() const;  // throws ConfigError
  ModelConfig resolved_model() const;  // model section + cross-section fields
  std::string canonical_text() const;  // deterministic full serialization
  uint64_t hash() const;               // FNV-1a of canonical_text

  // "section.key" accessor used by the ablation grid driver; throws
  // ConfigError for unknown keys.
  void set_key(const std::string& dotted_key, const std::string& value);
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

}  // namespace mcibi

#endif  // MCIBI_CONFIG_HPP_
