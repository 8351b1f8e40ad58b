#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "oltr/datagen.hpp"
#include "oltr/explore.hpp"
#include "oltr/model.hpp"
#include "oltr/train.hpp"

namespace oltr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Experiment configuration, one JSON object with six blocks. Every field has
// a default; unknown keys are rejected with the offending path.
struct ExperimentConfig {
  struct DatasetBlock {
    std::string generator = "gaussian";  // gaussian | blobs
    int dim = 16;
    int side = 16;
    int known_classes = 20;
    int open_classes = 5;
    LongTailProfile profile;  // exp, n_max 500, ratio 100, n_min 1
    int test_per_class = 20;
    int open_test_per_class = 20;
    double mean_radius = 10.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 1;
  } dataset;

  struct ModelBlock {
    std::string backbone = "mlp";  // mlp | cnn
    bool plain = false;
    int hidden_dim = 64;
    int channels = 8;
    int feature_dim = 16;
    double logit_scale = 16.0;
    double epsilon = 1e-12;
  } model;

  struct ObjectiveBlock {
    double lambda = 0.1;
    double margin = 5.0;
  } objective;

  struct TrainingBlock {
    int epochs = 12;
    int warmup_epochs = 1;
    int classes_per_batch = 4;
    int samples_per_class = 4;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double centroid_rate = 0.5;
    double lr_decay = 0.1;
    double clip_norm = 5.0;
    std::uint64_t seed = 7;
    std::string precision = "f32";  // f32 | f64
    int checkpoint_every = 0;       // 0: final checkpoint only
  } training;

  struct OpensetBlock {
    double threshold = 0.1;
  } openset;

  struct ActiveBlock {
    double budget = 0.1;
    double temperature = 1.0;
    std::vector<int> stages = {3, 2};  // new classes entering per stage
    int pool_open_per_class = 40;
    int pool_known_per_class = 2;
    int fine_tune_epochs = 10;
    double fine_tune_lr = 0.01;
    std::uint64_t pool_seed = 1000;
    std::string selection = "score";  // score | random
  } active;

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);

  // Canonical dump with every field present; hashed into manifests.
  std::string to_json() const;
  std::string config_hash() const;

  GaussianMixtureConfig gaussian_config() const;
  BlobImageConfig blob_config() const;
  ModelSettings model_settings() const;
  TrainConfig train_config() const;
  ObjectiveConfig objective_config() const;
  FineTuneConfig fine_tune_config() const;
  SelectionPolicy selection_policy() const;
};

Dataset generate_dataset(const ExperimentConfig& config);

// Per-stage pools over consecutive open classes, seeded per stage.
std::vector<ExplorationPool> generate_stage_pools(const ExperimentConfig& config);

// FNV-1a, stable across platforms and runs.
std::string fnv1a_hex(const std::string& text);

}  // namespace oltr
