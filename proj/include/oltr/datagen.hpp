#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "oltr/rng.hpp"

namespace oltr {

// Long-tailed class-size profile. `exp` spaces sizes geometrically so that
// n_1 = n_max and n_C = n_max / ratio (the imbalance-ratio construction);
// `pareto` decays sizes by class rank, n_i = n_max * i^-power.
struct LongTailProfile {
  enum class Kind { Exp, Pareto };
  Kind kind = Kind::Exp;
  int num_classes = 2;
  int n_max = 100;
  double ratio_or_power = 100.0;
  int n_min = 1;
};

std::vector<int> make_profile(const LongTailProfile& profile);

// Synthetic open long-tailed dataset. Known classes carry labels 0..K-1,
// open classes K..K+Z-1 and appear only in the test split.
struct Dataset {
  std::vector<int> feature_shape;
  std::vector<float> train_features;
  std::vector<int> train_labels;
  std::vector<float> test_features;
  std::vector<int> test_labels;
  int num_known = 0;
  int num_open = 0;
  std::vector<int> train_counts;  // per known class

  std::string generator;
  std::uint64_t seed = 0;
  LongTailProfile profile;

  std::int64_t feature_size() const;
  int train_size() const { return static_cast<int>(train_labels.size()); }
  int test_size() const { return static_cast<int>(test_labels.size()); }
  bool is_open_label(int label) const { return label >= num_known; }
  const float* train_sample(int i) const;
  const float* test_sample(int i) const;
};

struct GaussianMixtureConfig {
  std::uint64_t seed = 1;
  int dim = 16;
  int known_classes = 20;
  int open_classes = 5;
  LongTailProfile profile;
  int test_per_class = 20;
  int open_test_per_class = 20;
  double mean_radius = 10.0;
  double noise_sigma = 1.0;
};

Dataset generate_gaussian_mixture(const GaussianMixtureConfig& config);

struct BlobImageConfig {
  std::uint64_t seed = 1;
  int side = 16;
  int known_classes = 6;
  int open_classes = 2;
  LongTailProfile profile;
  int test_per_class = 8;
  int open_test_per_class = 8;
};

Dataset generate_blob_images(const BlobImageConfig& config);

// Unlabeled streams for the exploration loop, disjoint from train/test by
// stream construction. Hidden labels feed the simulated oracle only.
struct ExplorationPool {
  std::vector<float> features;
  std::vector<int> hidden_labels;
  std::int64_t feature_size = 0;
  int size() const { return static_cast<int>(hidden_labels.size()); }
  const float* sample(int i) const { return features.data() + static_cast<std::size_t>(i) * feature_size; }
};

struct PoolConfig {
  std::vector<int> open_class_ids;  // dataset labels (>= K)
  int per_open_class = 40;
  int per_known_class = 0;
  std::uint64_t seed = 1000;
};

ExplorationPool generate_gaussian_pool(const GaussianMixtureConfig& base, const PoolConfig& pool);
ExplorationPool generate_blob_pool(const BlobImageConfig& base, const PoolConfig& pool);

// Shot-split partition of the known labels by training count:
// many > 100, 20 <= medium <= 100, few < 20.
struct ShotSplit {
  enum class Bucket { Many, Medium, Few };
  std::vector<int> many;
  std::vector<int> medium;
  std::vector<int> few;
  Bucket bucket_of(int label) const;
};

ShotSplit split_by_shot(const std::vector<int>& train_counts);

// Dataset files: a JSON header plus a little-endian float32 blob of the
// train features followed by the test features, row-major.
void save_dataset(const Dataset& dataset, const std::string& json_path,
                  const std::string& blob_path);
Dataset load_dataset(const std::string& json_path, const std::string& blob_path);

}  // namespace oltr
