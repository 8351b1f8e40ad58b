#pragma once

#include <functional>
#include <string>
#include <vector>

#include "oltr/datagen.hpp"
#include "oltr/model.hpp"
#include "oltr/objective.hpp"

namespace oltr {

struct TrainConfig {
  int epochs = 12;
  int warmup_epochs = 1;
  int classes_per_batch = 4;   // P
  int samples_per_class = 4;   // Q
  double learning_rate = 0.05;
  double momentum = 0.9;
  double centroid_rate = 0.5;  // alpha_c
  double lr_decay = 0.1;       // applied after 2/3 of the main epochs
  double clip_norm = 5.0;      // global gradient-norm clip, 0 disables
  std::uint64_t seed = 7;
};

template <std::floating_point T>
struct SgdMomentum {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double clip_norm = 5.0;  // global gradient-norm clip, 0 disables
  std::vector<Tensor<T>> params;
  std::vector<std::vector<T>> velocity;

  void attach(std::vector<Tensor<T>> parameters);
  void zero_grad();
  void step(double lr_scale = 1.0);
};

// Class-aware neighborhood sampler: classes are consumed in shuffled cycles
// of P distinct labels, Q samples each (with replacement only when a class
// has fewer than Q training samples). Every class is touched once per cycle.
class NeighborhoodSampler {
 public:
  struct Batch {
    std::vector<int> indices;  // into the training split
    std::vector<int> labels;
  };

  NeighborhoodSampler(const std::vector<int>& train_labels, int num_classes, int classes_per_batch,
                      int samples_per_class);

  Batch next(Rng& rng);
  void reset_cycle() { cursor_ = cycle_.size(); }

 private:
  std::vector<std::vector<int>> per_class_;
  int p_, q_;
  std::vector<int> cycle_;
  std::size_t cursor_;
};

template <std::floating_point T>
struct TrainState {
  OltrModel<T> model;
  SgdMomentum<T> optimizer;
  Rng rng;
  int epoch = 0;  // completed main epochs
  bool warmed_up = false;
};

struct EpochLogRow {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double many_acc = 0.0;
  double medium_acc = 0.0;
  double few_acc = 0.0;

  static std::string csv_header();
  std::string csv_row() const;
};

// One optimization step on an explicit batch: forward through the
// meta-embedding pipeline, backward, SGD update, then the centroid update
// with the batch's fresh direct features.
template <std::floating_point T>
double train_step(TrainState<T>& state, const Dataset& dataset,
                  const std::vector<int>& batch_indices, const ObjectiveConfig& objective,
                  const TrainConfig& config, double lr_scale = 1.0);

// Builds the memory bank from per-class means of current direct features.
template <std::floating_point T>
void initialize_memory(TrainState<T>& state, const Dataset& dataset);

template <std::floating_point T>
using EpochCallback = std::function<void(const TrainState<T>&, int epoch_done)>;

// Warm-up (plain cross-entropy, no memory), centroid initialization, then
// the main epochs. Returns the state and one log row per main epoch.
template <std::floating_point T>
TrainState<T> train(const Dataset& dataset, const ModelSettings& model_settings,
                    const TrainConfig& config, const ObjectiveConfig& objective,
                    std::vector<EpochLogRow>* log = nullptr,
                    const EpochCallback<T>& on_epoch = nullptr);

}  // namespace oltr
