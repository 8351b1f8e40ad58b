#include "oltr/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "oltr/evaluate.hpp"

namespace oltr {

// ---------------------------------------------------------------------------
// SgdMomentum
// ---------------------------------------------------------------------------

template <std::floating_point T>
void SgdMomentum<T>::attach(std::vector<Tensor<T>> parameters) {
  params = std::move(parameters);
  velocity.clear();
  velocity.reserve(params.size());
  for (const auto& p : params) velocity.emplace_back(p.numel(), T(0));
}

template <std::floating_point T>
void SgdMomentum<T>::zero_grad() {
  for (auto& p : params) p.zero_grad();
}

template <std::floating_point T>
void SgdMomentum<T>::step(double lr_scale) {
  const T lr = static_cast<T>(learning_rate * lr_scale);
  const T mu = static_cast<T>(momentum);
  T clip_scale = T(1);
  if (clip_norm > 0) {
    double total = 0;
    for (const auto& p : params) {
      for (const T g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(total);
    if (norm > clip_norm) clip_scale = static_cast<T>(clip_norm / norm);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& values = params[i].values();
    const auto& grad = params[i].grad();
    auto& vel = velocity[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      vel[j] = mu * vel[j] + clip_scale * grad[j];
      values[j] -= lr * vel[j];
    }
  }
}

// ---------------------------------------------------------------------------
// NeighborhoodSampler
// ---------------------------------------------------------------------------

NeighborhoodSampler::NeighborhoodSampler(const std::vector<int>& train_labels, int num_classes,
                                         int classes_per_batch, int samples_per_class)
    : per_class_(num_classes), p_(classes_per_batch), q_(samples_per_class) {
  if (p_ > num_classes) {
    throw TensorError("sampler: classes_per_batch " + std::to_string(p_) + " exceeds class count " +
                      std::to_string(num_classes));
  }
  if (p_ < 1 || q_ < 1) throw TensorError("sampler: P and Q must be positive");
  for (std::size_t i = 0; i < train_labels.size(); ++i) {
    per_class_.at(train_labels[i]).push_back(static_cast<int>(i));
  }
  cycle_.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) cycle_[c] = c;
  cursor_ = cycle_.size();  // force a shuffle on first use
}

NeighborhoodSampler::Batch NeighborhoodSampler::next(Rng& rng) {
  std::vector<int> group;
  group.reserve(p_);
  while (static_cast<int>(group.size()) < p_) {
    if (cursor_ >= cycle_.size()) {
      rng.shuffle(cycle_);
      cursor_ = 0;
    }
    // After a wrap the next classes may already be in this group; pull the
    // first one that is not (swapping keeps the cycle a permutation).
    std::size_t probe = cursor_;
    while (probe < cycle_.size() &&
           std::find(group.begin(), group.end(), cycle_[probe]) != group.end()) {
      ++probe;
    }
    if (probe == cycle_.size()) {
      rng.shuffle(cycle_);
      cursor_ = 0;
      continue;
    }
    std::swap(cycle_[cursor_], cycle_[probe]);
    group.push_back(cycle_[cursor_]);
    ++cursor_;
  }

  Batch batch;
  batch.indices.reserve(static_cast<std::size_t>(p_) * q_);
  for (int cls : group) {
    const auto& pool = per_class_[cls];
    if (pool.empty()) {
      throw TensorError("sampler: class " + std::to_string(cls) + " has no training samples");
    }
    if (static_cast<int>(pool.size()) < q_) {
      for (int s = 0; s < q_; ++s) {
        batch.indices.push_back(pool[rng.below(pool.size())]);
        batch.labels.push_back(cls);
      }
    } else {
      // Partial Fisher-Yates draw of q_ distinct positions.
      std::vector<int> positions(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) positions[i] = static_cast<int>(i);
      for (int s = 0; s < q_; ++s) {
        const std::size_t j = s + rng.below(positions.size() - s);
        std::swap(positions[s], positions[j]);
        batch.indices.push_back(pool[positions[s]]);
        batch.labels.push_back(cls);
      }
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Epoch log
// ---------------------------------------------------------------------------

std::string EpochLogRow::csv_header() {
  return "epoch,loss,train_acc,many_acc,medium_acc,few_acc";
}

std::string EpochLogRow::csv_row() const {
  std::ostringstream os;
  os.precision(9);
  os << epoch << ',' << loss << ',' << train_acc << ',' << many_acc << ',' << medium_acc << ','
     << few_acc;
  return os.str();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

template <std::floating_point T>
double train_step(TrainState<T>& state, const Dataset& dataset,
                  const std::vector<int>& batch_indices, const ObjectiveConfig& objective,
                  const TrainConfig& config, double lr_scale) {
  OltrModel<T>& model = state.model;
  std::vector<Tensor<T>> metas;
  std::vector<int> labels;
  std::vector<std::vector<T>> directs;
  metas.reserve(batch_indices.size());
  for (int idx : batch_indices) {
    Tensor<T> v_direct = model.direct_feature(model.input_tensor(dataset.train_sample(idx)));
    directs.push_back(v_direct.values());
    metas.push_back(model.embed(v_direct).v_meta);
    labels.push_back(dataset.train_labels[idx]);
  }

  ObjectiveConfig effective = objective;
  if (!model.uses_memory()) effective.lambda = 0.0;  // no centroids to repel yet

  Tensor<T> loss = total_loss(metas, labels, model.bank, model.classifier, effective);
  state.optimizer.zero_grad();
  backward(loss);
  state.optimizer.step(lr_scale);

  if (model.uses_memory() && config.centroid_rate != 0.0) {
    update_centroids(model.bank, directs, labels, static_cast<T>(config.centroid_rate));
  }
  return static_cast<double>(loss.item());
}

template <std::floating_point T>
void initialize_memory(TrainState<T>& state, const Dataset& dataset) {
  NoGradGuard no_grad;
  std::vector<std::vector<T>> features;
  features.reserve(dataset.train_size());
  for (int i = 0; i < dataset.train_size(); ++i) {
    features.push_back(
        state.model.direct_feature(state.model.input_tensor(dataset.train_sample(i))).values());
  }
  state.model.bank = init_centroids<T>(features, dataset.train_labels, dataset.num_known);
  state.model.memory_ready = true;
  state.warmed_up = true;

  // Prime the hallucinator with centroid affinities: row i = c_i / ||c_i||^2
  // puts o_i near 1 when the direct feature sits at centroid i and near the
  // inter-centroid cosine otherwise, so the memory feature starts as a
  // soft nearest-centroid anchor instead of zero.
  const int k = state.model.bank.num_classes();
  const int dim = state.model.bank.dim();
  auto& hal_w = state.model.heads.hal.weight.values();
  for (int i = 0; i < k; ++i) {
    const T* c = state.model.bank.centroid_data(i);
    T sq = T(0);
    for (int d = 0; d < dim; ++d) sq += c[d] * c[d];
    if (sq <= T(0)) continue;
    for (int d = 0; d < dim; ++d) hal_w[static_cast<std::size_t>(i) * dim + d] = c[d] / sq;
  }
}

template <std::floating_point T>
TrainState<T> train(const Dataset& dataset, const ModelSettings& model_settings,
                    const TrainConfig& config, const ObjectiveConfig& objective,
                    std::vector<EpochLogRow>* log, const EpochCallback<T>& on_epoch) {
  TrainState<T> state;
  state.rng = Rng(config.seed);
  state.model = OltrModel<T>::init(model_settings, dataset.num_known, state.rng);
  state.optimizer.learning_rate = config.learning_rate;
  state.optimizer.momentum = config.momentum;
  state.optimizer.clip_norm = config.clip_norm;
  state.optimizer.attach(state.model.parameters());

  const ShotSplit split = split_by_shot(dataset.train_counts);
  NeighborhoodSampler sampler(dataset.train_labels, dataset.num_known, config.classes_per_batch,
                              config.samples_per_class);
  const int batch_size = config.classes_per_batch * config.samples_per_class;
  const int steps_per_epoch = std::max(1, (dataset.train_size() + batch_size - 1) / batch_size);

  auto run_epoch = [&](double lr_scale) {
    sampler.reset_cycle();
    double loss_sum = 0.0;
    long seen = 0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      auto batch = sampler.next(state.rng);
      loss_sum += train_step(state, dataset, batch.indices, objective, config, lr_scale);
      seen += static_cast<long>(batch.indices.size());
    }
    return seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
  };

  for (int e = 0; e < config.warmup_epochs; ++e) run_epoch(1.0);
  initialize_memory(state, dataset);

  for (int e = 1; e <= config.epochs; ++e) {
    const double lr_scale = 3 * e > 2 * config.epochs ? config.lr_decay : 1.0;
    const double mean_loss = run_epoch(lr_scale);
    state.epoch = e;
    if (log) {
      EpochLogRow row;
      row.epoch = e;
      row.loss = mean_loss;
      row.train_acc = train_accuracy(state.model, dataset);
      const EvalReport closed = evaluate_model(state.model, dataset, split, 0.0);
      row.many_acc = closed.accuracies.many;
      row.medium_acc = closed.accuracies.medium;
      row.few_acc = closed.accuracies.few;
      log->push_back(row);
    }
    if (on_epoch) on_epoch(state, e);
  }
  return state;
}

#define OLTR_INSTANTIATE_TRAIN(T)                                                            \
  template struct SgdMomentum<T>;                                                            \
  template struct TrainState<T>;                                                             \
  template double train_step<T>(TrainState<T>&, const Dataset&, const std::vector<int>&,     \
                                const ObjectiveConfig&, const TrainConfig&, double);         \
  template void initialize_memory<T>(TrainState<T>&, const Dataset&);                        \
  template TrainState<T> train<T>(const Dataset&, const ModelSettings&, const TrainConfig&,  \
                                  const ObjectiveConfig&, std::vector<EpochLogRow>*,         \
                                  const EpochCallback<T>&);

OLTR_INSTANTIATE_TRAIN(float)
OLTR_INSTANTIATE_TRAIN(double)

#undef OLTR_INSTANTIATE_TRAIN

}  // namespace oltr
