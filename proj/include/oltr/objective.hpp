#pragma once

#include <vector>

#include "oltr/memory.hpp"
#include "oltr/tensor.hpp"

namespace oltr {

// Norm-squashing normalization: (||v||^2 / (1 + ||v||^2)) * v / max(||v||, eps).
// Direction preserved, output norm strictly below 1.
template <std::floating_point T>
Tensor<T> squash(const Tensor<T>& v, T eps = T(1e-12));

// Bias-free cosine classifier with unit-normalized weight rows and a fixed
// logit scale.
template <std::floating_point T>
struct CosineClassifier {
  Tensor<T> weight;  // (K, d)
  T scale = T(16);

  int num_classes() const { return weight.shape()[0]; }
  int dim() const { return weight.shape()[1]; }

  NamedParams<T> named_parameters() const { return {{"classifier.weight", weight}}; }

  static CosineClassifier init(int num_classes, int dim, T scale, Rng& rng);

  // Appends one weight row per new class (fresh tensor, old rows copied).
  void grow(const std::vector<std::vector<T>>& new_rows);
};

// logit_k = scale * <squash(v_meta), w_k / ||w_k||>
template <std::floating_point T>
Tensor<T> cosine_logits(const Tensor<T>& v_meta, const CosineClassifier<T>& classifier);

// Standard multi-class softmax cross-entropy, -log p_label.
template <std::floating_point T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, int label);

// max(0, ||v - c_label|| - sum_{i != label} ||v - c_i|| + margin)
template <std::floating_point T>
Tensor<T> large_margin_loss(const Tensor<T>& v_meta, const MemoryBank<T>& bank, int label,
                            T margin);

struct ObjectiveConfig {
  double lambda = 0.1;
  double margin = 5.0;
};

// sum_n CE_n + lambda * sum_n LM_n over the batch.
template <std::floating_point T>
Tensor<T> total_loss(const std::vector<Tensor<T>>& meta_embeddings, const std::vector<int>& labels,
                     const MemoryBank<T>& bank, const CosineClassifier<T>& classifier,
                     const ObjectiveConfig& config);

}  // namespace oltr
