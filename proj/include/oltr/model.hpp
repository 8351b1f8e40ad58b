#pragma once

#include "oltr/backbone.hpp"
#include "oltr/memory.hpp"
#include "oltr/objective.hpp"

namespace oltr {

struct ModelSettings {
  enum class BackboneKind { Mlp, Cnn };
  BackboneKind backbone = BackboneKind::Mlp;
  // A plain variant classifies squash(v_direct) directly: the comparison
  // baseline with no memory, no selector, no reachability calibration.
  bool plain = false;

  int input_dim = 16;  // mlp
  int hidden_dim = 64;
  int side = 16;  // cnn
  int in_channels = 1;
  int channels = 8;

  int feature_dim = 16;
  double logit_scale = 16.0;
  double epsilon = 1e-12;
};

// The full recognizer: backbone, meta-embedding heads, visual memory, and
// cosine classifier. `memory_ready` flips after warm-up; before that the
// embedding path is the identity (gamma treated as 1, no memory feature).
template <std::floating_point T>
struct OltrModel {
  ModelSettings settings;
  Backbone<T> backbone;
  MetaEmbeddingHeads<T> heads;
  CosineClassifier<T> classifier;
  MemoryBank<T> bank;
  bool memory_ready = false;

  static OltrModel init(const ModelSettings& settings, int num_known, Rng& rng);

  int num_classes() const { return classifier.num_classes(); }
  bool uses_memory() const { return memory_ready && !settings.plain; }

  // Wraps one raw float sample into the tensor the backbone expects.
  Tensor<T> input_tensor(const float* sample) const;

  Tensor<T> direct_feature(const Tensor<T>& input) const { return backbone.forward(input); }

  MetaEmbedding<T> embed(const Tensor<T>& v_direct) const;

  Tensor<T> logits(const Tensor<T>& v_meta) const { return cosine_logits(v_meta, classifier); }

  // Inference logits for one raw sample, no graph recorded.
  std::vector<double> predict_logits(const float* sample) const;

  NamedParams<T> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
};

}  // namespace oltr
