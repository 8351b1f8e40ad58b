#include "oltr/model.hpp"

namespace oltr {

template <std::floating_point T>
OltrModel<T> OltrModel<T>::init(const ModelSettings& settings, int num_known, Rng& rng) {
  OltrModel<T> model;
  model.settings = settings;
  if (settings.backbone == ModelSettings::BackboneKind::Mlp) {
    model.backbone.impl =
        MlpBackbone<T>::init(settings.input_dim, settings.hidden_dim, settings.feature_dim, rng);
  } else {
    model.backbone.impl =
        CnnBackbone<T>::init(settings.in_channels, settings.channels, settings.feature_dim, rng);
  }
  model.heads = MetaEmbeddingHeads<T>::init(settings.feature_dim, num_known, rng);
  model.classifier = CosineClassifier<T>::init(num_known, settings.feature_dim,
                                               static_cast<T>(settings.logit_scale), rng);
  return model;
}

template <std::floating_point T>
Tensor<T> OltrModel<T>::input_tensor(const float* sample) const {
  std::vector<int> shape;
  std::int64_t n = 0;
  if (settings.backbone == ModelSettings::BackboneKind::Mlp) {
    shape = {settings.input_dim};
    n = settings.input_dim;
  } else {
    shape = {settings.in_channels, settings.side, settings.side};
    n = static_cast<std::int64_t>(settings.in_channels) * settings.side * settings.side;
  }
  std::vector<T> values(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) values[i] = static_cast<T>(sample[i]);
  return Tensor<T>::from_values(std::move(shape), std::move(values), false);
}

template <std::floating_point T>
MetaEmbedding<T> OltrModel<T>::embed(const Tensor<T>& v_direct) const {
  if (uses_memory()) {
    return compose_meta_embedding(v_direct, bank, heads, static_cast<T>(settings.epsilon));
  }
  MetaEmbedding<T> emb;
  emb.v_direct = v_direct;
  emb.gamma = Tensor<T>::scalar(T(1));
  emb.v_meta = v_direct;
  return emb;
}

template <std::floating_point T>
std::vector<double> OltrModel<T>::predict_logits(const float* sample) const {
  NoGradGuard no_grad;
  Tensor<T> v_direct = direct_feature(input_tensor(sample));
  Tensor<T> l = logits(embed(v_direct).v_meta);
  std::vector<double> out(l.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(l.values()[i]);
  return out;
}

template <std::floating_point T>
NamedParams<T> OltrModel<T>::named_parameters() const {
  NamedParams<T> params = backbone.named_parameters();
  for (auto& named : heads.named_parameters()) params.push_back(std::move(named));
  for (auto& named : classifier.named_parameters()) params.push_back(std::move(named));
  return params;
}

template <std::floating_point T>
std::vector<Tensor<T>> OltrModel<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

template struct OltrModel<float>;
template struct OltrModel<double>;

}  // namespace oltr
