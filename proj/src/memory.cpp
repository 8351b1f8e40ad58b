#include "oltr/memory.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace oltr {

template <std::floating_point T>
Tensor<T> MemoryBank<T>::as_tensor() const {
  return Tensor<T>::from_values({num_classes(), dim_}, data_, false);
}

template <std::floating_point T>
Tensor<T> MemoryBank<T>::centroid(int i) const {
  const T* c = centroid_data(i);
  return Tensor<T>::from_values({dim_}, std::vector<T>(c, c + dim_), false);
}

template <std::floating_point T>
T MemoryBank<T>::min_distance(const T* v) const {
  if (empty()) throw TensorError("memory bank: reachability on an empty bank");
  T best = std::numeric_limits<T>::max();
  const int k = num_classes();
  for (int i = 0; i < k; ++i) {
    const T* c = centroid_data(i);
    T acc = T(0);
    for (int d = 0; d < dim_; ++d) {
      const T diff = v[d] - c[d];
      acc += diff * diff;
    }
    best = std::min(best, acc);
  }
  return std::sqrt(best);
}

template <std::floating_point T>
std::pair<T, T> MemoryBank<T>::two_nearest(const T* v) const {
  if (num_classes() < 2) {
    throw TensorError("memory bank: two_nearest needs at least two centroids, have " +
                      std::to_string(num_classes()));
  }
  T best = std::numeric_limits<T>::max(), second = std::numeric_limits<T>::max();
  const int k = num_classes();
  for (int i = 0; i < k; ++i) {
    const T* c = centroid_data(i);
    T acc = T(0);
    for (int d = 0; d < dim_; ++d) {
      const T diff = v[d] - c[d];
      acc += diff * diff;
    }
    if (acc < best) {
      second = best;
      best = acc;
    } else if (acc < second) {
      second = acc;
    }
  }
  return {std::sqrt(best), std::sqrt(second)};
}

template <std::floating_point T>
void MemoryBank<T>::append(const std::vector<T>& centroid) {
  if (dim_ == 0) dim_ = static_cast<int>(centroid.size());
  if (static_cast<int>(centroid.size()) != dim_) {
    throw TensorError("memory bank: appended centroid has dim " +
                      std::to_string(centroid.size()) + ", bank dim " + std::to_string(dim_));
  }
  data_.insert(data_.end(), centroid.begin(), centroid.end());
}

template <std::floating_point T>
MemoryBank<T> init_centroids(const std::vector<std::vector<T>>& features,
                             const std::vector<int>& labels, int num_classes) {
  if (features.size() != labels.size()) {
    throw TensorError("init_centroids: feature/label count mismatch");
  }
  if (features.empty()) throw TensorError("init_centroids: no features");
  const int dim = static_cast<int>(features.front().size());
  MemoryBank<T> bank(num_classes, dim);
  std::vector<int> counts(num_classes, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= num_classes) {
      throw TensorError("init_centroids: label " + std::to_string(label) + " out of range");
    }
    T* c = bank.centroid_data(label);
    for (int d = 0; d < dim; ++d) c[d] += features[i][d];
    counts[label]++;
  }
  std::ostringstream missing;
  bool any_missing = false;
  for (int k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) {
      missing << (any_missing ? ", " : "") << k;
      any_missing = true;
    }
  }
  if (any_missing) {
    throw TensorError("init_centroids: classes with no features: " + missing.str());
  }
  for (int k = 0; k < num_classes; ++k) {
    T* c = bank.centroid_data(k);
    for (int d = 0; d < dim; ++d) c[d] /= static_cast<T>(counts[k]);
  }
  return bank;
}

template <std::floating_point T>
void update_centroids(MemoryBank<T>& bank, const std::vector<std::vector<T>>& features,
                      const std::vector<int>& labels, T rate) {
  const int k = bank.num_classes();
  const int dim = bank.dim();
  std::vector<T> delta(static_cast<std::size_t>(k) * dim, T(0));
  std::vector<int> counts(k, 0);
  for (std::size_t b = 0; b < features.size(); ++b) {
    const int label = labels[b];
    if (label < 0 || label >= k) {
      throw TensorError("update_centroids: label " + std::to_string(label) + " out of range 0.." +
                        std::to_string(k - 1));
    }
    const T* c = bank.centroid_data(label);
    T* dst = delta.data() + static_cast<std::size_t>(label) * dim;
    for (int d = 0; d < dim; ++d) dst[d] += c[d] - features[b][d];
    counts[label]++;
  }
  for (int i = 0; i < k; ++i) {
    if (counts[i] == 0) continue;  // absent classes stay put
    const T denom = T(1) + static_cast<T>(counts[i]);
    T* c = bank.centroid_data(i);
    const T* dst = delta.data() + static_cast<std::size_t>(i) * dim;
    for (int d = 0; d < dim; ++d) c[d] -= rate * dst[d] / denom;
  }
}

template <std::floating_point T>
Tensor<T> reachability(const Tensor<T>& v_direct, const MemoryBank<T>& bank) {
  if (bank.empty()) throw TensorError("reachability: empty memory bank");
  if (v_direct.rank() != 1 || v_direct.shape()[0] != bank.dim()) {
    throw TensorError("reachability: feature shape " + shape_str(v_direct.shape()) +
                      " does not match bank dim " + std::to_string(bank.dim()));
  }
  const auto& v = v_direct.values();
  const int k = bank.num_classes();
  const int dim = bank.dim();
  T best = std::numeric_limits<T>::max();
  int argmin = 0;
  for (int i = 0; i < k; ++i) {
    const T* c = bank.centroid_data(i);
    T acc = T(0);
    for (int d = 0; d < dim; ++d) {
      const T diff = v[d] - c[d];
      acc += diff * diff;
    }
    if (acc < best) {
      best = acc;
      argmin = i;
    }
  }
  const T gamma = std::sqrt(best);
  std::vector<T> nearest(bank.centroid_data(argmin), bank.centroid_data(argmin) + dim);

  auto backprop = [v_direct, nearest = std::move(nearest), gamma](const std::vector<T>& g) {
    if (!v_direct.requires_grad()) return;
    constexpr T tiny = std::numeric_limits<T>::min();
    const T scale = g[0] / std::max(gamma, tiny);
    auto& gv = v_direct.grad();
    const auto& vv = v_direct.values();
    if (gamma > T(0)) {
      for (std::size_t d = 0; d < gv.size(); ++d) gv[d] += scale * (vv[d] - nearest[d]);
    }
  };
  return make_op<T>("reachability", {1}, {gamma}, {v_direct}, std::move(backprop));
}

namespace {

// tanh that honors the open-interval contract of the concept selector at
// floating point: saturated values are nudged to the nearest representable
// inside (-1, 1).
template <std::floating_point T>
Tensor<T> bounded_tanh(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (auto& v : out) {
    v = std::tanh(v);
    if (v >= T(1)) v = std::nextafter(T(1), T(0));
    if (v <= T(-1)) v = std::nextafter(T(-1), T(0));
  }
  std::vector<T> y = out;
  auto backprop = [x, y = std::move(y)](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
  };
  return make_op<T>("bounded_tanh", x.shape(), std::move(out), {x}, std::move(backprop));
}

// 1 / max(x, eps), differentiable where the clamp is inactive.
template <std::floating_point T>
Tensor<T> recip_clamped(const Tensor<T>& x, T eps) {
  const T v = x.item();
  const T out = T(1) / std::max(v, eps);
  auto backprop = [x, v, eps](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    if (v > eps) x.grad()[0] += -g[0] / (v * v);
  };
  return make_op<T>("recip_clamped", {1}, {out}, {x}, std::move(backprop));
}

}  // namespace

template <std::floating_point T>
MetaEmbeddingHeads<T> MetaEmbeddingHeads<T>::init(int dim, int num_classes, Rng& rng) {
  MetaEmbeddingHeads<T> heads;
  heads.hal = AffineLayer<T>::zero(dim, num_classes);
  heads.sel = AffineLayer<T>::xavier(dim, dim, rng);
  return heads;
}

template <std::floating_point T>
NamedParams<T> MetaEmbeddingHeads<T>::named_parameters() const {
  return {{"heads.hal.weight", hal.weight},
          {"heads.hal.bias", hal.bias},
          {"heads.sel.weight", sel.weight},
          {"heads.sel.bias", sel.bias}};
}

template <std::floating_point T>
void MetaEmbeddingHeads<T>::grow_hal(int extra_classes) {
  const int dim = hal.weight.shape()[1];
  const int old_k = hal.weight.shape()[0];
  std::vector<T> w = hal.weight.values();
  w.resize(static_cast<std::size_t>(old_k + extra_classes) * dim, T(0));
  std::vector<T> b = hal.bias.values();
  b.resize(static_cast<std::size_t>(old_k + extra_classes), T(0));
  hal.weight = Tensor<T>::from_values({old_k + extra_classes, dim}, std::move(w), true);
  hal.bias = Tensor<T>::from_values({old_k + extra_classes}, std::move(b), true);
}

template <std::floating_point T>
MetaEmbedding<T> compose_meta_embedding(const Tensor<T>& v_direct, const MemoryBank<T>& bank,
                                        const MetaEmbeddingHeads<T>& heads, T epsilon) {
  if (epsilon <= T(0)) throw TensorError("compose_meta_embedding: epsilon must be positive");
  MetaEmbedding<T> emb;
  emb.v_direct = v_direct;
  emb.coeffs = heads.hal(v_direct);                      // (K,)
  emb.v_memory = matmul(emb.coeffs, bank.as_tensor());   // (d,), centroids constant
  emb.selector = bounded_tanh(heads.sel(v_direct));      // (d,), coords in (-1,1)
  emb.gamma = reachability(v_direct, bank);
  Tensor<T> infused = add(v_direct, elemwise_mul(emb.selector, emb.v_memory));
  emb.v_meta = elemwise_mul(infused, recip_clamped(emb.gamma, epsilon));
  return emb;
}

#define OLTR_INSTANTIATE_MEMORY(T)                                                       \
  template class MemoryBank<T>;                                                          \
  template MemoryBank<T> init_centroids<T>(const std::vector<std::vector<T>>&,           \
                                           const std::vector<int>&, int);                \
  template void update_centroids<T>(MemoryBank<T>&, const std::vector<std::vector<T>>&,  \
                                    const std::vector<int>&, T);                         \
  template struct MetaEmbeddingHeads<T>;                                                 \
  template struct MetaEmbedding<T>;                                                      \
  template MetaEmbedding<T> compose_meta_embedding<T>(const Tensor<T>&, const MemoryBank<T>&, \
                                                      const MetaEmbeddingHeads<T>&, T);

OLTR_INSTANTIATE_MEMORY(float)
OLTR_INSTANTIATE_MEMORY(double)

#undef OLTR_INSTANTIATE_MEMORY

namespace detail {
template <std::floating_point T>
void* memory_op_instantiations[] = {
    reinterpret_cast<void*>(
        static_cast<Tensor<T> (*)(const Tensor<T>&, const MemoryBank<T>&)>(&reachability<T>)),
};
template void* memory_op_instantiations<float>[];
template void* memory_op_instantiations<double>[];
}  // namespace detail

}  // namespace oltr
