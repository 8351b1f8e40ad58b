#pragma once

#include <vector>

#include "oltr/backbone.hpp"
#include "oltr/tensor.hpp"

namespace oltr {

// Visual memory: one discriminative centroid per known class, stored as
// plain values. Centroids enter the forward pass as non-differentiable
// constants; they change only through update_centroids between steps.
template <std::floating_point T>
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(int num_classes, int dim)
      : dim_(dim), data_(static_cast<std::size_t>(num_classes) * dim, T(0)) {}

  int num_classes() const { return dim_ == 0 ? 0 : static_cast<int>(data_.size()) / dim_; }
  int dim() const { return dim_; }
  bool empty() const { return data_.empty(); }

  T* centroid_data(int i) { return data_.data() + static_cast<std::size_t>(i) * dim_; }
  const T* centroid_data(int i) const { return data_.data() + static_cast<std::size_t>(i) * dim_; }

  // Fresh constant tensors; mutation of the bank never aliases a live graph.
  Tensor<T> as_tensor() const;
  Tensor<T> centroid(int i) const;

  T min_distance(const T* v) const;
  // (d1, d2) with d1 <= d2; requires at least two centroids.
  std::pair<T, T> two_nearest(const T* v) const;

  void append(const std::vector<T>& centroid);

  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }
  void set_dim(int dim) { dim_ = dim; }

 private:
  int dim_ = 0;
  std::vector<T> data_;
};

// Per-class means of warm-up direct features. Throws listing any known class
// with no feature.
template <std::floating_point T>
MemoryBank<T> init_centroids(const std::vector<std::vector<T>>& features,
                             const std::vector<int>& labels, int num_classes);

// One application of the batch update rule:
//   delta_i = sum_b 1(y_b = i)(c_i - x_b) / (1 + sum_b 1(y_b = i))
//   c_i    <- c_i - rate * delta_i
template <std::floating_point T>
void update_centroids(MemoryBank<T>& bank, const std::vector<std::vector<T>>& features,
                      const std::vector<int>& labels, T rate);

// gamma = min_i ||v_direct - c_i||_2 as a recorded op; the gradient follows
// the nearest centroid (first index on ties, zero exactly at a centroid).
template <std::floating_point T>
Tensor<T> reachability(const Tensor<T>& v_direct, const MemoryBank<T>& bank);

template <std::floating_point T>
struct MetaEmbeddingHeads {
  AffineLayer<T> hal;  // d -> K, coefficient hallucinator
  AffineLayer<T> sel;  // d -> d, concept selector (pre-tanh)

  NamedParams<T> named_parameters() const;

  // hal starts at zero (no memory infusion until learned), sel random so the
  // selector path carries gradient from the first step.
  static MetaEmbeddingHeads init(int dim, int num_classes, Rng& rng);

  // Extends hal to new classes with zero-initialized rows.
  void grow_hal(int extra_classes);
};

template <std::floating_point T>
struct MetaEmbedding {
  Tensor<T> v_direct;
  Tensor<T> coeffs;    // o, length K
  Tensor<T> v_memory;  // sum_i o_i c_i
  Tensor<T> selector;  // e = tanh(T_sel(v_direct)), coords in (-1,1)
  Tensor<T> gamma;     // scalar reachability
  Tensor<T> v_meta;    // (1/max(gamma,eps)) * (v_direct + e (x) v_memory)
};

template <std::floating_point T>
MetaEmbedding<T> compose_meta_embedding(const Tensor<T>& v_direct, const MemoryBank<T>& bank,
                                        const MetaEmbeddingHeads<T>& heads, T epsilon);

}  // namespace oltr
