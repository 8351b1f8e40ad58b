#include "oltr/objective.hpp"

#include <cmath>
#include <limits>

namespace oltr {

template <std::floating_point T>
Tensor<T> squash(const Tensor<T>& v, T eps) {
  if (v.rank() != 1) throw TensorError("squash: expected a vector, got " + shape_str(v.shape()));
  const auto& vals = v.values();
  T sq = T(0);
  for (const T x : vals) sq += x * x;
  const T norm = std::sqrt(sq);
  const T factor = (sq / (T(1) + sq)) / std::max(norm, eps);
  std::vector<T> out(vals);
  for (auto& x : out) x *= factor;

  auto backprop = [v, norm, eps](const std::vector<T>& g) {
    if (!v.requires_grad()) return;
    const auto& vv = v.values();
    auto& gv = v.grad();
    const T n2 = norm * norm;
    if (norm >= eps) {
      // s = phi(n) v with phi(n) = n / (1 + n^2);
      // J = phi(n) I + phi'(n) v v^T / n.
      const T phi = norm / (T(1) + n2);
      const T dphi = (T(1) - n2) / ((T(1) + n2) * (T(1) + n2));
      T dot = T(0);
      for (std::size_t i = 0; i < gv.size(); ++i) dot += g[i] * vv[i];
      const T radial = dphi * dot / norm;
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += phi * g[i] + radial * vv[i];
    } else {
      // Below the guard, s = (n^2 / ((1+n^2) eps)) v; at v ~ 0 the Jacobian
      // vanishes, keep only the diagonal term.
      const T phi = n2 / ((T(1) + n2) * eps);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += phi * g[i];
    }
  };
  return make_op<T>("squash", v.shape(), std::move(out), {v}, std::move(backprop));
}

namespace {

// Row-wise unit normalization of a (K,d) matrix.
template <std::floating_point T>
Tensor<T> l2_normalize_rows(const Tensor<T>& w) {
  const int k = w.shape()[0], dim = w.shape()[1];
  const auto& vals = w.values();
  std::vector<T> norms(k);
  std::vector<T> out(vals.size());
  for (int i = 0; i < k; ++i) {
    T sq = T(0);
    for (int d = 0; d < dim; ++d) {
      const T x = vals[static_cast<std::size_t>(i) * dim + d];
      sq += x * x;
    }
    if (sq == T(0)) {
      throw TensorError("cosine_logits: classifier weight row " + std::to_string(i) +
                        " has zero norm");
    }
    norms[i] = std::sqrt(sq);
    for (int d = 0; d < dim; ++d) {
      out[static_cast<std::size_t>(i) * dim + d] = vals[static_cast<std::size_t>(i) * dim + d] / norms[i];
    }
  }
  auto backprop = [w, norms = std::move(norms), k, dim](const std::vector<T>& g) {
    if (!w.requires_grad()) return;
    const auto& vals2 = w.values();
    auto& gw = w.grad();
    for (int i = 0; i < k; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * dim;
      T dot = T(0);
      for (int d = 0; d < dim; ++d) dot += g[base + d] * vals2[base + d];
      const T inv = T(1) / norms[i];
      const T inv3 = inv * inv * inv;
      for (int d = 0; d < dim; ++d) {
        gw[base + d] += g[base + d] * inv - vals2[base + d] * dot * inv3;
      }
    }
  };
  return make_op<T>("l2_normalize_rows", w.shape(), std::move(out), {w}, std::move(backprop));
}

}  // namespace

template <std::floating_point T>
CosineClassifier<T> CosineClassifier<T>::init(int num_classes, int dim, T scale, Rng& rng) {
  CosineClassifier<T> clf;
  clf.scale = scale;
  const double bound = std::sqrt(6.0 / (num_classes + dim));
  std::vector<T> values(static_cast<std::size_t>(num_classes) * dim);
  for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
  clf.weight = Tensor<T>::from_values({num_classes, dim}, std::move(values), true);
  return clf;
}

template <std::floating_point T>
void CosineClassifier<T>::grow(const std::vector<std::vector<T>>& new_rows) {
  const int dim_now = dim();
  std::vector<T> values = weight.values();
  for (const auto& row : new_rows) {
    if (static_cast<int>(row.size()) != dim_now) {
      throw TensorError("classifier grow: row dim " + std::to_string(row.size()) +
                        " != " + std::to_string(dim_now));
    }
    values.insert(values.end(), row.begin(), row.end());
  }
  weight = Tensor<T>::from_values({num_classes() + static_cast<int>(new_rows.size()), dim_now},
                                  std::move(values), true);
}

template <std::floating_point T>
Tensor<T> cosine_logits(const Tensor<T>& v_meta, const CosineClassifier<T>& classifier) {
  if (v_meta.rank() != 1 || v_meta.shape()[0] != classifier.dim()) {
    throw TensorError("cosine_logits: embedding shape " + shape_str(v_meta.shape()) +
                      " does not match classifier dim " + std::to_string(classifier.dim()));
  }
  Tensor<T> squashed = squash(v_meta);
  Tensor<T> unit_rows = l2_normalize_rows(classifier.weight);
  return scalar_mul(matmul(unit_rows, squashed), classifier.scale);
}

template <std::floating_point T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, int label) {
  if (logits.rank() != 1) {
    throw TensorError("cross_entropy: logits must be a vector, got " + shape_str(logits.shape()));
  }
  const int k = logits.shape()[0];
  if (label < 0 || label >= k) {
    throw TensorError("cross_entropy: label " + std::to_string(label) + " out of range 0.." +
                      std::to_string(k - 1));
  }
  const auto& l = logits.values();
  T max_v = l[0];
  for (const T x : l) max_v = std::max(max_v, x);
  T denom = T(0);
  std::vector<T> probs(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    probs[i] = std::exp(l[i] - max_v);
    denom += probs[i];
  }
  for (auto& p : probs) p /= denom;
  const T loss = std::log(denom) + max_v - l[static_cast<std::size_t>(label)];

  auto backprop = [logits, probs = std::move(probs), label](const std::vector<T>& g) {
    if (!logits.requires_grad()) return;
    auto& gl = logits.grad();
    for (std::size_t i = 0; i < gl.size(); ++i) {
      const T onehot = static_cast<int>(i) == label ? T(1) : T(0);
      gl[i] += g[0] * (probs[i] - onehot);
    }
  };
  return make_op<T>("cross_entropy", {1}, {loss}, {logits}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> large_margin_loss(const Tensor<T>& v_meta, const MemoryBank<T>& bank, int label,
                            T margin) {
  if (bank.empty()) throw TensorError("large_margin_loss: empty memory bank");
  const int k = bank.num_classes();
  if (label < 0 || label >= k) {
    throw TensorError("large_margin_loss: label " + std::to_string(label) + " out of range 0.." +
                      std::to_string(k - 1));
  }
  std::vector<Tensor<T>> dists;
  dists.reserve(k);
  for (int i = 0; i < k; ++i) {
    dists.push_back(l2_norm(sub(v_meta, bank.centroid(i))));
  }
  // d_y - sum_{i != y} d_i + m  ==  2 d_y - sum_i d_i + m
  Tensor<T> all = sum(concat(dists, 0));
  Tensor<T> hinge_arg = add(sub(scalar_mul(dists[label], T(2)), all), Tensor<T>::scalar(margin));
  return relu(hinge_arg);
}

template <std::floating_point T>
Tensor<T> total_loss(const std::vector<Tensor<T>>& meta_embeddings, const std::vector<int>& labels,
                     const MemoryBank<T>& bank, const CosineClassifier<T>& classifier,
                     const ObjectiveConfig& config) {
  if (meta_embeddings.empty()) throw TensorError("total_loss: empty batch");
  if (meta_embeddings.size() != labels.size()) {
    throw TensorError("total_loss: batch size mismatch");
  }
  Tensor<T> ce_sum;
  for (std::size_t n = 0; n < meta_embeddings.size(); ++n) {
    Tensor<T> ce = cross_entropy_loss(cosine_logits(meta_embeddings[n], classifier), labels[n]);
    ce_sum = ce_sum.defined() ? add(ce_sum, ce) : ce;
  }
  if (config.lambda == 0.0) return ce_sum;
  Tensor<T> lm_sum;
  for (std::size_t n = 0; n < meta_embeddings.size(); ++n) {
    Tensor<T> lm =
        large_margin_loss(meta_embeddings[n], bank, labels[n], static_cast<T>(config.margin));
    lm_sum = lm_sum.defined() ? add(lm_sum, lm) : lm;
  }
  return add(ce_sum, scalar_mul(lm_sum, static_cast<T>(config.lambda)));
}

#define OLTR_INSTANTIATE_OBJECTIVE(T)                                                       \
  template struct CosineClassifier<T>;                                                      \
  template Tensor<T> large_margin_loss<T>(const Tensor<T>&, const MemoryBank<T>&, int, T);  \
  template Tensor<T> total_loss<T>(const std::vector<Tensor<T>>&, const std::vector<int>&,  \
                                   const MemoryBank<T>&, const CosineClassifier<T>&,        \
                                   const ObjectiveConfig&);

OLTR_INSTANTIATE_OBJECTIVE(float)
OLTR_INSTANTIATE_OBJECTIVE(double)

#undef OLTR_INSTANTIATE_OBJECTIVE

namespace detail {
template <std::floating_point T>
void* objective_op_instantiations[] = {
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&, T)>(&squash<T>)),
    reinterpret_cast<void*>(
        static_cast<Tensor<T> (*)(const Tensor<T>&, const CosineClassifier<T>&)>(&cosine_logits<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&, int)>(&cross_entropy_loss<T>)),
};
template void* objective_op_instantiations<float>[];
template void* objective_op_instantiations<double>[];
}  // namespace detail

}  // namespace oltr
