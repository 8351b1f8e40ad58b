#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "oltr/rng.hpp"
#include "oltr/tensor.hpp"

namespace oltr {

template <std::floating_point T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <std::floating_point T>
struct AffineLayer {
  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;    // (out)

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(weight, x), bias); }

  static AffineLayer xavier(int in, int out, Rng& rng);
  static AffineLayer zero(int in, int out);
};

// Vector-input path: input -> 64 -> 64 -> d, relu between layers, linear out.
template <std::floating_point T>
struct MlpBackbone {
  AffineLayer<T> fc1, fc2, out;

  Tensor<T> forward(const Tensor<T>& input) const;
  NamedParams<T> named_parameters(const std::string& prefix) const;

  static MlpBackbone init(int input_dim, int hidden_dim, int feature_dim, Rng& rng);
};

// Non-local style self-attention over a (C,H,W) map: affinities between all
// positions from two half-channel 1x1 projections, rows softmax-normalized,
// applied to a half-channel value projection and projected back to C.
template <std::floating_point T>
struct SelfAttention {
  Tensor<T> theta_w;  // (C/2, C)
  Tensor<T> phi_w;    // (C/2, C)
  Tensor<T> g_w;      // (C/2, C)
  Tensor<T> out_w;    // (C, C/2)

  Tensor<T> forward(const Tensor<T>& f) const;
  NamedParams<T> named_parameters(const std::string& prefix) const;

  static SelfAttention init(int channels, Rng& rng);
};

// f_att = f + MA(f) (x) SA(f). MA is a 1x1-conv spatial map, softmaxed over
// all H*W positions and rescaled by H*W so a uniform map weights every
// position by exactly 1 (zero-init MA reduces to f + SA(f)).
template <std::floating_point T>
struct ModulatedAttention {
  SelfAttention<T> sa;
  Tensor<T> ma_w;  // (1, C)
  Tensor<T> ma_b;  // (1)

  Tensor<T> forward(const Tensor<T>& f) const;
  NamedParams<T> named_parameters(const std::string& prefix) const;

  static ModulatedAttention init(int channels, Rng& rng);
};

// Image path: conv3x3 -> relu -> conv3x3 -> relu -> modulated attention ->
// global average pool -> linear to d.
template <std::floating_point T>
struct CnnBackbone {
  Tensor<T> conv1_w, conv1_b;
  Tensor<T> conv2_w, conv2_b;
  ModulatedAttention<T> attention;
  AffineLayer<T> proj;

  Tensor<T> forward(const Tensor<T>& image) const;
  NamedParams<T> named_parameters(const std::string& prefix) const;

  static CnnBackbone init(int in_channels, int channels, int feature_dim, Rng& rng);
};

template <std::floating_point T>
struct Backbone {
  std::variant<MlpBackbone<T>, CnnBackbone<T>> impl;

  Tensor<T> forward(const Tensor<T>& input) const {
    return std::visit([&](const auto& b) { return b.forward(input); }, impl);
  }
  NamedParams<T> named_parameters() const {
    return std::visit([](const auto& b) { return b.named_parameters("backbone"); }, impl);
  }
};

}  // namespace oltr
