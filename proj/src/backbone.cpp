#include "oltr/backbone.hpp"

#include <cmath>

namespace oltr {

namespace {

template <std::floating_point T>
Tensor<T> xavier_tensor(std::vector<int> shape, double fan_in, double fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<T> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from_values(std::move(shape), std::move(values), true);
}

}  // namespace

// ---------------------------------------------------------------------------
// AffineLayer
// ---------------------------------------------------------------------------

template <std::floating_point T>
AffineLayer<T> AffineLayer<T>::xavier(int in, int out, Rng& rng) {
  AffineLayer<T> layer;
  layer.weight = xavier_tensor<T>({out, in}, in, out, rng);
  layer.bias = Tensor<T>::zeros({out}, true);
  return layer;
}

template <std::floating_point T>
AffineLayer<T> AffineLayer<T>::zero(int in, int out) {
  AffineLayer<T> layer;
  layer.weight = Tensor<T>::zeros({out, in}, true);
  layer.bias = Tensor<T>::zeros({out}, true);
  return layer;
}

// ---------------------------------------------------------------------------
// MlpBackbone
// ---------------------------------------------------------------------------

template <std::floating_point T>
MlpBackbone<T> MlpBackbone<T>::init(int input_dim, int hidden_dim, int feature_dim, Rng& rng) {
  MlpBackbone<T> net;
  net.fc1 = AffineLayer<T>::xavier(input_dim, hidden_dim, rng);
  net.fc2 = AffineLayer<T>::xavier(hidden_dim, hidden_dim, rng);
  net.out = AffineLayer<T>::xavier(hidden_dim, feature_dim, rng);
  return net;
}

template <std::floating_point T>
Tensor<T> MlpBackbone<T>::forward(const Tensor<T>& input) const {
  Tensor<T> h1 = relu(fc1(input));
  Tensor<T> h2 = relu(fc2(h1));
  return out(h2);
}

template <std::floating_point T>
NamedParams<T> MlpBackbone<T>::named_parameters(const std::string& prefix) const {
  return {{prefix + ".fc1.weight", fc1.weight}, {prefix + ".fc1.bias", fc1.bias},
          {prefix + ".fc2.weight", fc2.weight}, {prefix + ".fc2.bias", fc2.bias},
          {prefix + ".out.weight", out.weight}, {prefix + ".out.bias", out.bias}};
}

// ---------------------------------------------------------------------------
// SelfAttention
// ---------------------------------------------------------------------------

template <std::floating_point T>
SelfAttention<T> SelfAttention<T>::init(int channels, Rng& rng) {
  if (channels % 2 != 0) {
    throw TensorError("self_attention: channel count must be even, got " +
                      std::to_string(channels));
  }
  const int half = channels / 2;
  SelfAttention<T> sa;
  sa.theta_w = xavier_tensor<T>({half, channels}, channels, half, rng);
  sa.phi_w = xavier_tensor<T>({half, channels}, channels, half, rng);
  sa.g_w = xavier_tensor<T>({half, channels}, channels, half, rng);
  sa.out_w = xavier_tensor<T>({channels, half}, half, channels, rng);
  return sa;
}

template <std::floating_point T>
Tensor<T> SelfAttention<T>::forward(const Tensor<T>& f) const {
  if (f.rank() != 3) {
    throw TensorError("self_attention: input must be (C,H,W), got " + shape_str(f.shape()));
  }
  const int c = f.shape()[0], h = f.shape()[1], w = f.shape()[2];
  if (theta_w.shape()[1] != c) {
    throw TensorError("self_attention: params built for C=" + std::to_string(theta_w.shape()[1]) +
                      ", input has C=" + std::to_string(c));
  }
  const int hw = h * w;
  Tensor<T> fm = reshape(f, {c, hw});
  Tensor<T> theta = matmul(theta_w, fm);  // (C/2, HW)
  Tensor<T> phi = matmul(phi_w, fm);      // (C/2, HW)
  // Affinities between positions, softmax over the second index.
  Tensor<T> affinity = matmul(theta, phi, true, false);  // (HW, HW)
  Tensor<T> attn = softmax(affinity, 1);
  Tensor<T> values = matmul(g_w, fm);  // (C/2, HW)
  // z[c,p] = sum_q values[c,q] * attn[p,q]
  Tensor<T> mixed = matmul(values, attn, false, true);  // (C/2, HW)
  Tensor<T> projected = matmul(out_w, mixed);           // (C, HW)
  return reshape(projected, {c, h, w});
}

template <std::floating_point T>
NamedParams<T> SelfAttention<T>::named_parameters(const std::string& prefix) const {
  return {{prefix + ".theta_w", theta_w},
          {prefix + ".phi_w", phi_w},
          {prefix + ".g_w", g_w},
          {prefix + ".out_w", out_w}};
}

// ---------------------------------------------------------------------------
// ModulatedAttention
// ---------------------------------------------------------------------------

template <std::floating_point T>
ModulatedAttention<T> ModulatedAttention<T>::init(int channels, Rng& rng) {
  ModulatedAttention<T> ma;
  ma.sa = SelfAttention<T>::init(channels, rng);
  // Zero init makes the spatial map exactly uniform at the start.
  ma.ma_w = Tensor<T>::zeros({1, channels}, true);
  ma.ma_b = Tensor<T>::zeros({1}, true);
  return ma;
}

template <std::floating_point T>
Tensor<T> ModulatedAttention<T>::forward(const Tensor<T>& f) const {
  const int c = f.shape()[0], h = f.shape()[1], w = f.shape()[2];
  const int hw = h * w;
  Tensor<T> sa_map = sa.forward(f);
  Tensor<T> fm = reshape(f, {c, hw});
  Tensor<T> ma_raw = add(matmul(ma_w, fm), ma_b);  // (1, HW)
  Tensor<T> ma_map = scalar_mul(softmax(ma_raw, 1), static_cast<T>(hw));
  Tensor<T> modulated = elemwise_mul(sa_map, reshape(ma_map, {1, h, w}));
  return add(f, modulated);
}

template <std::floating_point T>
NamedParams<T> ModulatedAttention<T>::named_parameters(const std::string& prefix) const {
  NamedParams<T> params = sa.named_parameters(prefix + ".sa");
  params.emplace_back(prefix + ".ma_w", ma_w);
  params.emplace_back(prefix + ".ma_b", ma_b);
  return params;
}

// ---------------------------------------------------------------------------
// CnnBackbone
// ---------------------------------------------------------------------------

template <std::floating_point T>
CnnBackbone<T> CnnBackbone<T>::init(int in_channels, int channels, int feature_dim, Rng& rng) {
  CnnBackbone<T> net;
  net.conv1_w = xavier_tensor<T>({channels, in_channels, 3, 3}, in_channels * 9.0, channels * 9.0, rng);
  net.conv1_b = Tensor<T>::zeros({channels}, true);
  net.conv2_w = xavier_tensor<T>({channels, channels, 3, 3}, channels * 9.0, channels * 9.0, rng);
  net.conv2_b = Tensor<T>::zeros({channels}, true);
  net.attention = ModulatedAttention<T>::init(channels, rng);
  net.proj = AffineLayer<T>::xavier(channels, feature_dim, rng);
  return net;
}

template <std::floating_point T>
Tensor<T> CnnBackbone<T>::forward(const Tensor<T>& image) const {
  Tensor<T> c1 = relu(conv2d_3x3(image, conv1_w, conv1_b));
  Tensor<T> c2 = relu(conv2d_3x3(c1, conv2_w, conv2_b));
  Tensor<T> attended = attention.forward(c2);
  Tensor<T> pooled = global_avg_pool(attended);
  return proj(pooled);
}

template <std::floating_point T>
NamedParams<T> CnnBackbone<T>::named_parameters(const std::string& prefix) const {
  NamedParams<T> params = {{prefix + ".conv1.weight", conv1_w},
                           {prefix + ".conv1.bias", conv1_b},
                           {prefix + ".conv2.weight", conv2_w},
                           {prefix + ".conv2.bias", conv2_b}};
  for (auto& named : attention.named_parameters(prefix + ".attention")) {
    params.push_back(std::move(named));
  }
  params.emplace_back(prefix + ".proj.weight", proj.weight);
  params.emplace_back(prefix + ".proj.bias", proj.bias);
  return params;
}

template struct AffineLayer<float>;
template struct AffineLayer<double>;
template struct MlpBackbone<float>;
template struct MlpBackbone<double>;
template struct SelfAttention<float>;
template struct SelfAttention<double>;
template struct ModulatedAttention<float>;
template struct ModulatedAttention<double>;
template struct CnnBackbone<float>;
template struct CnnBackbone<double>;

}  // namespace oltr
