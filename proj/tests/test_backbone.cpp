#include <doctest.h>

#include <cmath>

#include "oltr/backbone.hpp"
#include "oltr/gradcheck.hpp"
#include "test_util.hpp"

using namespace oltr;
using testutil::random_tensor;
using D = Tensor<double>;

TEST_CASE("mlp with zero parameters maps everything to zero") {
  MlpBackbone<double> net;
  net.fc1 = AffineLayer<double>::zero(4, 8);
  net.fc2 = AffineLayer<double>::zero(8, 8);
  net.out = AffineLayer<double>::zero(8, 3);
  Rng rng(1);
  auto x = random_tensor<double>(rng, {4}, false);
  D f = net.forward(x);
  CHECK(f.shape() == std::vector<int>{3});
  for (double v : f.values()) CHECK(v == 0.0);
}

TEST_CASE("mlp output dimension follows the configuration") {
  Rng rng(2);
  auto net = MlpBackbone<double>::init(10, 16, 5, rng);
  auto x = random_tensor<double>(rng, {10}, false);
  CHECK(net.forward(x).shape() == std::vector<int>{5});
  CHECK(net.named_parameters("backbone").size() == 6);
}

TEST_CASE("mlp gradient passes the finite-difference check") {
  Rng rng(3);
  auto net = MlpBackbone<double>::init(5, 7, 4, rng);
  auto x = random_tensor<double>(rng, {5}, false);
  std::vector<D> params;
  for (auto& [name, p] : net.named_parameters("backbone")) params.push_back(p);
  auto fn = [&]() { return sum(oltr::tanh(net.forward(x))); };
  auto res = grad_check<double>(fn, params);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("self-attention with zero value projection is identically zero") {
  Rng rng(4);
  auto sa = SelfAttention<double>::init(4, rng);
  sa.g_w = Tensor<double>::zeros({2, 4}, true);
  auto f = random_tensor<double>(rng, {4, 3, 3}, false);
  D out = sa.forward(f);
  CHECK(out.shape() == f.shape());
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("attention rows are softmax-normalized") {
  Rng rng(5);
  auto sa = SelfAttention<double>::init(4, rng);
  auto f = random_tensor<double>(rng, {4, 3, 2}, false);
  // Rebuild the affinity matrix the same way the block does.
  D fm = reshape(f, {4, 6});
  D attn = softmax(matmul(matmul(sa.theta_w, fm), matmul(sa.phi_w, fm), true, false), 1);
  for (int r = 0; r < 6; ++r) {
    double row = 0;
    for (int c = 0; c < 6; ++c) {
      CHECK(attn.values()[r * 6 + c] >= 0.0);
      row += attn.values()[r * 6 + c];
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("constant feature map gives position-independent attention output") {
  Rng rng(6);
  auto sa = SelfAttention<double>::init(4, rng);
  D f = D::full({4, 3, 3}, 0.7);
  D out = sa.forward(f);
  for (int c = 0; c < 4; ++c) {
    const double first = out.values()[c * 9];
    for (int p = 1; p < 9; ++p) CHECK(out.values()[c * 9 + p] == doctest::Approx(first).epsilon(1e-12));
  }
}

TEST_CASE("zero-init modulation map reduces to f + SA(f) exactly") {
  Rng rng(7);
  auto ma = ModulatedAttention<double>::init(6, rng);  // ma_w, ma_b zero-init
  auto f = random_tensor<double>(rng, {6, 4, 4}, false);
  D expected = add(f, ma.sa.forward(f));
  D actual = ma.forward(f);
  for (std::size_t i = 0; i < expected.values().size(); ++i) {
    CHECK(actual.values()[i] == expected.values()[i]);
  }
}

TEST_CASE("zero self-attention leaves the map untouched through the skip") {
  Rng rng(8);
  auto ma = ModulatedAttention<double>::init(4, rng);
  ma.sa.g_w = Tensor<double>::zeros({2, 4}, true);
  auto f = random_tensor<double>(rng, {4, 5, 3}, false);
  D out = ma.forward(f);
  for (std::size_t i = 0; i < f.values().size(); ++i) CHECK(out.values()[i] == f.values()[i]);
}

TEST_CASE("modulated attention preserves shape for arbitrary maps") {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const int c = 2 * (1 + static_cast<int>(rng.below(3)));
    const int h = 2 + static_cast<int>(rng.below(4));
    const int w = 2 + static_cast<int>(rng.below(4));
    auto ma = ModulatedAttention<double>::init(c, rng);
    auto f = random_tensor<double>(rng, {c, h, w}, false);
    CHECK(ma.forward(f).shape() == std::vector<int>{c, h, w});
  }
}

TEST_CASE("cnn backbone shapes and determinism") {
  Rng rng(10);
  auto net = CnnBackbone<double>::init(1, 8, 16, rng);
  auto img = random_tensor<double>(rng, {1, 16, 16}, false, 0.0, 1.0);
  D f1 = net.forward(img);
  D f2 = net.forward(img);
  CHECK(f1.shape() == std::vector<int>{16});
  CHECK(f1.values() == f2.values());
}

TEST_CASE("cnn pipeline gradient passes the finite-difference check on a 2-image batch") {
  Rng rng(11);
  auto net = CnnBackbone<double>::init(1, 4, 3, rng);
  auto img1 = random_tensor<double>(rng, {1, 6, 6}, false, 0.0, 1.0);
  auto img2 = random_tensor<double>(rng, {1, 6, 6}, false, 0.0, 1.0);
  std::vector<D> params;
  for (auto& [name, p] : net.named_parameters("backbone")) params.push_back(p);
  auto fn = [&]() {
    return add(sum(oltr::tanh(net.forward(img1))), sum(oltr::tanh(net.forward(img2))));
  };
  auto res = grad_check<double>(fn, params);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("float backbone produces finite outputs") {
  Rng rng(12);
  auto net = CnnBackbone<float>::init(1, 4, 8, rng);
  auto img = random_tensor<float>(rng, {1, 8, 8}, false, 0.0, 1.0);
  Tensor<float> feat = net.forward(img);
  for (float v : feat.values()) CHECK(std::isfinite(v));
}

TEST_CASE("self-attention rejects odd channel counts") {
  Rng rng(13);
  CHECK_THROWS_AS(SelfAttention<double>::init(5, rng), TensorError);
}
