#include <doctest.h>

#include <cmath>
#include <vector>

#include "oltr/gradcheck.hpp"
#include "oltr/rng.hpp"
#include "oltr/tensor.hpp"
#include "test_util.hpp"

using namespace oltr;
using testutil::random_tensor;
using D = Tensor<double>;

TEST_CASE("tanh at origin has value 0 and derivative 1") {
  D x = D::scalar(0.0, true);
  D y = oltr::tanh(x);
  CHECK(y.item() == 0.0);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("matmul hand example") {
  D a = D::from_values({2, 2}, {1, 2, 3, 4});
  D b = D::from_values({2, 1}, {1, 1});
  D c = matmul(a, b);
  CHECK(c.shape() == std::vector<int>{2, 1});
  CHECK(c.values()[0] == 3.0);
  CHECK(c.values()[1] == 7.0);
}

TEST_CASE("matmul transpose flags match explicit transposition") {
  Rng rng(11);
  auto a = random_tensor<double>(rng, {3, 4}, false);
  auto b = random_tensor<double>(rng, {5, 4}, false);
  // a(3,4) x b(5,4)^T -> (3,5)
  D c = matmul(a, b, false, true);
  std::vector<double> bt(4 * 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) bt[j * 5 + i] = b.values()[i * 4 + j];
  D c2 = matmul(a, D::from_values({4, 5}, bt));
  for (int i = 0; i < 15; ++i) CHECK(c.values()[i] == doctest::Approx(c2.values()[i]).epsilon(1e-14));
}

TEST_CASE("matmul rank-1 orientation") {
  D w = D::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  D x = D::from_values({3}, {1, 1, 1});
  D y = matmul(w, x);
  CHECK(y.shape() == std::vector<int>{2});
  CHECK(y.values()[0] == 6.0);
  CHECK(y.values()[1] == 15.0);
  D o = D::from_values({2}, {1, 1});
  D z = matmul(o, w);
  CHECK(z.shape() == std::vector<int>{3});
  CHECK(z.values()[0] == 5.0);
  CHECK(z.values()[2] == 9.0);
}

TEST_CASE("softmax of zeros is uniform and rows sum to one") {
  D x = D::from_values({2}, {0, 0});
  D y = softmax(x, 0);
  CHECK(y.values()[0] == doctest::Approx(0.5));
  CHECK(y.values()[1] == doctest::Approx(0.5));

  Rng rng(3);
  auto m = random_tensor<double>(rng, {4, 6}, false, -30.0, 30.0);
  D s = softmax(m, 1);
  for (int r = 0; r < 4; ++r) {
    double total = 0;
    for (int c = 0; c < 6; ++c) total += s.values()[r * 6 + c];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("backward of sum(matmul(A, ones)) is all-ones") {
  D a = D::from_values({2, 2}, {1, 2, 3, 4}, true);
  D ones = D::from_values({2, 1}, {1, 1});
  D loss = sum(matmul(a, ones));
  backward(loss);
  for (double g : a.grad()) CHECK(g == 1.0);
}

TEST_CASE("parameter off the loss path keeps zero gradient") {
  D p = D::from_values({3}, {1, 2, 3}, true);
  D x = D::from_values({3}, {1, 1, 1}, true);
  D loss = sum(x);
  backward(loss);
  for (double g : p.grad()) CHECK(g == 0.0);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("relu subgradient convention: zero at non-positive inputs") {
  D x = D::from_values({2}, {-1, 2}, true);
  D loss = sum(relu(x));
  backward(loss);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);

  D z = D::scalar(0.0, true);
  D l2 = sum(relu(z));
  backward(l2);
  CHECK(z.grad()[0] == 0.0);
}

TEST_CASE("gradients accumulate additively for shared inputs") {
  D x = D::from_values({2}, {2, 3}, true);
  D loss = sum(add(x, x));
  backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("tape is topologically ordered and visits each op once") {
  D x = D::from_values({2}, {1, 2}, true);
  D h = relu(x);
  D y = add(h, h);  // shared intermediate
  D loss = sum(y);
  auto tape = Tape<double>::linearize(loss);
  CHECK(tape.size() == 3);  // relu, add, sum — each exactly once
  // Inputs precede users.
  std::vector<const void*> seen;
  for (const auto& t : tape.order()) {
    for (const auto& parent : t.node()->parents) {
      if (parent.node()) {
        bool found = false;
        for (const void* id : seen) found = found || id == parent.storage_id();
        CHECK(found);
      }
    }
    seen.push_back(t.storage_id());
  }
  CHECK(seen.back() == loss.storage_id());
}

TEST_CASE("backward requires a scalar loss") {
  D x = D::from_values({2}, {1, 2}, true);
  D y = relu(x);
  CHECK_THROWS_AS(backward(y), TensorError);
}

TEST_CASE("shape mismatch errors name the op and shapes") {
  D a = D::from_values({2, 3}, std::vector<double>(6, 1.0));
  D b = D::from_values({2, 2}, std::vector<double>(4, 1.0));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), TensorError);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(2,3)"), TensorError);
}

TEST_CASE("non-finite output raises an error naming the op") {
  D x = D::scalar(1e308);
  CHECK_THROWS_WITH_AS(elemwise_mul(oltr::exp(x), D::scalar(1.0)), doctest::Contains("exp"),
                       TensorError);
}

TEST_CASE("log floors its input at the smallest positive normal") {
  D x = D::from_values({2}, {0.0, 1.0});
  D y = oltr::log(x);
  CHECK(y.values()[0] == std::log(std::numeric_limits<double>::min()));
  CHECK(y.values()[1] == 0.0);
}

TEST_CASE("add and mul broadcast a single-element operand") {
  D a = D::from_values({2, 2}, {1, 2, 3, 4}, true);
  D s = D::scalar(10.0, true);
  D y = add(a, s);
  CHECK(y.values()[3] == 14.0);
  D loss = sum(y);
  backward(loss);
  CHECK(s.grad()[0] == 4.0);

  D m = elemwise_mul(s, a);
  CHECK(m.values()[2] == 30.0);
}

TEST_CASE("elemwise_mul broadcasts a single channel across channels") {
  D a = D::from_values({2, 1, 2}, {1, 2, 3, 4}, true);
  D map = D::from_values({1, 1, 2}, {10, 100}, true);
  D y = elemwise_mul(a, map);
  CHECK(y.values() == std::vector<double>{10, 200, 30, 400});
  backward(sum(y));
  CHECK(map.grad()[0] == 4.0);   // 1 + 3
  CHECK(map.grad()[1] == 6.0);   // 2 + 4
  CHECK(a.grad()[0] == 10.0);
  CHECK(a.grad()[3] == 100.0);
}

TEST_CASE("concat splits gradients back to parts") {
  D a = D::from_values({2}, {1, 2}, true);
  D b = D::from_values({3}, {3, 4, 5}, true);
  D y = concat<double>({a, b}, 0);
  CHECK(y.shape() == std::vector<int>{5});
  backward(scalar_mul(sum(y), 2.0));
  CHECK(a.grad()[0] == 2.0);
  CHECK(b.grad()[2] == 2.0);
}

TEST_CASE("global_avg_pool averages each channel") {
  D x = D::from_values({2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40}, true);
  D y = global_avg_pool(x);
  CHECK(y.values()[0] == doctest::Approx(2.5));
  CHECK(y.values()[1] == doctest::Approx(25.0));
  backward(sum(y));
  CHECK(x.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("conv2d_3x3 identity kernel reproduces the input interior") {
  // Kernel with 1 at center copies the input exactly (padding irrelevant).
  D x = D::from_values({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}, true);
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;  // center tap
  D weight = D::from_values({1, 1, 3, 3}, w);
  D y = conv2d_3x3<double>(x, weight);
  for (int i = 0; i < 9; ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("grad_check on x^2 at x=3") {
  D x = D::scalar(3.0, true);
  auto fn = [&]() { return elemwise_mul(x, x); };
  auto res = grad_check<double>(fn, {x});
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(res.max_rel_err < 1e-8);
}

TEST_CASE("grad_check of relu away from the kink") {
  Rng rng(17);
  const double h = 1e-5;
  for (int trial = 0; trial < 30; ++trial) {
    auto x = random_tensor<double>(rng, {6}, true, -2.0, 2.0);
    for (auto& v : x.values()) {
      if (std::abs(v) <= 10 * h) v = v < 0 ? v - 10 * h : v + 10 * h;
    }
    auto fn = [&]() { return sum(relu(x)); };
    auto res = grad_check<double>(fn, {x}, h);
    CHECK(res.max_rel_err <= 1e-6);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    auto x = random_tensor<double>(rng, {4}, true);
    const double a = rng.uniform(-2.0, 2.0);
    const double b = rng.uniform(-2.0, 2.0);
    auto run = [&](bool combined) {
      x.zero_grad();
      D l1 = sum(elemwise_mul(x, x));
      D l2 = sum(oltr::tanh(x));
      if (combined) {
        backward(add(scalar_mul(l1, a), scalar_mul(l2, b)));
        return x.grad();
      }
      backward(l1);
      auto g1 = x.grad();
      x.zero_grad();
      backward(l2);
      auto g2 = x.grad();
      for (std::size_t i = 0; i < g1.size(); ++i) g1[i] = a * g1[i] + b * g2[i];
      return g1;
    };
    auto combined = run(true);
    auto separate = run(false);
    for (std::size_t i = 0; i < combined.size(); ++i) {
      CHECK(combined[i] == doctest::Approx(separate[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("identical seeds produce bit-identical outputs and gradients") {
  auto run = [] {
    Rng rng(99);
    auto x = random_tensor<double>(rng, {3, 3}, true);
    auto w = random_tensor<double>(rng, {3, 3}, true);
    D loss = sum(oltr::tanh(matmul(x, w)));
    backward(loss);
    std::vector<double> out = {loss.item()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("no recording under NoGradGuard") {
  D x = D::from_values({2}, {1, 2}, true);
  NoGradGuard guard;
  D y = relu(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node() == nullptr);
}

TEST_CASE("randomized grad_check across primitives") {
  Rng rng(2026);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 2 + static_cast<int>(rng.below(3));
    const int k = 2 + static_cast<int>(rng.below(3));
    const int n = 2 + static_cast<int>(rng.below(3));
    auto a = random_tensor<double>(rng, {m, k}, true);
    auto b = random_tensor<double>(rng, {k, n}, true);
    auto fn = [&]() {
      D h = oltr::tanh(matmul(a, b));
      D s = softmax(reshape(h, {m * n}), 0);
      return add(sum(elemwise_mul(s, s)), l2_norm(h));
    };
    auto res = grad_check<double>(fn, {a, b});
    CHECK(res.max_rel_err <= 1e-4);
  }
}
