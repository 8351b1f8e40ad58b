#include <doctest.h>

#include <cmath>

#include "oltr/gradcheck.hpp"
#include "oltr/memory.hpp"
#include "test_util.hpp"

using namespace oltr;
using testutil::random_tensor;
using D = Tensor<double>;

namespace {

// Scalar transcription of the centroid update rule, kept deliberately naive
// and independent of the library path.
std::vector<std::vector<double>> oracle_centroid_update(
    std::vector<std::vector<double>> centroids, const std::vector<std::vector<double>>& batch,
    const std::vector<int>& labels, double rate) {
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    std::vector<double> delta(centroids[i].size(), 0.0);
    int count = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (labels[b] == static_cast<int>(i)) {
        for (std::size_t d = 0; d < delta.size(); ++d) delta[d] += centroids[i][d] - batch[b][d];
        ++count;
      }
    }
    for (std::size_t d = 0; d < delta.size(); ++d) {
      centroids[i][d] -= rate * delta[d] / (1.0 + count);
    }
  }
  return centroids;
}

MemoryBank<double> bank_from(const std::vector<std::vector<double>>& centroids) {
  MemoryBank<double> bank(static_cast<int>(centroids.size()),
                          static_cast<int>(centroids.front().size()));
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    std::copy(centroids[i].begin(), centroids[i].end(), bank.centroid_data(static_cast<int>(i)));
  }
  return bank;
}

}  // namespace

TEST_CASE("init_centroids computes per-class means") {
  MemoryBank<double> bank = init_centroids<double>({{0, 0}, {2, 2}, {5, 7}}, {0, 0, 1}, 2);
  CHECK(bank.centroid_data(0)[0] == 1.0);
  CHECK(bank.centroid_data(0)[1] == 1.0);
  CHECK(bank.centroid_data(1)[0] == 5.0);  // single-sample class
  CHECK(bank.num_classes() == 2);
}

TEST_CASE("init_centroids reports every missing class") {
  CHECK_THROWS_WITH_AS(init_centroids<double>({{1, 1}}, {0}, 3), doctest::Contains("1, 2"),
                       TensorError);
}

TEST_CASE("centroid update hand example") {
  auto bank = bank_from({{1, 0}});
  update_centroids<double>(bank, {{0, 0}, {2, 2}}, {0, 0}, 0.5);
  CHECK(bank.centroid_data(0)[0] == doctest::Approx(1.0));
  CHECK(bank.centroid_data(0)[1] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("centroid update leaves absent classes and exact matches alone") {
  auto bank = bank_from({{1, 2}, {3, 4}});
  update_centroids<double>(bank, {{1, 2}}, {0}, 0.7);  // x equals c_0
  CHECK(bank.centroid_data(0)[0] == 1.0);
  CHECK(bank.centroid_data(0)[1] == 2.0);
  CHECK(bank.centroid_data(1)[0] == 3.0);  // class 1 absent from batch
}

TEST_CASE("centroid update matches the scalar oracle on random batches") {
  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(5));
    const int dim = 1 + static_cast<int>(rng.below(4));
    const int batch = 1 + static_cast<int>(rng.below(8));
    std::vector<std::vector<double>> centroids(k, std::vector<double>(dim));
    for (auto& c : centroids)
      for (auto& v : c) v = rng.uniform(-3.0, 3.0);
    std::vector<std::vector<double>> feats(batch, std::vector<double>(dim));
    std::vector<int> labels(batch);
    for (int b = 0; b < batch; ++b) {
      for (auto& v : feats[b]) v = rng.uniform(-3.0, 3.0);
      labels[b] = static_cast<int>(rng.below(k));
    }
    const double rate = rng.uniform(0.0, 1.0);
    auto bank = bank_from(centroids);
    update_centroids<double>(bank, feats, labels, rate);
    auto expected = oracle_centroid_update(centroids, feats, labels, rate);
    for (int i = 0; i < k; ++i) {
      for (int d = 0; d < dim; ++d) {
        CHECK(bank.centroid_data(i)[d] == doctest::Approx(expected[i][d]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("reachability hand examples") {
  auto bank = bank_from({{0, 0}, {4, 0}});
  CHECK(reachability(D::from_values({2}, {1, 0}), bank).item() == doctest::Approx(1.0));
  CHECK(reachability(D::from_values({2}, {4, 0}), bank).item() == 0.0);
  CHECK(reachability(D::from_values({2}, {4, 3}), bank).item() == doctest::Approx(3.0));
}

TEST_CASE("reachability equals the brute-force minimum on random instances") {
  Rng rng(43);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(8));
    const int dim = 1 + static_cast<int>(rng.below(6));
    std::vector<std::vector<double>> centroids(k, std::vector<double>(dim));
    for (auto& c : centroids)
      for (auto& v : c) v = rng.uniform(-5.0, 5.0);
    auto bank = bank_from(centroids);
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.uniform(-5.0, 5.0);
    double best = 1e300;
    for (const auto& c : centroids) {
      double acc = 0;
      for (int d = 0; d < dim; ++d) acc += (v[d] - c[d]) * (v[d] - c[d]);
      best = std::min(best, std::sqrt(acc));
    }
    const double got = reachability(D::from_values({dim}, v), bank).item();
    CHECK(std::abs(got - best) <= 1e-9);
  }
}

TEST_CASE("reachability gradient follows the nearest centroid") {
  auto bank = bank_from({{0.0, 0.0}, {10.0, 0.0}});
  D v = D::from_values({2}, {3.0, 4.0}, true);
  auto fn = [&]() { return reachability(v, bank); };
  auto res = grad_check<double>(fn, {v});
  CHECK(res.max_rel_err <= 1e-6);
  v.zero_grad();
  backward(reachability(v, bank));
  CHECK(v.grad()[0] == doctest::Approx(3.0 / 5.0));
  CHECK(v.grad()[1] == doctest::Approx(4.0 / 5.0));
}

TEST_CASE("zero-weight hallucinator leaves only the calibrated direct feature") {
  Rng rng(44);
  auto bank = bank_from({{1, 0, 0}, {0, 2, 0}});
  auto heads = MetaEmbeddingHeads<double>::init(3, 2, rng);  // hal zero by construction
  D v = D::from_values({3}, {0.5, 0.5, 1.0});
  auto emb = compose_meta_embedding(v, bank, heads, 1e-12);
  for (double o : emb.coeffs.values()) CHECK(o == 0.0);
  for (double m : emb.v_memory.values()) CHECK(m == 0.0);
  const double gamma = emb.gamma.item();
  for (int d = 0; d < 3; ++d) {
    CHECK(emb.v_meta.values()[d] == doctest::Approx(v.values()[d] / gamma).epsilon(1e-12));
  }
}

TEST_CASE("memory feature is the coefficient-weighted centroid combination") {
  Rng rng(45);
  auto bank = bank_from({{1, 0}, {0, 1}});
  auto heads = MetaEmbeddingHeads<double>::init(2, 2, rng);
  heads.hal.bias.values() = {0.3, 0.7};  // weights stay zero: o == bias
  D v = D::from_values({2}, {0.2, -0.4});
  auto emb = compose_meta_embedding(v, bank, heads, 1e-12);
  CHECK(emb.v_memory.values()[0] == doctest::Approx(0.3));
  CHECK(emb.v_memory.values()[1] == doctest::Approx(0.7));
}

TEST_CASE("meta embedding follows the composition formula") {
  Rng rng(46);
  auto bank = bank_from({{0, 0}, {0, 2}});
  auto heads = MetaEmbeddingHeads<double>::init(2, 2, rng);
  heads.hal.bias.values() = {0.5, 0.25};
  D v = D::from_values({2}, {2.0, 0.0});
  auto emb = compose_meta_embedding(v, bank, heads, 1e-12);
  const double gamma = emb.gamma.item();
  CHECK(gamma == doctest::Approx(2.0));  // min(2, sqrt(8)) = 2
  for (int d = 0; d < 2; ++d) {
    const double expected =
        (v.values()[d] + emb.selector.values()[d] * emb.v_memory.values()[d]) / gamma;
    CHECK(emb.v_meta.values()[d] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("selector coordinates lie strictly inside (-1, 1)") {
  Rng rng(47);
  auto bank = bank_from({{0, 0, 0, 0}, {1, 1, 1, 1}});
  auto heads = MetaEmbeddingHeads<double>::init(4, 2, rng);
  for (int trial = 0; trial < 300; ++trial) {
    auto v = random_tensor<double>(rng, {4}, false, -50.0, 50.0);
    auto emb = compose_meta_embedding(v, bank, heads, 1e-12);
    for (double e : emb.selector.values()) {
      CHECK(e > -1.0);
      CHECK(e < 1.0);
    }
  }
}

TEST_CASE("doubling the reachability halves the meta embedding") {
  Rng rng(48);
  auto heads = MetaEmbeddingHeads<double>::init(2, 1, rng);  // hal zero -> memory off
  D v = D::from_values({2}, {1.0, 2.0});
  auto near_bank = bank_from({{1.0, 5.0}});   // gamma = 3
  auto far_bank = bank_from({{1.0, 8.0}});    // gamma = 6
  auto emb_near = compose_meta_embedding(v, near_bank, heads, 1e-12);
  auto emb_far = compose_meta_embedding(v, far_bank, heads, 1e-12);
  CHECK(emb_far.gamma.item() == doctest::Approx(2.0 * emb_near.gamma.item()));
  for (int d = 0; d < 2; ++d) {
    CHECK(emb_far.v_meta.values()[d] ==
          doctest::Approx(0.5 * emb_near.v_meta.values()[d]).epsilon(1e-12));
  }
}

TEST_CASE("far samples are damped toward zero") {
  Rng rng(49);
  auto heads = MetaEmbeddingHeads<double>::init(2, 1, rng);
  for (double gamma : {1e3, 1e6}) {
    auto bank = bank_from({{0.0, gamma}});
    D v = D::from_values({2}, {1.0, 0.0});
    auto emb = compose_meta_embedding(v, bank, heads, 1e-12);
    double norm = 0;
    for (double x : emb.v_meta.values()) norm += x * x;
    norm = std::sqrt(norm);
    CHECK(norm <= 2.0 / gamma * std::sqrt(2.0));
  }
}

TEST_CASE("feature coinciding with a centroid hits the epsilon guard, not infinity") {
  Rng rng(50);
  auto heads = MetaEmbeddingHeads<double>::init(2, 1, rng);
  auto bank = bank_from({{1.0, 1.0}});
  D v = D::from_values({2}, {1.0, 1.0}, true);
  auto emb = compose_meta_embedding(v, bank, heads, 1e-12);
  CHECK(emb.gamma.item() == 0.0);
  for (double x : emb.v_meta.values()) CHECK(std::isfinite(x));
}

TEST_CASE("no gradient path into the centroids") {
  Rng rng(51);
  auto bank = bank_from({{0.5, -0.5}, {1.5, 0.5}});
  auto heads = MetaEmbeddingHeads<double>::init(2, 2, rng);
  heads.hal.bias.values() = {0.4, 0.6};
  D v = D::from_values({2}, {0.9, 0.1}, true);
  auto before = bank.raw();
  auto emb = compose_meta_embedding(v, bank, heads, 1e-12);
  backward(sum(emb.v_meta));
  CHECK(bank.raw() == before);
  // …while v_direct and the heads do receive gradient.
  double vnorm = 0;
  for (double g : v.grad()) vnorm += std::abs(g);
  CHECK(vnorm > 0.0);
  double hnorm = 0;
  for (double g : heads.hal.bias.grad()) hnorm += std::abs(g);
  CHECK(hnorm > 0.0);
}

TEST_CASE("meta embedding pipeline gradient check") {
  Rng rng(52);
  auto bank = bank_from({{1.0, 0.0, 0.5}, {-0.5, 1.0, 0.0}});
  auto heads = MetaEmbeddingHeads<double>::init(3, 2, rng);
  // Nudge hal off zero so its gradient has both paths active.
  for (auto& w : heads.hal.weight.values()) w = rng.uniform(-0.3, 0.3);
  D v = D::from_values({3}, {0.7, -0.2, 0.4}, true);
  std::vector<D> params = {v, heads.hal.weight, heads.hal.bias, heads.sel.weight, heads.sel.bias};
  auto fn = [&]() {
    auto emb = compose_meta_embedding(v, bank, heads, 1e-12);
    return sum(oltr::tanh(emb.v_meta));
  };
  auto res = grad_check<double>(fn, params);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("hallucinator growth keeps old rows and zero-fills new ones") {
  Rng rng(53);
  auto heads = MetaEmbeddingHeads<double>::init(3, 2, rng);
  for (auto& w : heads.hal.weight.values()) w = 1.5;
  heads.grow_hal(2);
  CHECK(heads.hal.weight.shape() == std::vector<int>{4, 3});
  for (int i = 0; i < 6; ++i) CHECK(heads.hal.weight.values()[i] == 1.5);
  for (int i = 6; i < 12; ++i) CHECK(heads.hal.weight.values()[i] == 0.0);
  CHECK(heads.hal.bias.shape() == std::vector<int>{4});
}
