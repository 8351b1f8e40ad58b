#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oltr/explore.hpp"
#include "oltr/train.hpp"

using namespace oltr;

namespace {

MemoryBank<double> bank_from(const std::vector<std::vector<double>>& centroids) {
  MemoryBank<double> bank(static_cast<int>(centroids.size()),
                          static_cast<int>(centroids.front().size()));
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    std::copy(centroids[i].begin(), centroids[i].end(), bank.centroid_data(static_cast<int>(i)));
  }
  return bank;
}

Dataset loop_dataset(std::uint64_t seed) {
  GaussianMixtureConfig cfg;
  cfg.seed = seed;
  cfg.dim = 6;
  cfg.known_classes = 5;
  cfg.open_classes = 5;
  cfg.profile.n_max = 20;
  cfg.profile.ratio_or_power = 5.0;
  cfg.profile.n_min = 3;
  cfg.test_per_class = 6;
  cfg.open_test_per_class = 6;
  cfg.mean_radius = 6.0;
  cfg.noise_sigma = 0.5;
  return generate_gaussian_mixture(cfg);
}

DynamicLoopState<double> trained_loop_state(const Dataset& ds) {
  ModelSettings ms;
  ms.input_dim = 6;
  ms.hidden_dim = 16;
  ms.feature_dim = 8;
  TrainConfig tc;
  tc.epochs = 4;
  tc.classes_per_batch = 3;
  tc.samples_per_class = 3;
  tc.learning_rate = 0.05;
  tc.seed = 11;
  ObjectiveConfig obj;
  auto state = train<double>(ds, ms, tc, obj);
  return DynamicLoopState<double>::from_model(std::move(state.model));
}

}  // namespace

TEST_CASE("uncertainty examples from sorted centroid distances") {
  // Distances [2, 2, 5]: tie between the two nearest.
  auto tie_bank = bank_from({{2, 0}, {-2, 0}, {5, 0}});
  std::vector<double> origin = {0.0, 0.0};
  auto rec = compute_uncertainties(origin, tie_bank, 1.0);
  CHECK(rec.u_open == doctest::Approx(2.0));
  CHECK(rec.u_info == doctest::Approx(1.0));

  // Distances [1, 4].
  auto two_bank = bank_from({{1, 0}, {-4, 0}});
  auto rec2 = compute_uncertainties(origin, two_bank, 1.0);
  CHECK(rec2.u_open == doctest::Approx(1.0));
  CHECK(rec2.u_info == doctest::Approx(0.25));
  CHECK(rec2.score == doctest::Approx(0.25));
}

TEST_CASE("literal energy value at K=10, score 2, T=1") {
  // Ten centroids, the nearest two both at distance 2 -> u_open=2, u_info=1.
  std::vector<std::vector<double>> cents = {{2, 0}, {-2, 0}};
  for (int i = 0; i < 8; ++i) cents.push_back({10.0 + i, 0.0});
  auto bank = bank_from(cents);
  std::vector<double> v = {0.0, 0.0};
  auto rec = compute_uncertainties(v, bank, 1.0);
  CHECK(rec.score == doctest::Approx(2.0));
  CHECK(rec.energy == doctest::Approx(-(2.0 + std::log(10.0))).epsilon(1e-9));
  CHECK(rec.energy == doctest::Approx(-4.302585093).epsilon(1e-6));
}

TEST_CASE("energy identity and the naive literal formula agree") {
  Rng rng(81);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(8));
    const int dim = 2 + static_cast<int>(rng.below(4));
    std::vector<std::vector<double>> cents(k, std::vector<double>(dim));
    for (auto& c : cents)
      for (auto& x : c) x = rng.uniform(-4.0, 4.0);
    auto bank = bank_from(cents);
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.uniform(-4.0, 4.0);
    const double temperature = rng.uniform(0.5, 3.0);
    auto rec = compute_uncertainties(v, bank, temperature);
    CHECK(rec.u_info > 0.0);
    CHECK(rec.u_info <= 1.0);
    // Algebraic identity with the literal sum (safe at these magnitudes).
    const double naive =
        -temperature * std::log(static_cast<double>(k) * std::exp(rec.score / temperature));
    CHECK(rec.energy == doctest::Approx(-(rec.score + temperature * std::log(double(k))))
                            .epsilon(1e-12));
    CHECK(rec.energy == doctest::Approx(naive).epsilon(1e-9));
  }
}

TEST_CASE("u_info is 1 exactly when the two nearest centroids are equidistant") {
  auto bank = bank_from({{3, 0}, {0, 3}, {9, 9}});
  std::vector<double> v = {0.0, 0.0};
  CHECK(compute_uncertainties(v, bank, 1.0).u_info == 1.0);
  std::vector<double> off = {0.5, 0.0};
  CHECK(compute_uncertainties(off, bank, 1.0).u_info < 1.0);
}

TEST_CASE("uncertainties require at least two centroids") {
  auto bank = bank_from({{1, 1}});
  std::vector<double> v = {0.0, 0.0};
  CHECK_THROWS_AS(compute_uncertainties(v, bank, 1.0), TensorError);
}

TEST_CASE("selection takes the top-score samples with index tie-break") {
  std::vector<UncertaintyRecord> pool(3);
  pool[0].score = 0.9;
  pool[1].score = 0.2;
  pool[2].score = 0.5;
  auto picked = select_for_annotation(pool, 2.0 / 3.0);
  REQUIRE(picked.size() == 2);
  CHECK(picked[0] == 0);
  CHECK(picked[1] == 2);

  CHECK(select_for_annotation(pool, 1.0).size() == 3);

  std::vector<UncertaintyRecord> tied(4);
  for (auto& r : tied) r.score = 1.0;
  auto first_two = select_for_annotation(tied, 0.5);
  CHECK(first_two == std::vector<int>{0, 1});
}

TEST_CASE("selection equals the full-sort oracle and ignores monotone rescaling") {
  Rng rng(82);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(40));
    std::vector<UncertaintyRecord> pool(n);
    for (auto& r : pool) r.score = std::floor(rng.uniform(0.0, 8.0)) / 4.0;
    const double budget = rng.uniform(0.05, 1.0);
    auto picked = select_for_annotation(pool, budget);

    // Oracle: full sort by (-score, index), take ceil(budget*n).
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (pool[a].score != pool[b].score) return pool[a].score > pool[b].score;
      return a < b;
    });
    order.resize(static_cast<std::size_t>(std::ceil(budget * n)));
    CHECK(picked == order);

    // Positive monotone transform of scores leaves the selection unchanged.
    std::vector<UncertaintyRecord> scaled = pool;
    for (auto& r : scaled) r.score = std::exp(2.0 * r.score) + 1.0;
    CHECK(select_for_annotation(scaled, budget) == picked);
  }
}

TEST_CASE("hallucinated weights from one and two samples") {
  Annotation<double> a;
  a.squashed_meta = {3.0, 4.0};
  a.score = 0.7;
  auto w = hallucinate_class_weights<double>({a}, 1.0);
  CHECK(w[0] == doctest::Approx(0.6));
  CHECK(w[1] == doctest::Approx(0.8));

  Annotation<double> b;
  b.squashed_meta = {1.0, 0.0};
  b.score = 0.7;  // equal scores -> equal softmax weights
  Annotation<double> c;
  c.squashed_meta = {0.0, 1.0};
  c.score = 0.7;
  auto mid = hallucinate_class_weights<double>({b, c}, 1.0);
  CHECK(mid[0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(mid[1] == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("hallucinated weights match the brute-force softmax mean") {
  Rng rng(83);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(5));
    const int dim = 2 + static_cast<int>(rng.below(4));
    const double temperature = rng.uniform(0.5, 2.0);
    std::vector<Annotation<double>> group(n);
    for (auto& a : group) {
      a.squashed_meta.resize(dim);
      for (auto& x : a.squashed_meta) x = rng.uniform(-1.0, 1.0);
      a.score = rng.uniform(0.0, 3.0);
    }
    auto got = hallucinate_class_weights(group, temperature);

    double denom = 0;
    std::vector<double> acc(dim, 0.0);
    for (const auto& a : group) denom += std::exp(a.score / temperature);
    for (const auto& a : group) {
      const double w = std::exp(a.score / temperature) / denom;
      for (int d = 0; d < dim; ++d) acc[d] += w * a.squashed_meta[d];
    }
    double norm = 0;
    for (double x : acc) norm += x * x;
    norm = std::sqrt(norm);
    for (int d = 0; d < dim; ++d) CHECK(got[d] == doctest::Approx(acc[d] / norm).epsilon(1e-9));
  }
}

TEST_CASE("model update appends classes without touching old weights") {
  Dataset ds = loop_dataset(101);
  auto state = trained_loop_state(ds);
  const int k0 = state.model.num_classes();
  auto old_weights = state.model.classifier.weight.values();

  Annotation<double> a;
  a.token = "class-7";
  a.v_direct = std::vector<double>{0.0, 2.0, 0, 0, 0, 0, 0, 0};
  a.squashed_meta = std::vector<double>{0.1, 0.2, 0, 0, 0, 0, 0, 0.5};
  a.score = 1.0;
  Annotation<double> b = a;
  b.v_direct = std::vector<double>{2.0, 0.0, 0, 0, 0, 0, 0, 0};

  FineTuneConfig ft;
  ft.epochs = 0;  // isolate the growth step
  update_model_with_annotations(state, {a, b}, 1.0, ft);

  CHECK(state.model.num_classes() == k0 + 1);
  CHECK(state.model.bank.num_classes() == k0 + 1);
  // New centroid is the mean of the annotated direct features.
  CHECK(state.model.bank.centroid_data(k0)[0] == doctest::Approx(1.0));
  CHECK(state.model.bank.centroid_data(k0)[1] == doctest::Approx(1.0));
  // Old rows bitwise intact.
  for (std::size_t i = 0; i < old_weights.size(); ++i) {
    CHECK(state.model.classifier.weight.values()[i] == old_weights[i]);
  }
  // Hallucinator grew with zero-filled new rows.
  CHECK(state.model.heads.hal.weight.shape()[0] == k0 + 1);
  CHECK(state.slot_of("class-7") == k0);
}

TEST_CASE("two update rounds grow the classifier additively") {
  Dataset ds = loop_dataset(102);
  auto state = trained_loop_state(ds);
  const int k0 = state.model.num_classes();
  FineTuneConfig ft;
  ft.epochs = 0;
  auto make = [&](const std::string& token) {
    Annotation<double> a;
    a.token = token;
    a.v_direct = std::vector<double>(8, 0.5);
    a.squashed_meta = std::vector<double>(8, 0.25);
    a.score = 0.5;
    return a;
  };
  update_model_with_annotations(state, {make("n1"), make("n2"), make("n3")}, 1.0, ft);
  update_model_with_annotations(state, {make("n4"), make("n5")}, 1.0, ft);
  CHECK(state.model.num_classes() == k0 + 5);
}

TEST_CASE("oracle answers consistently and counts queries") {
  SimulatedOracle oracle({7, 7, 9});
  CHECK(oracle.annotate(0) == "class-7");
  CHECK(oracle.annotate(1) == "class-7");
  CHECK(oracle.annotate(0) == "class-7");
  CHECK(oracle.annotate(2) == "class-9");
  CHECK(oracle.query_count() == 4);
}

TEST_CASE("zero budget leaves every stage metric unchanged") {
  Dataset ds = loop_dataset(103);
  auto state = trained_loop_state(ds);

  GaussianMixtureConfig base;
  base.seed = 103;
  base.dim = 6;
  base.known_classes = 5;
  base.open_classes = 5;
  base.mean_radius = 6.0;
  base.noise_sigma = 0.5;
  PoolConfig pc1;
  pc1.open_class_ids = {5, 6, 7};
  pc1.per_open_class = 10;
  pc1.seed = 301;
  PoolConfig pc2;
  pc2.open_class_ids = {8, 9};
  pc2.per_open_class = 10;
  pc2.seed = 302;
  auto pool1 = generate_gaussian_pool(base, pc1);
  auto pool2 = generate_gaussian_pool(base, pc2);

  std::vector<int> hidden = pool1.hidden_labels;
  hidden.insert(hidden.end(), pool2.hidden_labels.begin(), pool2.hidden_labels.end());
  SimulatedOracle oracle(hidden);

  FineTuneConfig ft;
  auto weights_before = state.model.classifier.weight.values();
  auto reports = run_dynamic_loop(state, {pool1, pool2}, oracle, 0.0, 1.0, ft, ds);
  REQUIRE(reports.size() == 3);
  CHECK(state.model.classifier.weight.values() == weights_before);
  CHECK(oracle.query_count() == 0);
  for (const auto& r : reports) {
    CHECK(r.known_acc == reports[0].known_acc);
    CHECK(r.unknown_acc == 0.0);  // nothing discovered, union never matches open truth
    CHECK(r.classifier_width == 5);
  }
}

TEST_CASE("dynamic loop grows the classifier per stage and discovers classes") {
  Dataset ds = loop_dataset(104);
  auto state = trained_loop_state(ds);

  GaussianMixtureConfig base;
  base.seed = 104;
  base.dim = 6;
  base.known_classes = 5;
  base.open_classes = 5;
  base.mean_radius = 6.0;
  base.noise_sigma = 0.5;
  PoolConfig pc1;
  pc1.open_class_ids = {5, 6, 7};
  pc1.per_open_class = 12;
  pc1.per_known_class = 1;
  pc1.seed = 311;
  PoolConfig pc2;
  pc2.open_class_ids = {8, 9};
  pc2.per_open_class = 12;
  pc2.per_known_class = 1;
  pc2.seed = 312;
  auto pool1 = generate_gaussian_pool(base, pc1);
  auto pool2 = generate_gaussian_pool(base, pc2);

  std::vector<int> hidden = pool1.hidden_labels;
  hidden.insert(hidden.end(), pool2.hidden_labels.begin(), pool2.hidden_labels.end());
  SimulatedOracle oracle(hidden);

  FineTuneConfig ft;
  auto reports = run_dynamic_loop(state, {pool1, pool2}, oracle, 1.0, 1.0, ft, ds);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].classifier_width == 5);
  CHECK(reports[1].classifier_width == 8);  // ... found all three stage-1 classes
  CHECK(reports[2].classifier_width == 10);
  CHECK(reports[2].unknown_acc > 0.0);
  CHECK(oracle.query_count() == pool1.size() + pool2.size());
}
