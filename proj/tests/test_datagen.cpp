#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oltr/datagen.hpp"

using namespace oltr;

namespace {

LongTailProfile exp_profile(int classes, int n_max, double ratio, int n_min = 1) {
  LongTailProfile p;
  p.kind = LongTailProfile::Kind::Exp;
  p.num_classes = classes;
  p.n_max = n_max;
  p.ratio_or_power = ratio;
  p.n_min = n_min;
  return p;
}

}  // namespace

TEST_CASE("exp profile endpoints and interior value") {
  auto sizes = make_profile(exp_profile(10, 100, 100.0));
  CHECK(sizes.front() == 100);
  CHECK(sizes.back() == 1);
  // Independent scalar check of n_2 = round(100 * 100^(-1/9)).
  const double expected = std::llround(100.0 * std::pow(100.0, -1.0 / 9.0));
  CHECK(sizes[1] == static_cast<int>(expected));
  CHECK(sizes[1] == 60);
}

TEST_CASE("pareto profile clamps at n_min") {
  LongTailProfile p;
  p.kind = LongTailProfile::Kind::Pareto;
  p.num_classes = 30;
  p.n_max = 100;
  p.ratio_or_power = 1.0;
  p.n_min = 5;
  auto sizes = make_profile(p);
  CHECK(sizes[24] == 5);  // round(100/25) = 4 -> clamped to 5
  CHECK(sizes[0] == 100);
}

TEST_CASE("profiles are monotone non-increasing within bounds") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    LongTailProfile p;
    p.kind = trial % 2 == 0 ? LongTailProfile::Kind::Exp : LongTailProfile::Kind::Pareto;
    p.num_classes = 2 + static_cast<int>(rng.below(40));
    p.n_min = 1 + static_cast<int>(rng.below(10));
    p.n_max = p.n_min + static_cast<int>(rng.below(1000));
    p.ratio_or_power =
        p.kind == LongTailProfile::Kind::Exp ? rng.uniform(1.0, 500.0) : rng.uniform(0.0, 4.0);
    auto sizes = make_profile(p);
    REQUIRE(sizes.size() == static_cast<std::size_t>(p.num_classes));
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      CHECK(sizes[i] >= p.n_min);
      CHECK(sizes[i] <= p.n_max);
      if (i > 0) CHECK(sizes[i] <= sizes[i - 1]);
    }
  }
}

TEST_CASE("profile rejects invalid bounds") {
  CHECK_THROWS_AS(make_profile(exp_profile(1, 100, 10.0)), std::invalid_argument);
  CHECK_THROWS_AS(make_profile(exp_profile(10, 5, 10.0, 9)), std::invalid_argument);
}

TEST_CASE("gaussian mixture bookkeeping") {
  GaussianMixtureConfig cfg;
  cfg.seed = 42;
  cfg.dim = 4;
  cfg.known_classes = 2;
  cfg.open_classes = 1;
  cfg.profile = exp_profile(2, 10, 10.0, 3);  // sizes [10, 3]
  cfg.test_per_class = 5;
  cfg.open_test_per_class = 7;
  Dataset ds = generate_gaussian_mixture(cfg);
  CHECK(ds.train_size() == 13);
  int label0 = 0;
  for (int l : ds.train_labels) label0 += l == 0 ? 1 : 0;
  CHECK(label0 == 10);
  CHECK(ds.test_size() == 2 * 5 + 7);
  CHECK(ds.num_known == 2);
  CHECK(ds.num_open == 1);
  for (int l : ds.test_labels) CHECK(l < 3);
}

TEST_CASE("gaussian mixture is bit-deterministic in the seed") {
  GaussianMixtureConfig cfg;
  cfg.seed = 9;
  cfg.known_classes = 3;
  cfg.open_classes = 2;
  cfg.profile = exp_profile(3, 20, 5.0);
  Dataset a = generate_gaussian_mixture(cfg);
  Dataset b = generate_gaussian_mixture(cfg);
  CHECK(a.train_features == b.train_features);
  CHECK(a.test_features == b.test_features);
  CHECK(a.train_labels == b.train_labels);
}

TEST_CASE("zero noise collapses samples onto class means") {
  GaussianMixtureConfig cfg;
  cfg.seed = 3;
  cfg.dim = 5;
  cfg.known_classes = 2;
  cfg.open_classes = 1;
  cfg.noise_sigma = 0.0;
  cfg.profile = exp_profile(2, 4, 2.0);
  Dataset ds = generate_gaussian_mixture(cfg);
  // All samples of one class identical.
  const float* first = ds.train_sample(0);
  int count0 = ds.train_counts[0];
  for (int i = 1; i < count0; ++i) {
    for (int d = 0; d < 5; ++d) CHECK(ds.train_sample(i)[d] == first[d]);
  }
  // Mean radius respected exactly.
  double norm = 0;
  for (int d = 0; d < 5; ++d) norm += static_cast<double>(first[d]) * first[d];
  CHECK(std::sqrt(norm) == doctest::Approx(cfg.mean_radius).epsilon(1e-5));
}

TEST_CASE("blob images have the declared shape and range") {
  BlobImageConfig cfg;
  cfg.seed = 7;
  cfg.side = 16;
  cfg.known_classes = 3;
  cfg.open_classes = 1;
  cfg.profile = exp_profile(3, 8, 2.0, 5);
  Dataset ds = generate_blob_images(cfg);
  CHECK(ds.feature_shape == std::vector<int>{1, 16, 16});
  CHECK(ds.feature_size() == 256);
  for (float v : ds.train_features) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  // Rarest class keeps at least n_min samples.
  CHECK(ds.train_counts.back() >= 5);
  // Two samples of one class have strongly correlated pixels (shared blob).
  const float* a = ds.train_sample(0);
  const float* b = ds.train_sample(1);
  double dot = 0, na = 0, nb = 0;
  for (int i = 0; i < 256; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  CHECK(dot / std::sqrt(na * nb) > 0.8);
}

TEST_CASE("shot split thresholds and boundary rules") {
  ShotSplit split = split_by_shot({150, 50, 10});
  CHECK(split.many == std::vector<int>{0});
  CHECK(split.medium == std::vector<int>{1});
  CHECK(split.few == std::vector<int>{2});
  // Counts of exactly 100 and exactly 20 land in medium.
  ShotSplit boundary = split_by_shot({100, 20, 101, 19});
  CHECK(boundary.medium == std::vector<int>{0, 1});
  CHECK(boundary.many == std::vector<int>{2});
  CHECK(boundary.few == std::vector<int>{3});
}

TEST_CASE("shot split is a partition of the known labels") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(50));
    std::vector<int> counts(k);
    for (auto& c : counts) c = 1 + static_cast<int>(rng.below(300));
    ShotSplit split = split_by_shot(counts);
    std::vector<int> seen(k, 0);
    for (int l : split.many) seen[l]++;
    for (int l : split.medium) seen[l]++;
    for (int l : split.few) seen[l]++;
    for (int s : seen) CHECK(s == 1);
  }
}

TEST_CASE("dataset round-trips through the JSON+blob files") {
  GaussianMixtureConfig cfg;
  cfg.seed = 12;
  cfg.known_classes = 3;
  cfg.open_classes = 2;
  cfg.profile = exp_profile(3, 15, 3.0);
  Dataset ds = generate_gaussian_mixture(cfg);

  auto dir = std::filesystem::temp_directory_path() / "oltr_datagen_test";
  std::filesystem::create_directories(dir);
  const std::string jp = (dir / "d.json").string();
  const std::string bp = (dir / "d.bin").string();
  save_dataset(ds, jp, bp);
  Dataset back = load_dataset(jp, bp);
  CHECK(back.train_features == ds.train_features);
  CHECK(back.test_features == ds.test_features);
  CHECK(back.train_labels == ds.train_labels);
  CHECK(back.test_labels == ds.test_labels);
  CHECK(back.num_known == ds.num_known);
  CHECK(back.profile.n_max == ds.profile.n_max);

  // Truncated blob is rejected.
  std::filesystem::resize_file(bp, 10);
  CHECK_THROWS_AS(load_dataset(jp, bp), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("exploration pool draws the requested classes without touching dataset streams") {
  GaussianMixtureConfig cfg;
  cfg.seed = 21;
  cfg.known_classes = 4;
  cfg.open_classes = 3;
  cfg.profile = exp_profile(4, 12, 4.0);
  Dataset ds = generate_gaussian_mixture(cfg);

  PoolConfig pc;
  pc.open_class_ids = {4, 6};
  pc.per_open_class = 5;
  pc.per_known_class = 1;
  pc.seed = 77;
  ExplorationPool pool = generate_gaussian_pool(cfg, pc);
  CHECK(pool.size() == 2 * 5 + 4 * 1);
  int open_count = 0;
  for (int l : pool.hidden_labels) open_count += l >= 4 ? 1 : 0;
  CHECK(open_count == 10);

  // Same dataset regardless of pool generation (streams independent).
  Dataset ds2 = generate_gaussian_mixture(cfg);
  CHECK(ds2.train_features == ds.train_features);

  // Pool samples of an open class cluster near that class's test samples:
  // compare distance to own-class test mean vs another class's test mean.
  std::vector<double> own(ds.feature_size(), 0.0);
  int own_n = 0;
  for (int i = 0; i < ds.test_size(); ++i) {
    if (ds.test_labels[i] == 4) {
      for (int d = 0; d < ds.feature_size(); ++d) own[d] += ds.test_sample(i)[d];
      ++own_n;
    }
  }
  for (auto& v : own) v /= own_n;
  double dist_own = 0;
  for (int d = 0; d < ds.feature_size(); ++d) {
    const double diff = pool.sample(0)[d] - own[d];
    dist_own += diff * diff;
  }
  CHECK(std::sqrt(dist_own) < cfg.mean_radius);  // near its own mean, far means are ~R apart
}
