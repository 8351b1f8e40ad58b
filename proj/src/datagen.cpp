#include "oltr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace oltr {

namespace {

using nlohmann::json;

void check(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

std::string profile_kind_name(LongTailProfile::Kind kind) {
  return kind == LongTailProfile::Kind::Exp ? "exp" : "pareto";
}

LongTailProfile::Kind profile_kind_from(const std::string& name) {
  if (name == "exp") return LongTailProfile::Kind::Exp;
  if (name == "pareto") return LongTailProfile::Kind::Pareto;
  throw std::invalid_argument("profile: unknown kind '" + name + "'");
}

// Mean vectors drawn uniformly on the radius-R sphere, one per class (known
// first, then open). Replaying this function with the same seed is what keeps
// exploration pools consistent with the dataset they extend.
std::vector<std::vector<double>> draw_class_means(std::uint64_t seed, int total_classes, int dim,
                                                  double radius) {
  Rng master(seed);
  Rng mean_rng = master.fork();
  std::vector<std::vector<double>> means(total_classes, std::vector<double>(dim));
  for (auto& mean : means) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : mean) {
        v = mean_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    for (auto& v : mean) v = v / norm * radius;
  }
  return means;
}

void append_gaussian_sample(std::vector<float>& out, const std::vector<double>& mean, double sigma,
                            Rng& rng) {
  for (double m : mean) out.push_back(static_cast<float>(m + sigma * rng.normal()));
}

// Per-class blob signature: center, stripe orientation, stripe frequency.
struct BlobClass {
  double cx, cy, theta, freq, radius;
};

std::vector<BlobClass> draw_blob_classes(std::uint64_t seed, int total_classes, int side) {
  Rng master(seed);
  Rng class_rng = master.fork();
  std::vector<BlobClass> classes(total_classes);
  const double margin = side / 4.0;
  for (auto& c : classes) {
    c.cx = class_rng.uniform(margin, side - margin);
    c.cy = class_rng.uniform(margin, side - margin);
    c.theta = class_rng.uniform(0.0, 3.14159265358979323846);
    c.freq = class_rng.uniform(0.5, 1.5) * 2.0 * 3.14159265358979323846 / side;
    c.radius = class_rng.uniform(side / 6.0, side / 3.0);
  }
  return classes;
}

void append_blob_sample(std::vector<float>& out, const BlobClass& c, int side, Rng& rng) {
  // Integer jitter in [-2, 2] on each axis keeps samples of a class aligned.
  const double jx = static_cast<double>(rng.below(5)) - 2.0;
  const double jy = static_cast<double>(rng.below(5)) - 2.0;
  const double cx = c.cx + jx, cy = c.cy + jy;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const double dx = j - cx, dy = i - cy;
      const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * c.radius * c.radius));
      const double along = std::cos(c.theta) * dx + std::sin(c.theta) * dy;
      const double stripes = 0.5 * (1.0 + std::sin(c.freq * along * side / 4.0));
      const double noise = rng.uniform(0.0, 0.05);
      const double v = blob * (0.55 + 0.45 * stripes) + noise;
      out.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
    }
  }
}

}  // namespace

std::int64_t Dataset::feature_size() const {
  std::int64_t n = 1;
  for (int extent : feature_shape) n *= extent;
  return n;
}

const float* Dataset::train_sample(int i) const {
  return train_features.data() + static_cast<std::size_t>(i) * feature_size();
}

const float* Dataset::test_sample(int i) const {
  return test_features.data() + static_cast<std::size_t>(i) * feature_size();
}

std::vector<int> make_profile(const LongTailProfile& profile) {
  check(profile.num_classes >= 2, "profile: num_classes must be >= 2");
  check(profile.n_min >= 1 && profile.n_max >= profile.n_min,
        "profile: need n_max >= n_min >= 1");
  if (profile.kind == LongTailProfile::Kind::Exp) {
    check(profile.ratio_or_power >= 1.0, "profile: imbalance ratio must be >= 1");
  } else {
    check(profile.ratio_or_power >= 0.0, "profile: pareto power must be >= 0");
  }
  std::vector<int> sizes(profile.num_classes);
  for (int i = 1; i <= profile.num_classes; ++i) {
    double raw = 0.0;
    if (profile.kind == LongTailProfile::Kind::Exp) {
      const double t = static_cast<double>(i - 1) / (profile.num_classes - 1);
      raw = profile.n_max * std::pow(profile.ratio_or_power, -t);
    } else {
      raw = profile.n_max * std::pow(static_cast<double>(i), -profile.ratio_or_power);
    }
    const int rounded = static_cast<int>(std::llround(raw));
    sizes[i - 1] = std::clamp(rounded, profile.n_min, profile.n_max);
  }
  return sizes;
}

Dataset generate_gaussian_mixture(const GaussianMixtureConfig& config) {
  check(config.known_classes >= 1 && config.open_classes >= 1, "gaussian: need K >= 1 and Z >= 1");
  check(config.dim >= 2, "gaussian: dim must be >= 2");
  check(config.test_per_class >= 1 && config.open_test_per_class >= 1,
        "gaussian: test counts must be >= 1");
  LongTailProfile profile = config.profile;
  profile.num_classes = config.known_classes;
  const std::vector<int> counts = make_profile(profile);

  const int total = config.known_classes + config.open_classes;
  const auto means = draw_class_means(config.seed, total, config.dim, config.mean_radius);

  Dataset ds;
  ds.feature_shape = {config.dim};
  ds.num_known = config.known_classes;
  ds.num_open = config.open_classes;
  ds.train_counts = counts;
  ds.generator = "gaussian";
  ds.seed = config.seed;
  ds.profile = profile;

  Rng master(config.seed);
  (void)master.fork();  // means stream
  Rng train_rng = master.fork();
  Rng test_rng = master.fork();

  for (int c = 0; c < config.known_classes; ++c) {
    for (int s = 0; s < counts[c]; ++s) {
      append_gaussian_sample(ds.train_features, means[c], config.noise_sigma, train_rng);
      ds.train_labels.push_back(c);
    }
  }
  for (int c = 0; c < config.known_classes; ++c) {
    for (int s = 0; s < config.test_per_class; ++s) {
      append_gaussian_sample(ds.test_features, means[c], config.noise_sigma, test_rng);
      ds.test_labels.push_back(c);
    }
  }
  for (int z = 0; z < config.open_classes; ++z) {
    for (int s = 0; s < config.open_test_per_class; ++s) {
      append_gaussian_sample(ds.test_features, means[config.known_classes + z], config.noise_sigma,
                             test_rng);
      ds.test_labels.push_back(config.known_classes + z);
    }
  }
  return ds;
}

Dataset generate_blob_images(const BlobImageConfig& config) {
  check(config.side >= 8, "blobs: side must be >= 8");
  check(config.known_classes >= 1 && config.open_classes >= 1, "blobs: need K >= 1 and Z >= 1");
  LongTailProfile profile = config.profile;
  profile.num_classes = config.known_classes;
  const std::vector<int> counts = make_profile(profile);

  const int total = config.known_classes + config.open_classes;
  const auto classes = draw_blob_classes(config.seed, total, config.side);

  Dataset ds;
  ds.feature_shape = {1, config.side, config.side};
  ds.num_known = config.known_classes;
  ds.num_open = config.open_classes;
  ds.train_counts = counts;
  ds.generator = "blobs";
  ds.seed = config.seed;
  ds.profile = profile;

  Rng master(config.seed);
  (void)master.fork();
  Rng train_rng = master.fork();
  Rng test_rng = master.fork();

  for (int c = 0; c < config.known_classes; ++c) {
    for (int s = 0; s < counts[c]; ++s) {
      append_blob_sample(ds.train_features, classes[c], config.side, train_rng);
      ds.train_labels.push_back(c);
    }
  }
  for (int c = 0; c < config.known_classes; ++c) {
    for (int s = 0; s < config.test_per_class; ++s) {
      append_blob_sample(ds.test_features, classes[c], config.side, test_rng);
      ds.test_labels.push_back(c);
    }
  }
  for (int z = 0; z < config.open_classes; ++z) {
    for (int s = 0; s < config.open_test_per_class; ++s) {
      append_blob_sample(ds.test_features, classes[config.known_classes + z], config.side, test_rng);
      ds.test_labels.push_back(config.known_classes + z);
    }
  }
  return ds;
}

ExplorationPool generate_gaussian_pool(const GaussianMixtureConfig& base, const PoolConfig& pool) {
  const int total = base.known_classes + base.open_classes;
  const auto means = draw_class_means(base.seed, total, base.dim, base.mean_radius);
  ExplorationPool out;
  out.feature_size = base.dim;
  Rng rng(pool.seed);
  for (int id : pool.open_class_ids) {
    check(id >= base.known_classes && id < total, "pool: open class id out of range");
    for (int s = 0; s < pool.per_open_class; ++s) {
      append_gaussian_sample(out.features, means[id], base.noise_sigma, rng);
      out.hidden_labels.push_back(id);
    }
  }
  for (int c = 0; c < base.known_classes && pool.per_known_class > 0; ++c) {
    for (int s = 0; s < pool.per_known_class; ++s) {
      append_gaussian_sample(out.features, means[c], base.noise_sigma, rng);
      out.hidden_labels.push_back(c);
    }
  }
  return out;
}

ExplorationPool generate_blob_pool(const BlobImageConfig& base, const PoolConfig& pool) {
  const int total = base.known_classes + base.open_classes;
  const auto classes = draw_blob_classes(base.seed, total, base.side);
  ExplorationPool out;
  out.feature_size = static_cast<std::int64_t>(base.side) * base.side;
  Rng rng(pool.seed);
  for (int id : pool.open_class_ids) {
    check(id >= base.known_classes && id < total, "pool: open class id out of range");
    for (int s = 0; s < pool.per_open_class; ++s) {
      append_blob_sample(out.features, classes[id], base.side, rng);
      out.hidden_labels.push_back(id);
    }
  }
  for (int c = 0; c < base.known_classes && pool.per_known_class > 0; ++c) {
    for (int s = 0; s < pool.per_known_class; ++s) {
      append_blob_sample(out.features, classes[c], base.side, rng);
      out.hidden_labels.push_back(c);
    }
  }
  return out;
}

ShotSplit::Bucket ShotSplit::bucket_of(int label) const {
  for (int l : many)
    if (l == label) return Bucket::Many;
  for (int l : medium)
    if (l == label) return Bucket::Medium;
  for (int l : few)
    if (l == label) return Bucket::Few;
  throw std::invalid_argument("shot split: label " + std::to_string(label) + " not in any bucket");
}

ShotSplit split_by_shot(const std::vector<int>& train_counts) {
  ShotSplit split;
  for (std::size_t label = 0; label < train_counts.size(); ++label) {
    check(train_counts[label] >= 1, "shot split: counts must be >= 1");
    const int count = train_counts[label];
    if (count > 100) {
      split.many.push_back(static_cast<int>(label));
    } else if (count >= 20) {
      split.medium.push_back(static_cast<int>(label));
    } else {
      split.few.push_back(static_cast<int>(label));
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// dataset files
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& dataset, const std::string& json_path,
                  const std::string& blob_path) {
  json header;
  header["format"] = "oltr-dataset-v1";
  header["generator"] = dataset.generator;
  header["seed"] = dataset.seed;
  header["profile"] = {{"kind", profile_kind_name(dataset.profile.kind)},
                       {"num_classes", dataset.profile.num_classes},
                       {"n_max", dataset.profile.n_max},
                       {"ratio_or_power", dataset.profile.ratio_or_power},
                       {"n_min", dataset.profile.n_min}};
  header["feature_shape"] = dataset.feature_shape;
  header["num_known"] = dataset.num_known;
  header["num_open"] = dataset.num_open;
  header["train_counts"] = dataset.train_counts;
  header["train_labels"] = dataset.train_labels;
  header["test_labels"] = dataset.test_labels;
  header["feature_dtype"] = "f32-le";

  std::ofstream jf(json_path);
  check(jf.good(), "save_dataset: cannot open " + json_path);
  jf << header.dump(2) << "\n";

  std::ofstream bf(blob_path, std::ios::binary);
  check(bf.good(), "save_dataset: cannot open " + blob_path);
  bf.write(reinterpret_cast<const char*>(dataset.train_features.data()),
           static_cast<std::streamsize>(dataset.train_features.size() * sizeof(float)));
  bf.write(reinterpret_cast<const char*>(dataset.test_features.data()),
           static_cast<std::streamsize>(dataset.test_features.size() * sizeof(float)));
}

Dataset load_dataset(const std::string& json_path, const std::string& blob_path) {
  std::ifstream jf(json_path);
  check(jf.good(), "load_dataset: cannot open " + json_path);
  json header = json::parse(jf);
  check(header.value("format", "") == "oltr-dataset-v1",
        "load_dataset: unrecognized header format in " + json_path);

  Dataset ds;
  ds.generator = header.at("generator").get<std::string>();
  ds.seed = header.at("seed").get<std::uint64_t>();
  const auto& p = header.at("profile");
  ds.profile.kind = profile_kind_from(p.at("kind").get<std::string>());
  ds.profile.num_classes = p.at("num_classes").get<int>();
  ds.profile.n_max = p.at("n_max").get<int>();
  ds.profile.ratio_or_power = p.at("ratio_or_power").get<double>();
  ds.profile.n_min = p.at("n_min").get<int>();
  ds.feature_shape = header.at("feature_shape").get<std::vector<int>>();
  ds.num_known = header.at("num_known").get<int>();
  ds.num_open = header.at("num_open").get<int>();
  ds.train_counts = header.at("train_counts").get<std::vector<int>>();
  ds.train_labels = header.at("train_labels").get<std::vector<int>>();
  ds.test_labels = header.at("test_labels").get<std::vector<int>>();

  const std::size_t fsize = static_cast<std::size_t>(ds.feature_size());
  const std::size_t n_train = ds.train_labels.size() * fsize;
  const std::size_t n_test = ds.test_labels.size() * fsize;

  std::ifstream bf(blob_path, std::ios::binary | std::ios::ate);
  check(bf.good(), "load_dataset: cannot open " + blob_path);
  const std::size_t bytes = static_cast<std::size_t>(bf.tellg());
  check(bytes == (n_train + n_test) * sizeof(float),
        "load_dataset: blob size " + std::to_string(bytes) + " does not match header (" +
            std::to_string((n_train + n_test) * sizeof(float)) + " expected)");
  bf.seekg(0);
  ds.train_features.resize(n_train);
  ds.test_features.resize(n_test);
  bf.read(reinterpret_cast<char*>(ds.train_features.data()),
          static_cast<std::streamsize>(n_train * sizeof(float)));
  bf.read(reinterpret_cast<char*>(ds.test_features.data()),
          static_cast<std::streamsize>(n_test * sizeof(float)));
  check(bf.good(), "load_dataset: truncated blob " + blob_path);
  return ds;
}

}  // namespace oltr
