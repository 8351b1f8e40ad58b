#include "oltr/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace oltr {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config: field '" + path + "': " + what);
}

void reject_unknown(const json& block, const std::string& path,
                    const std::vector<std::string>& known) {
  if (!block.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : block.items()) {
    bool ok = false;
    for (const auto& k : known) ok = ok || k == key;
    if (!ok) throw ConfigError("config: unknown key '" + path + "." + key + "'");
  }
}

template <class V>
void read(const json& block, const std::string& path, const char* key, V& out) {
  if (!block.contains(key)) return;
  try {
    out = block.at(key).get<V>();
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type");
  }
}

void read_profile(const json& block, const std::string& path, LongTailProfile& out) {
  if (!block.contains("profile")) return;
  const json& p = block.at("profile");
  reject_unknown(p, path + ".profile", {"kind", "n_max", "ratio_or_power", "n_min"});
  std::string kind = out.kind == LongTailProfile::Kind::Exp ? "exp" : "pareto";
  read(p, path + ".profile", "kind", kind);
  if (kind == "exp") {
    out.kind = LongTailProfile::Kind::Exp;
  } else if (kind == "pareto") {
    out.kind = LongTailProfile::Kind::Pareto;
  } else {
    fail(path + ".profile.kind", "must be 'exp' or 'pareto'");
  }
  read(p, path + ".profile", "n_max", out.n_max);
  read(p, path + ".profile", "ratio_or_power", out.ratio_or_power);
  read(p, path + ".profile", "n_min", out.n_min);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(root, "config",
                 {"dataset", "model", "objective", "training", "openset", "active"});

  ExperimentConfig cfg;
  cfg.dataset.profile.num_classes = 20;
  cfg.dataset.profile.n_max = 500;
  cfg.dataset.profile.ratio_or_power = 100.0;
  cfg.dataset.profile.n_min = 1;

  if (root.contains("dataset")) {
    const json& b = root.at("dataset");
    reject_unknown(b, "dataset",
                   {"generator", "dim", "side", "known_classes", "open_classes", "profile",
                    "test_per_class", "open_test_per_class", "mean_radius", "noise_sigma", "seed"});
    read(b, "dataset", "generator", cfg.dataset.generator);
    read(b, "dataset", "dim", cfg.dataset.dim);
    read(b, "dataset", "side", cfg.dataset.side);
    read(b, "dataset", "known_classes", cfg.dataset.known_classes);
    read(b, "dataset", "open_classes", cfg.dataset.open_classes);
    read_profile(b, "dataset", cfg.dataset.profile);
    read(b, "dataset", "test_per_class", cfg.dataset.test_per_class);
    read(b, "dataset", "open_test_per_class", cfg.dataset.open_test_per_class);
    read(b, "dataset", "mean_radius", cfg.dataset.mean_radius);
    read(b, "dataset", "noise_sigma", cfg.dataset.noise_sigma);
    read(b, "dataset", "seed", cfg.dataset.seed);
  }
  if (root.contains("model")) {
    const json& b = root.at("model");
    reject_unknown(b, "model",
                   {"backbone", "plain", "hidden_dim", "channels", "feature_dim", "logit_scale",
                    "epsilon"});
    read(b, "model", "backbone", cfg.model.backbone);
    read(b, "model", "plain", cfg.model.plain);
    read(b, "model", "hidden_dim", cfg.model.hidden_dim);
    read(b, "model", "channels", cfg.model.channels);
    read(b, "model", "feature_dim", cfg.model.feature_dim);
    read(b, "model", "logit_scale", cfg.model.logit_scale);
    read(b, "model", "epsilon", cfg.model.epsilon);
  }
  if (root.contains("objective")) {
    const json& b = root.at("objective");
    reject_unknown(b, "objective", {"lambda", "margin"});
    read(b, "objective", "lambda", cfg.objective.lambda);
    read(b, "objective", "margin", cfg.objective.margin);
  }
  if (root.contains("training")) {
    const json& b = root.at("training");
    reject_unknown(b, "training",
                   {"epochs", "warmup_epochs", "classes_per_batch", "samples_per_class",
                    "learning_rate", "momentum", "centroid_rate", "lr_decay", "clip_norm", "seed",
                    "precision", "checkpoint_every"});
    read(b, "training", "epochs", cfg.training.epochs);
    read(b, "training", "warmup_epochs", cfg.training.warmup_epochs);
    read(b, "training", "classes_per_batch", cfg.training.classes_per_batch);
    read(b, "training", "samples_per_class", cfg.training.samples_per_class);
    read(b, "training", "learning_rate", cfg.training.learning_rate);
    read(b, "training", "momentum", cfg.training.momentum);
    read(b, "training", "centroid_rate", cfg.training.centroid_rate);
    read(b, "training", "lr_decay", cfg.training.lr_decay);
    read(b, "training", "clip_norm", cfg.training.clip_norm);
    read(b, "training", "seed", cfg.training.seed);
    read(b, "training", "precision", cfg.training.precision);
    read(b, "training", "checkpoint_every", cfg.training.checkpoint_every);
  }
  if (root.contains("openset")) {
    const json& b = root.at("openset");
    reject_unknown(b, "openset", {"threshold"});
    read(b, "openset", "threshold", cfg.openset.threshold);
  }
  if (root.contains("active")) {
    const json& b = root.at("active");
    reject_unknown(b, "active",
                   {"budget", "temperature", "stages", "pool_open_per_class",
                    "pool_known_per_class", "fine_tune_epochs", "fine_tune_lr", "pool_seed",
                    "selection"});
    read(b, "active", "budget", cfg.active.budget);
    read(b, "active", "temperature", cfg.active.temperature);
    read(b, "active", "stages", cfg.active.stages);
    read(b, "active", "pool_open_per_class", cfg.active.pool_open_per_class);
    read(b, "active", "pool_known_per_class", cfg.active.pool_known_per_class);
    read(b, "active", "fine_tune_epochs", cfg.active.fine_tune_epochs);
    read(b, "active", "fine_tune_lr", cfg.active.fine_tune_lr);
    read(b, "active", "pool_seed", cfg.active.pool_seed);
    read(b, "active", "selection", cfg.active.selection);
  }

  // Cross-field validation.
  if (cfg.dataset.generator != "gaussian" && cfg.dataset.generator != "blobs") {
    fail("dataset.generator", "must be 'gaussian' or 'blobs'");
  }
  if (cfg.model.backbone != "mlp" && cfg.model.backbone != "cnn") {
    fail("model.backbone", "must be 'mlp' or 'cnn'");
  }
  if (cfg.dataset.known_classes < 1) fail("dataset.known_classes", "must be >= 1");
  if (cfg.dataset.open_classes < 1) fail("dataset.open_classes", "must be >= 1");
  if (cfg.objective.lambda < 0) fail("objective.lambda", "must be >= 0");
  if (cfg.objective.margin < 0) fail("objective.margin", "must be >= 0");
  if (cfg.openset.threshold < 0 || cfg.openset.threshold > 1) {
    fail("openset.threshold", "must be in [0, 1]");
  }
  if (cfg.training.classes_per_batch < 1 || cfg.training.classes_per_batch > cfg.dataset.known_classes) {
    fail("training.classes_per_batch", "must be in 1..known_classes");
  }
  if (cfg.training.samples_per_class < 1) fail("training.samples_per_class", "must be >= 1");
  if (cfg.training.epochs < 0 || cfg.training.warmup_epochs < 0) {
    fail("training.epochs", "must be >= 0");
  }
  if (cfg.training.precision != "f32" && cfg.training.precision != "f64") {
    fail("training.precision", "must be 'f32' or 'f64'");
  }
  if (cfg.active.budget < 0 || cfg.active.budget > 1) fail("active.budget", "must be in [0, 1]");
  if (cfg.active.temperature <= 0) fail("active.temperature", "must be positive");
  if (cfg.active.selection != "score" && cfg.active.selection != "random") {
    fail("active.selection", "must be 'score' or 'random'");
  }
  int stage_total = 0;
  for (int z : cfg.active.stages) {
    if (z < 1) fail("active.stages", "stage sizes must be >= 1");
    stage_total += z;
  }
  if (stage_total > cfg.dataset.open_classes) {
    fail("active.stages", "stage sizes exceed the number of open classes");
  }
  if (cfg.model.epsilon <= 0) fail("model.epsilon", "must be positive");
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str());
}

std::string ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["dataset"] = {{"generator", dataset.generator},
                  {"dim", dataset.dim},
                  {"side", dataset.side},
                  {"known_classes", dataset.known_classes},
                  {"open_classes", dataset.open_classes},
                  {"profile",
                   {{"kind", dataset.profile.kind == LongTailProfile::Kind::Exp ? "exp" : "pareto"},
                    {"n_max", dataset.profile.n_max},
                    {"ratio_or_power", dataset.profile.ratio_or_power},
                    {"n_min", dataset.profile.n_min}}},
                  {"test_per_class", dataset.test_per_class},
                  {"open_test_per_class", dataset.open_test_per_class},
                  {"mean_radius", dataset.mean_radius},
                  {"noise_sigma", dataset.noise_sigma},
                  {"seed", dataset.seed}};
  j["model"] = {{"backbone", model.backbone},   {"plain", model.plain},
                {"hidden_dim", model.hidden_dim}, {"channels", model.channels},
                {"feature_dim", model.feature_dim}, {"logit_scale", model.logit_scale},
                {"epsilon", model.epsilon}};
  j["objective"] = {{"lambda", objective.lambda}, {"margin", objective.margin}};
  j["training"] = {{"epochs", training.epochs},
                   {"warmup_epochs", training.warmup_epochs},
                   {"classes_per_batch", training.classes_per_batch},
                   {"samples_per_class", training.samples_per_class},
                   {"learning_rate", training.learning_rate},
                   {"momentum", training.momentum},
                   {"centroid_rate", training.centroid_rate},
                   {"lr_decay", training.lr_decay},
                   {"clip_norm", training.clip_norm},
                   {"seed", training.seed},
                   {"precision", training.precision},
                   {"checkpoint_every", training.checkpoint_every}};
  j["openset"] = {{"threshold", openset.threshold}};
  j["active"] = {{"budget", active.budget},
                 {"temperature", active.temperature},
                 {"stages", active.stages},
                 {"pool_open_per_class", active.pool_open_per_class},
                 {"pool_known_per_class", active.pool_known_per_class},
                 {"fine_tune_epochs", active.fine_tune_epochs},
                 {"fine_tune_lr", active.fine_tune_lr},
                 {"pool_seed", active.pool_seed},
                 {"selection", active.selection}};
  return j.dump(2);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << hash;
  return os.str();
}

std::string ExperimentConfig::config_hash() const { return fnv1a_hex(to_json()); }

GaussianMixtureConfig ExperimentConfig::gaussian_config() const {
  GaussianMixtureConfig g;
  g.seed = dataset.seed;
  g.dim = dataset.dim;
  g.known_classes = dataset.known_classes;
  g.open_classes = dataset.open_classes;
  g.profile = dataset.profile;
  g.profile.num_classes = dataset.known_classes;
  g.test_per_class = dataset.test_per_class;
  g.open_test_per_class = dataset.open_test_per_class;
  g.mean_radius = dataset.mean_radius;
  g.noise_sigma = dataset.noise_sigma;
  return g;
}

BlobImageConfig ExperimentConfig::blob_config() const {
  BlobImageConfig b;
  b.seed = dataset.seed;
  b.side = dataset.side;
  b.known_classes = dataset.known_classes;
  b.open_classes = dataset.open_classes;
  b.profile = dataset.profile;
  b.profile.num_classes = dataset.known_classes;
  b.test_per_class = dataset.test_per_class;
  b.open_test_per_class = dataset.open_test_per_class;
  return b;
}

ModelSettings ExperimentConfig::model_settings() const {
  ModelSettings ms;
  ms.backbone = model.backbone == "cnn" ? ModelSettings::BackboneKind::Cnn
                                        : ModelSettings::BackboneKind::Mlp;
  ms.plain = model.plain;
  ms.input_dim = dataset.dim;
  ms.hidden_dim = model.hidden_dim;
  ms.side = dataset.side;
  ms.in_channels = 1;
  ms.channels = model.channels;
  ms.feature_dim = model.feature_dim;
  ms.logit_scale = model.logit_scale;
  ms.epsilon = model.epsilon;
  return ms;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig tc;
  tc.epochs = training.epochs;
  tc.warmup_epochs = training.warmup_epochs;
  tc.classes_per_batch = training.classes_per_batch;
  tc.samples_per_class = training.samples_per_class;
  tc.learning_rate = training.learning_rate;
  tc.momentum = training.momentum;
  tc.centroid_rate = training.centroid_rate;
  tc.lr_decay = training.lr_decay;
  tc.clip_norm = training.clip_norm;
  tc.seed = training.seed;
  return tc;
}

ObjectiveConfig ExperimentConfig::objective_config() const {
  ObjectiveConfig oc;
  oc.lambda = objective.lambda;
  oc.margin = objective.margin;
  return oc;
}

FineTuneConfig ExperimentConfig::fine_tune_config() const {
  FineTuneConfig ft;
  ft.epochs = active.fine_tune_epochs;
  ft.learning_rate = active.fine_tune_lr;
  return ft;
}

SelectionPolicy ExperimentConfig::selection_policy() const {
  return active.selection == "random" ? SelectionPolicy::Random : SelectionPolicy::Score;
}

Dataset generate_dataset(const ExperimentConfig& config) {
  if (config.dataset.generator == "blobs") return generate_blob_images(config.blob_config());
  return generate_gaussian_mixture(config.gaussian_config());
}

std::vector<ExplorationPool> generate_stage_pools(const ExperimentConfig& config) {
  std::vector<ExplorationPool> pools;
  int next_open = config.dataset.known_classes;
  for (std::size_t s = 0; s < config.active.stages.size(); ++s) {
    PoolConfig pc;
    for (int z = 0; z < config.active.stages[s]; ++z) pc.open_class_ids.push_back(next_open++);
    pc.per_open_class = config.active.pool_open_per_class;
    pc.per_known_class = config.active.pool_known_per_class;
    pc.seed = config.active.pool_seed + s;
    if (config.dataset.generator == "blobs") {
      pools.push_back(generate_blob_pool(config.blob_config(), pc));
    } else {
      pools.push_back(generate_gaussian_pool(config.gaussian_config(), pc));
    }
  }
  return pools;
}

}  // namespace oltr
