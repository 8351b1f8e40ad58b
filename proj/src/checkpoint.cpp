#include "oltr/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

namespace oltr {

namespace {

using nlohmann::ordered_json;

template <std::floating_point T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32-le" : "f64-le";
}

template <std::floating_point T>
struct TensorTable {
  ordered_json entries = ordered_json::array();
  std::ofstream blob;
  std::size_t offset = 0;

  void put(const std::string& name, std::vector<int> shape, const std::vector<T>& values) {
    const std::size_t bytes = values.size() * sizeof(T);
    ordered_json e;
    e["name"] = name;
    e["shape"] = shape;
    e["dtype"] = dtype_name<T>();
    e["offset"] = offset;
    e["bytes"] = bytes;
    entries.push_back(e);
    blob.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(bytes));
    offset += bytes;
  }
};

// Every named tensor a checkpoint carries, in a fixed order.
template <std::floating_point T, class Fn>
void for_each_tensor(TrainState<T>& state, Fn&& fn) {
  for (auto& [name, p] : state.model.named_parameters()) {
    fn(name, p.shape(), p.values());
  }
  for (std::size_t i = 0; i < state.optimizer.velocity.size(); ++i) {
    fn("optimizer.velocity." + std::to_string(i),
       std::vector<int>{static_cast<int>(state.optimizer.velocity[i].size())},
       state.optimizer.velocity[i]);
  }
  if (!state.model.bank.empty()) {
    fn("bank.centroids",
       std::vector<int>{state.model.bank.num_classes(), state.model.bank.dim()},
       state.model.bank.raw());
  }
}

}  // namespace

template <std::floating_point T>
void save_checkpoint(const TrainState<T>& state, const ExperimentConfig& config,
                     const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string manifest_path = dir + "/manifest.json";
  const std::string blob_path = dir + "/tensors.bin";

  TensorTable<T> table;
  table.blob.open(blob_path, std::ios::binary);
  if (!table.blob.good()) throw TensorError("checkpoint: cannot write " + blob_path);
  auto& mutable_state = const_cast<TrainState<T>&>(state);  // read-only traversal
  for_each_tensor(mutable_state,
                  [&](const std::string& name, std::vector<int> shape, std::vector<T>& values) {
                    table.put(name, std::move(shape), values);
                  });
  table.blob.close();

  ordered_json manifest;
  manifest["format"] = "oltr-checkpoint-v1";
  manifest["precision"] = sizeof(T) == 4 ? "f32" : "f64";
  manifest["config_hash"] = config.config_hash();
  manifest["epoch"] = state.epoch;
  manifest["warmed_up"] = state.warmed_up;
  manifest["memory_ready"] = state.model.memory_ready;
  manifest["num_classes"] = state.model.num_classes();
  manifest["bank_classes"] = state.model.bank.num_classes();
  manifest["bank_dim"] = state.model.bank.dim();
  manifest["rng"] = state.rng.serialize();
  manifest["optimizer"] = {{"learning_rate", state.optimizer.learning_rate},
                           {"momentum", state.optimizer.momentum}};
  manifest["defaults"] = {{"lambda", config.objective.lambda},
                          {"margin", config.objective.margin},
                          {"threshold", config.openset.threshold}};
  manifest["tensors"] = table.entries;

  std::ofstream mf(manifest_path);
  if (!mf.good()) throw TensorError("checkpoint: cannot write " + manifest_path);
  mf << manifest.dump(2) << "\n";
}

template <std::floating_point T>
TrainState<T> load_checkpoint(const std::string& dir, const ExperimentConfig& config) {
  const std::string manifest_path = dir + "/manifest.json";
  const std::string blob_path = dir + "/tensors.bin";
  std::ifstream mf(manifest_path);
  if (!mf.good()) throw TensorError("checkpoint: cannot open " + manifest_path);
  ordered_json manifest = ordered_json::parse(mf);
  if (manifest.value("format", "") != "oltr-checkpoint-v1") {
    throw TensorError("checkpoint: unrecognized manifest format in " + manifest_path);
  }
  const std::string expected_precision = sizeof(T) == 4 ? "f32" : "f64";
  if (manifest.value("precision", "") != expected_precision) {
    throw TensorError("checkpoint: precision mismatch, manifest has '" +
                      manifest.value("precision", "") + "', loader expects '" +
                      expected_precision + "'");
  }
  if (manifest.value("config_hash", "") != config.config_hash()) {
    std::cerr << "warning: checkpoint config hash " << manifest.value("config_hash", "")
              << " does not match current config " << config.config_hash()
              << "; loading anyway\n";
  }

  TrainState<T> state;
  Rng seed_rng(config.training.seed);
  const int num_classes = manifest.at("num_classes").get<int>();
  state.model = OltrModel<T>::init(config.model_settings(), num_classes, seed_rng);
  state.optimizer.learning_rate = manifest.at("optimizer").at("learning_rate").get<double>();
  state.optimizer.momentum = manifest.at("optimizer").at("momentum").get<double>();
  state.optimizer.attach(state.model.parameters());
  state.epoch = manifest.at("epoch").get<int>();
  state.warmed_up = manifest.at("warmed_up").get<bool>();
  state.model.memory_ready = manifest.at("memory_ready").get<bool>();
  state.rng = Rng::deserialize(manifest.at("rng").get<std::string>());
  const int bank_classes = manifest.at("bank_classes").get<int>();
  const int bank_dim = manifest.at("bank_dim").get<int>();
  if (bank_classes > 0) state.model.bank = MemoryBank<T>(bank_classes, bank_dim);

  std::ifstream blob(blob_path, std::ios::binary | std::ios::ate);
  if (!blob.good()) throw TensorError("checkpoint: cannot open " + blob_path);
  const std::size_t blob_size = static_cast<std::size_t>(blob.tellg());

  // Index manifest entries by name.
  std::map<std::string, ordered_json> entries;
  for (const auto& e : manifest.at("tensors")) {
    entries[e.at("name").get<std::string>()] = e;
  }

  auto load_into = [&](const std::string& name, std::vector<int> shape, std::vector<T>& values) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      throw TensorError("checkpoint: manifest has no tensor '" + name + "'");
    }
    const auto& e = it->second;
    if (e.at("shape").get<std::vector<int>>() != shape) {
      throw TensorError("checkpoint: tensor '" + name + "' shape mismatch");
    }
    if (e.at("dtype").get<std::string>() != dtype_name<T>()) {
      throw TensorError("checkpoint: tensor '" + name + "' dtype mismatch");
    }
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t bytes = e.at("bytes").get<std::size_t>();
    if (bytes != values.size() * sizeof(T)) {
      throw TensorError("checkpoint: tensor '" + name + "' byte length mismatch");
    }
    if (offset + bytes > blob_size) {
      throw TensorError("checkpoint: blob truncated at tensor '" + name + "'");
    }
    blob.seekg(static_cast<std::streamoff>(offset));
    blob.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!blob.good()) throw TensorError("checkpoint: blob read failed at tensor '" + name + "'");
    entries.erase(it);
  };
  for_each_tensor(state, load_into);
  return state;
}

template void save_checkpoint<float>(const TrainState<float>&, const ExperimentConfig&,
                                     const std::string&);
template void save_checkpoint<double>(const TrainState<double>&, const ExperimentConfig&,
                                      const std::string&);
template TrainState<float> load_checkpoint<float>(const std::string&, const ExperimentConfig&);
template TrainState<double> load_checkpoint<double>(const std::string&, const ExperimentConfig&);

}  // namespace oltr
