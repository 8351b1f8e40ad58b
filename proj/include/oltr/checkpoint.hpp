#pragma once

#include <string>

#include "oltr/config.hpp"
#include "oltr/train.hpp"

namespace oltr {

// Checkpoint directory layout: manifest.json (config hash, epoch, rng state,
// tensor table with shapes/offsets/byte lengths) plus tensors.bin holding all
// named tensors back to back, little-endian, in the training precision.
// A round-trip restores training to bit-identical continuation.
template <std::floating_point T>
void save_checkpoint(const TrainState<T>& state, const ExperimentConfig& config,
                     const std::string& dir);

// Recreates a state from config + manifest. A config-hash mismatch prints a
// warning and proceeds; tensor shape or byte-length mismatches are errors
// naming the tensor.
template <std::floating_point T>
TrainState<T> load_checkpoint(const std::string& dir, const ExperimentConfig& config);

}  // namespace oltr
