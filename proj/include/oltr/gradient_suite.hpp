#pragma once

#include <string>
#include <vector>

#include "oltr/gradcheck.hpp"

namespace oltr {

struct GradientSuiteEntry {
  std::string name;
  int trials = 0;
  double max_rel_err = 0.0;
};

struct GradientSuiteResult {
  std::vector<GradientSuiteEntry> checks;
  double max_rel_err = 0.0;
  bool passed(double tolerance = 1e-4) const { return max_rel_err <= tolerance; }
};

// Randomized central-finite-difference checks for every differentiable
// primitive, the composite ops (reachability, squash, cosine logits, cross
// entropy, margin loss, attention), and the full pipeline
// backbone -> meta-embedding -> squash/cosine -> combined loss.
// Runs at 64-bit precision.
GradientSuiteResult run_gradient_suite(int trials_per_check = 100, std::uint64_t seed = 20260809);

}  // namespace oltr
